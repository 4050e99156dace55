import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqgp import config as cfgmod
from seqgp import io
from seqgp.errors import ConfigError


@pytest.mark.parametrize("dtype", ["f8", "f4"])
def test_matrix_round_trip(tmp_path, dtype):
    a = np.random.default_rng(0).normal(size=(7, 3))
    io.write_matrix(tmp_path / "a.bin", a, dtype)
    assert (tmp_path / "a.bin").stat().st_size == 32 + a.size * np.dtype(dtype).itemsize
    b = io.read_matrix(tmp_path / "a.bin")
    np.testing.assert_array_equal(b, a.astype(dtype))
    np.testing.assert_array_equal(io.read_matrix(tmp_path / "a.bin", mmap=True), b)


def test_vector_stored_as_column(tmp_path):
    io.write_matrix(tmp_path / "v.bin", np.arange(4.0))
    assert io.read_matrix(tmp_path / "v.bin").shape == (4, 1)


def test_header_validation(tmp_path):
    p = tmp_path / "a.bin"
    io.write_matrix(p, np.ones((2, 2)))
    raw = p.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    (tmp_path / "hdr.bin").write_bytes(raw[:10])
    for name in ("magic.bin", "short.bin", "hdr.bin"):
        with pytest.raises(ValueError):
            io.read_matrix(tmp_path / name)


def test_csv_float_round_trip(tmp_path):
    vals = [0.1, 1 / 3, 2139.1, -1e-300]
    io.write_csv(tmp_path / "x.csv", ["i", "v"], enumerate(vals))
    rows = io.read_csv(tmp_path / "x.csv")
    assert [float(r["v"]) for r in rows] == vals


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write_text(tmp_path / "f.txt", "a")
    io.atomic_write_text(tmp_path / "f.txt", "b")
    assert (tmp_path / "f.txt").read_text() == "b"
    assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]


_keys = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)
_values = st.one_of(st.integers(-10**6, 10**6), st.floats(allow_nan=False, allow_infinity=False),
                    st.booleans(), st.none(), st.text("abc xyz", max_size=6),
                    st.lists(st.integers(0, 100), max_size=4))


@settings(max_examples=60)
@given(st.dictionaries(_keys, st.dictionaries(_keys, _values, max_size=5), max_size=4))
def test_config_round_trip(cfg):
    once = cfgmod.parse_text(cfgmod.dumps(cfg))
    assert once == cfg
    assert cfgmod.parse_text(cfgmod.dumps(once)) == once


def test_ini_and_json_agree():
    ini = '[prior]\nfamily = "matern32"\nsigma0 = 2.5\n[grid]\nshape = [3, 4]\nname = plain text\n'
    js = '{"prior": {"family": "matern32", "sigma0": 2.5}, "grid": {"shape": [3, 4], "name": "plain text"}}'
    assert cfgmod.parse_text(ini) == cfgmod.parse_text(js)


def test_merge_rejects_unknown():
    with pytest.raises(ConfigError):
        cfgmod.merge(cfgmod.FIT_DEFAULTS, {"bogus": {}})
    with pytest.raises(ConfigError):
        cfgmod.merge(cfgmod.FIT_DEFAULTS, {"fit": {"bogus": 1}})
    merged = cfgmod.merge(cfgmod.FIT_DEFAULTS, {"fit": {"budget": 10}})
    assert merged["fit"]["budget"] == 10 and cfgmod.FIT_DEFAULTS["fit"]["budget"] == 500


def test_number_validation():
    cfg = {"s": {"a": 0, "b": 1.5, "c": True, "d": "x"}}
    assert cfgmod.number(cfg, "s", "b") == 1.5
    for key, kw in (("a", {"positive": True}), ("b", {"integer": True}), ("c", {}), ("d", {})):
        with pytest.raises(ConfigError):
            cfgmod.number(cfg, "s", key, **kw)
