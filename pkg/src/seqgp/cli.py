"""Command-line entry point: ``seqgp <command> --config ... --out ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 memory budget violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import io
from .config import ConfigError, number, require
from .design import (CampaignState, StepRecord, limiting_distribution, new_campaign,
                     run_campaign, synthetic_volcano)
from .errors import MemoryBudgetError, NumericalError, SeqGPError
from .explicit import DataStage
from .grid import build_grid, plan_chunks
from .hyper import fit
from .implicit import ImplicitPosterior, explicit_storage_bytes, implicit_storage_bytes
from .kernels import DEFAULT_MEMORY_BUDGET, Family, Kernel, PriorModel, check_budget, covmul_bytes
from .operators import dft_frequencies, dft_operator, pointwise_operator
from .rng import stream
from .sampling import residual_update, sample_prior, volume_distribution

log = logging.getLogger("seqgp")

VERSION = "0.1.0"


# --- run directory -------------------------------------------------------------


class Run:
    """Run directory with a manifest that is written before anything else."""

    def __init__(self, out: Path, command: str, args, cfg: dict):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "version": VERSION,
            "seed": args.seed,
            "threads": args.threads,
            "memory_budget": args.memory_budget,
            "config": cfg,
            "status": "running",
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "stage_log": [],
            "storage": {},
            "outputs": [],
        }
        self.save()

    def save(self) -> None:
        io.atomic_write_text(self.out / "manifest.json", json.dumps(self.manifest, indent=2) + "\n")

    def output(self, name: str) -> Path:
        if name not in self.manifest["outputs"]:
            self.manifest["outputs"].append(name)
        return self.out / name

    def log_stage(self, label: str, kind: str, p: int, tau2: float) -> None:
        self.manifest["stage_log"].append(
            {"label": label, "operator": kind, "p": p, "tau2": tau2,
             "time": time.strftime("%Y-%m-%dT%H:%M:%S")})

    def finish(self, **extra) -> None:
        self.manifest.update(extra)
        self.manifest["status"] = "complete"
        self.manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        self.save()


def _prior(cfg: dict) -> PriorModel:
    sec = cfg["prior"]
    try:
        family = Family.parse(sec["family"])
    except ValueError as exc:
        raise ConfigError(f"[prior] {exc}") from None
    return PriorModel(Kernel(family, number(cfg, "prior", "sigma0", positive=True),
                             number(cfg, "prior", "lambda0", positive=True)),
                      number(cfg, "prior", "m0"))


def _grid(cfg: dict, dim: int | None = None):
    sec = cfg["grid"]
    shape, spacing = sec["shape"], sec["spacing"]
    require(isinstance(shape, list) and isinstance(spacing, list) and len(shape) == len(spacing),
            "[grid] shape and spacing must be lists of equal length")
    require(dim is None or len(shape) == dim, f"[grid] needs {dim} axes")
    try:
        return build_grid(len(shape), shape, spacing)
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None


def _chunks(cfg, grid):
    return plan_chunks(grid, number(cfg, "run", "chunk_size", integer=True, minimum=1))


def _dense_budget(m: int, budget: int) -> None:
    # dense prior factorization: covariance, factor and a temporary
    need = 3 * m * m * 8
    if budget is not None and need > budget:
        raise MemoryBudgetError(f"exact sampling on {m} points needs {need} bytes, budget is {budget}")


# --- fourier-demo ----------------------------------------------------------------


def farthest_point_order(points: np.ndarray, n: int) -> list[int]:
    """Greedy maximin design starting at the point nearest the centroid."""
    centre = points.mean(axis=0)
    first = int(np.argmin(np.linalg.norm(points - centre, axis=1)))
    order = [first]
    dmin = np.linalg.norm(points - points[first], axis=1)
    while len(order) < n:
        nxt = int(np.argmax(dmin))
        order.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(points - points[nxt], axis=1))
    return order


def fourier_plan(M: int, n_max: int, chunk_size: int, budget) -> dict:
    """Memory plan for the Fourier demo, computed without allocating anything grid-sized."""
    m = M * M
    rows = 2 * n_max
    plan = {
        "M": M,
        "m": m,
        "chunk_size": chunk_size,
        "n_chunks": -(-m // chunk_size),
        "explicit_bytes_f32": explicit_storage_bytes(m, 4),
        "explicit_bytes_f64": explicit_storage_bytes(m, 8),
        "implicit_bytes_fourier_f64": implicit_storage_bytes(m, [rows], 8),
        "implicit_bytes_pointwise_f64": implicit_storage_bytes(m, [n_max], 8),
        "covmul_working_bytes": covmul_bytes(m, rows, chunk_size),
        "memory_budget": budget,
    }
    check_budget(m, rows, chunk_size, budget)
    return plan


def cmd_fourier_demo(args, cfg) -> None:
    M = number(cfg, "grid", "M", integer=True, minimum=2)
    h = number(cfg, "grid", "spacing", positive=True)
    model = _prior(cfg)
    n_obs = cfg["design"]["n_obs"]
    require(isinstance(n_obs, list) and n_obs and all(isinstance(n, int) and n >= 1 for n in n_obs)
            and n_obs == sorted(set(n_obs)), "[design] n_obs must be an ascending list of positive integers")
    tau2 = number(cfg, "design", "noise_std", minimum=0.0) ** 2
    chunk = number(cfg, "run", "chunk_size", integer=True, minimum=1)
    run = Run(args.out, "fourier-demo", args, cfg)
    plan = fourier_plan(M, n_obs[-1], chunk, args.memory_budget)
    run.manifest["storage"] = plan
    run.manifest["grid"] = {"dim": 2, "shape": [M, M], "spacing": [h, h], "origin": [0.0, 0.0]}
    run.manifest["kernel"] = model.to_dict()
    if cfg["run"]["plan_only"]:
        io.atomic_write_text(run.output("plan.json"), json.dumps(plan, indent=2) + "\n")
        run.finish()
        return

    grid = build_grid(2, [M, M], [h, h])
    _dense_budget(grid.m, args.memory_budget)
    truth = sample_prior(model, grid, 1, args.seed, purpose="ground-truth").samples[:, 0]
    io.write_grid_csv(run.output("truth.csv"), truth.reshape(M, M))
    kw = dict(plan=plan_chunks(grid, chunk), memory_budget=args.memory_budget, threads=args.threads)

    def noisy(G, label):
        noise = stream(args.seed, f"noise-{label}", 0).standard_normal(G.p)
        return DataStage(G, np.asarray(G @ truth) + np.sqrt(tau2) * noise, tau2)

    summary = []
    if cfg["design"]["all_frequencies"]:
        G = dft_operator(grid, dft_frequencies(M), skip_zero_rows=True)
        post = ImplicitPosterior(model, grid, **kw).assimilate(noisy(G, "fourier-all"))
        run.log_stage("fourier-all", G.kind, G.p, tau2)
        _emit_fields(run, post, M, "fourier", "all", truth, summary)
    else:
        freqs = dft_frequencies(M, n_obs[-1])
        require(len(freqs) == n_obs[-1], f"only {len(freqs)} distinct coefficients exist for M={M}")
        sites = farthest_point_order(grid.points, n_obs[-1])
        for design in ("fourier", "pointwise"):
            post = ImplicitPosterior(model, grid, **kw)
            prev = 0
            for n in n_obs:
                if design == "fourier":
                    G = dft_operator(grid, freqs[prev:n], skip_zero_rows=tau2 == 0)
                else:
                    G = pointwise_operator(grid, sites[prev:n])
                label = f"{design}-{prev}-{n}"
                post.assimilate(noisy(G, label))
                run.log_stage(label, G.kind, G.p, tau2)
                _emit_fields(run, post, M, design, n, truth, summary)
                prev = n
    io.write_csv(run.output("summary.csv"), ["design", "n", "mean_variance", "max_variance", "rmse"], summary)
    run.save()
    run.finish()


def _emit_fields(run, post, M, design, n, truth, summary):
    var = post.variance_diag()
    std = np.sqrt(np.clip(var, 0.0, None))
    io.write_grid_csv(run.output(f"mean_{design}_n{n}.csv"), post.mean.reshape(M, M))
    io.write_grid_csv(run.output(f"std_{design}_n{n}.csv"), std.reshape(M, M))
    rmse = float(np.sqrt(np.mean((post.mean - truth) ** 2)))
    summary.append((design, n, float(np.mean(var)), float(np.max(var)), rmse))
    log.info("%s n=%s: mean variance %.6g, rmse %.6g", design, n, np.mean(var), rmse)


# --- grav-campaign ---------------------------------------------------------------


def _campaign_setup(args, cfg):
    sec = cfg["grid"]
    require(len(sec["shape"]) == 3, "[grid] shape needs 3 axes")
    try:
        volcano = synthetic_volcano(tuple(sec["shape"]), tuple(float(s) for s in sec["spacing"]),
                                    number(cfg, "grid", "peak", minimum=0.0),
                                    number(cfg, "grid", "standoff", positive=True))
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None
    model = _prior(cfg)
    c = cfg["campaign"]
    tau2 = number(cfg, "campaign", "noise_std", positive=True) ** 2
    _dense_budget(volcano.grid.m, args.memory_budget)
    truth = sample_prior(model, volcano.grid, 1, args.seed, purpose="ground-truth").samples[:, 0]
    if c["threshold"] is None:
        q = number(cfg, "campaign", "threshold_quantile")
        require(0 < q < 1, "[campaign] threshold_quantile must lie in (0, 1)")
        threshold = float(np.quantile(truth, q))
    else:
        threshold = number(cfg, "campaign", "threshold")
    require(c["strategy"] in ("wivr", "random"), "[campaign] strategy must be 'wivr' or 'random'")
    require(c["weight_mode"] in ("coverage", "uniform"), "[campaign] weight_mode must be 'coverage' or 'uniform'")
    plan = _chunks(cfg, volcano.grid)
    state = new_campaign(model, volcano.grid, volcano.sites, truth, threshold, tau2, start=volcano.start,
                         radius=number(cfg, "campaign", "radius", positive=True),
                         weight_mode=c["weight_mode"], strategy=c["strategy"], seed=args.seed,
                         plan=plan, memory_budget=args.memory_budget, threads=args.threads)
    return volcano, model, truth, threshold, tau2, state


def _history_row(rec: StepRecord, sites):
    xyz = sites[rec.site] if rec.site >= 0 else (float("nan"),) * 3
    return (rec.step, rec.site, float(xyz[0]), float(xyz[1]), float(xyz[2]), rec.criterion,
            rec.tp, rec.fp, rec.mean_variance, rec.expected_volume, rec.alpha)


TRAJECTORY_HEADER = ["step", "site", "x", "y", "z", "criterion", "tp", "fp", "mean_variance",
                     "expected_volume", "alpha"]


def _checkpoint(state: CampaignState, state_dir: Path) -> None:
    state.post.save(state_dir)
    doc = {
        "visited": state.visited,
        "history": [list(r.__dict__.values()) for r in state.history],
        "observations": [float(st.y[0]) for st in state.stages],
    }
    io.atomic_write_text(state_dir / "campaign.json", json.dumps(doc))


def _restore(state: CampaignState, state_dir: Path) -> None:
    doc = json.loads((state_dir / "campaign.json").read_text())
    post = ImplicitPosterior.load(state_dir, state.post.model, state.post.grid, state.post.plan,
                                  mmap=False, memory_budget=state.post.memory_budget,
                                  threads=state.post.threads)
    if post.n != len(doc["visited"]):
        raise ConfigError(f"checkpoint in {state_dir} is inconsistent; remove it to restart")
    state.post = post
    state.visited = list(doc["visited"])
    state.history = [StepRecord(*row) for row in doc["history"]]
    state.stages = [DataStage(state.site_ops.rows([s]), [y], state.tau2)
                    for s, y in zip(state.visited, doc["observations"])]


def cmd_grav_campaign(args, cfg) -> None:
    out = Path(args.out)
    if args.resume:
        man_path = out / "manifest.json"
        require(man_path.exists(), f"--resume needs an existing run in {out}")
        old = json.loads(man_path.read_text())
        require(old.get("command") == "grav-campaign", f"{out} does not hold a grav-campaign run")
        cfg, args.seed = old["config"], old["seed"]
    volcano, model, truth, threshold, tau2, state = _campaign_setup(args, cfg)
    c = cfg["campaign"]
    run = Run(out, "grav-campaign", args, cfg)
    run.manifest["grid"] = volcano.grid.to_dict()
    run.manifest["kernel"] = model.to_dict()
    run.manifest["threshold"] = threshold
    run.save()
    state_dir = out / "state"
    if args.resume and (state_dir / "campaign.json").exists():
        _restore(state, state_dir)
        log.info("resumed at step %d", state.step)

    io.write_field_csv(run.output("truth.csv"), truth)
    io.write_csv(run.output("sites.csv"), ["site", "x", "y", "z"],
                 ((i, *map(float, s)) for i, s in enumerate(volcano.sites)))
    n_steps = number(cfg, "campaign", "n_steps", integer=True, minimum=0)
    stop_after = getattr(args, "stop_after", None)

    def on_step(st):
        _checkpoint(st, state_dir)
        if stop_after is not None and st.step >= stop_after:
            raise _Interrupted()

    design = c["design"]
    if design is not None:
        require(isinstance(design, list) and all(isinstance(s, int) and 0 <= s < len(volcano.sites) for s in design),
                "[campaign] design must be a list of site indices")
    try:
        result = run_campaign(state, n_steps, number(cfg, "campaign", "n_volume_samples", integer=True, minimum=0),
                              design=design, on_step=on_step)
    except _Interrupted:
        run.manifest["status"] = "interrupted"
        run.save()
        return
    _checkpoint(state, state_dir)
    io.write_csv(run.output("trajectory.csv"), TRAJECTORY_HEADER,
                 (_history_row(r, volcano.sites) for r in result.history))

    var_end = state.post.variance_diag()
    cov_end = state.coverage_field()
    io.write_csv(run.output("end_state.csv"), ["index", "mean", "variance", "coverage", "truth_mask"],
                 ((i, float(a), float(b), float(p), int(t)) for i, (a, b, p, t) in
                  enumerate(zip(state.post.mean, var_end, cov_end.p, state.truth_mask))))
    lim_var, lim_cov, _ = limiting_distribution(
        model, volcano.grid, state.site_ops, tau2, threshold, truth=truth, seed=args.seed,
        batch_size=number(cfg, "campaign", "limit_batch", integer=True, minimum=1),
        plan=state.post.plan, memory_budget=args.memory_budget, threads=args.threads)
    io.write_csv(run.output("limiting.csv"), ["index", "variance", "coverage"],
                 ((i, float(v), float(p)) for i, (v, p) in enumerate(zip(lim_var, lim_cov.p))))
    if result.volumes is not None:
        io.write_csv(run.output("volumes.csv"), ["sample", "volume"],
                     ((i, float(v)) for i, v in enumerate(result.volumes.volumes)))
        io.write_csv(run.output("volume_quantiles.csv"), ["level", "volume"],
                     ((float(q), float(v)) for q, v in result.volumes.quantiles.items()))
    for i, site in enumerate(state.visited, start=1):
        run.log_stage(f"step-{i}", state.site_ops.kind, 1, tau2)
    run.finish(storage={
        "implicit_bytes_f64": state.post.storage_bytes(8),
        "explicit_bytes_f64": explicit_storage_bytes(volcano.grid.m, 8),
    })


class _Interrupted(Exception):
    pass


# --- fit / sample ----------------------------------------------------------------


def cmd_fit(args, cfg) -> None:
    grid = _grid(cfg)
    try:
        family = Family.parse(cfg["prior"]["family"])
    except ValueError as exc:
        raise ConfigError(f"[prior] {exc}") from None
    truth_model = PriorModel(Kernel(family, number(cfg, "truth", "sigma0", positive=True),
                                    number(cfg, "truth", "lambda0", positive=True)),
                             number(cfg, "truth", "m0"))
    n_obs = number(cfg, "data", "n_obs", integer=True, minimum=1)
    require(n_obs <= grid.m, f"[data] n_obs exceeds the {grid.m} grid points")
    tau2 = number(cfg, "data", "noise_std", minimum=0.0) ** 2
    lam = cfg["fit"]["lambda_grid"]
    require(isinstance(lam, list) and lam and all(isinstance(v, (int, float)) and v > 0 for v in lam),
            "[fit] lambda_grid must be a non-empty list of positive length scales")
    run = Run(args.out, "fit", args, cfg)
    run.manifest["grid"] = grid.to_dict()
    run.manifest["kernel"] = truth_model.to_dict()
    _dense_budget(grid.m, args.memory_budget)
    truth = sample_prior(truth_model, grid, 1, args.seed, purpose="ground-truth").samples[:, 0]
    idx = stream(args.seed, "fit-sites").choice(grid.m, n_obs, replace=False)
    G = pointwise_operator(grid, idx)
    y = truth[idx] + np.sqrt(tau2) * stream(args.seed, "fit-noise").standard_normal(n_obs)
    res = fit(DataStage(G, y, tau2), grid, family, lam, number(cfg, "fit", "sigma_init", positive=True),
              number(cfg, "fit", "budget", integer=True, minimum=1), plan=_chunks(cfg, grid),
              threads=args.threads, memory_budget=args.memory_budget)
    io.write_csv(run.output("fit.csv"), ["lambda0", "sigma0", "m0", "nmll", "converged"], res.rows())
    b = res.best
    io.atomic_write_text(run.output("best.json"), json.dumps(
        {"lambda0": b.lambda0, "sigma0": b.sigma0, "m0": b.m0, "nmll": b.nmll, "converged": b.converged},
        indent=2) + "\n")
    print(f"{'lambda0':>12} {'sigma0':>12} {'m0':>12} {'nmll':>14}")
    for r in res.records:
        mark = " *" if r is b else ""
        print(f"{r.lambda0:12.6g} {r.sigma0:12.6g} {r.m0:12.6g} {r.nmll:14.8g}{mark}")
    run.finish()


def cmd_sample(args, cfg) -> None:
    grid = _grid(cfg)
    model = _prior(cfg)
    n = cfg["sample"]["n"]
    require(isinstance(n, int) and not isinstance(n, bool) and n >= 1, "ensemble size must be positive")
    idx = cfg["data"]["indices"]
    require(isinstance(idx, list) and all(isinstance(i, int) and 0 <= i < grid.m for i in idx)
            and len(set(idx)) == len(idx), "[data] indices must be distinct grid indices")
    tau2 = number(cfg, "data", "noise_std", minimum=0.0) ** 2
    run = Run(args.out, "sample", args, cfg)
    run.manifest["grid"] = grid.to_dict()
    run.manifest["kernel"] = model.to_dict()
    _dense_budget(grid.m, args.memory_budget)
    ens = sample_prior(model, grid, n, args.seed)
    post = ImplicitPosterior(model, grid, _chunks(cfg, grid), args.memory_budget, args.threads)
    if idx:
        truth = sample_prior(model, grid, 1, args.seed, purpose="ground-truth").samples[:, 0]
        G = pointwise_operator(grid, idx)
        y = np.asarray(G @ truth) + np.sqrt(tau2) * stream(args.seed, "sample-noise").standard_normal(len(idx))
        stage = DataStage(G, y, tau2)
        post.assimilate(stage)
        run.log_stage("data", G.kind, G.p, tau2)
        ens = residual_update(ens, [stage], post)
        io.write_field_csv(run.output("truth.csv"), truth)
    io.write_matrix(run.output("ensemble.bin"), ens.samples)
    io.write_csv(run.output("moments.csv"), ["index", "mean", "variance", "posterior_mean", "posterior_variance"],
                 ((i, float(a), float(b), float(c), float(d)) for i, (a, b, c, d) in enumerate(zip(
                     ens.samples.mean(axis=1), ens.samples.var(axis=1, ddof=1) if n > 1 else np.zeros(grid.m),
                     post.mean, post.variance_diag()))))
    T = cfg["sample"]["threshold"]
    if T is not None:
        T = number(cfg, "sample", "threshold")
        vd = volume_distribution(ens, T, grid)
        io.write_csv(run.output("volumes.csv"), ["sample", "volume"], ((i, float(v)) for i, v in enumerate(vd.volumes)))
        io.write_csv(run.output("volume_quantiles.csv"), ["level", "volume"],
                     ((float(q), float(v)) for q, v in vd.quantiles.items()))
    run.finish(provenance=ens.provenance)


COMMANDS = {
    "fourier-demo": cmd_fourier_demo,
    "grav-campaign": cmd_grav_campaign,
    "fit": cmd_fit,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqgp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI or JSON configuration file")
        p.add_argument("--out", type=Path, required=True, help="run directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--memory-budget", type=int, default=DEFAULT_MEMORY_BUDGET, help="bytes")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "fourier-demo":
            p.add_argument("--plan-only", action="store_true",
                           help="validate the memory plan without running")
        if name == "grav-campaign":
            p.add_argument("--resume", action="store_true", help="continue an interrupted run in --out")
            p.add_argument("--stop-after", type=int, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed < 0 or args.threads < 1 or args.memory_budget < 1:
            raise ConfigError("--seed must be >= 0, --threads and --memory-budget >= 1")
        user = cfgmod.load(args.config) if args.config else {}
        cfg = cfgmod.merge(cfgmod.DEFAULTS[args.command], user)
        if getattr(args, "plan_only", False):
            cfg["run"]["plan_only"] = True
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"seqgp: config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"seqgp: numerical failure: {exc}", file=sys.stderr)
        return 3
    except MemoryBudgetError as exc:
        print(f"seqgp: memory budget exceeded: {exc}", file=sys.stderr)
        return 4
    except SeqGPError as exc:
        print(f"seqgp: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
