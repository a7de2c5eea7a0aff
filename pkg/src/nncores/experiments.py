"""Experiment drivers behind the command line.

Each driver reads one JSON config, runs its trainings and writes every
artifact into a single output directory together with ``manifest.json``.
Summaries never contain timings, so repeating a run with the same config
reproduces its summary files byte for byte.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io, linalg
from .autodiff import forward_tape, init_network
from .config import RunConfig, load_config
from .errors import ConfigInvalid, NNCoResError, NuggetExhausted
from .gp import BoundaryDataset, KernelConfig, calibrate_nugget, cross_kernel
from .metrics import l2e
from .optim import OptimConfig
from .problems import PdeProblem, SamplePlan, make_problem, sample_boundary
from .reference import reference_function
from .trainer import BOUNDARY_TEST_SEED, InverseSpec, TrainRun, gradient_histogram, train

log = logging.getLogger(__name__)

OUTPUT_ENV = "NNCORES_OUTPUT_DIR"
DEFAULT_OUTPUT = "runs"


@dataclass
class RunManifest:
    """What a driver did: config echo, input hash, timestamps and every file written."""

    command: str
    config: dict
    config_hash: str
    seeds: list
    out_dir: str
    started: str
    finished: str = ""
    status: str = "running"
    error: str | None = None
    files: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def add(self, path) -> None:
        rel = str(Path(path).relative_to(self.out_dir))
        if rel not in self.files:
            self.files.append(rel)

    def path(self, name: str) -> Path:
        return Path(self.out_dir) / name

    def write(self) -> Path:
        self.add(self.path("manifest.json"))
        return io.write_json(self.path("manifest.json"), asdict(self))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def output_root(override=None) -> Path:
    """Explicit argument, then ``$NNCORES_OUTPUT_DIR``, then ``./runs``."""
    if override is not None:
        return Path(override)
    return Path(os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def _start(command: str, cfg: RunConfig, out=None) -> RunManifest:
    digest = cfg.content_hash()
    out_dir = output_root(out) / f"{command}-{cfg.experiment.name}-{digest[:10]}"
    out_dir.mkdir(parents=True, exist_ok=True)
    return RunManifest(command, cfg.model_dump(mode="json"), digest, list(cfg.experiment.seeds),
                       str(out_dir), _now())


def _finish(manifest: RunManifest, body):
    try:
        body(manifest)
        manifest.status = "ok"
    except ConfigInvalid as exc:
        manifest.status = "failed"
        manifest.error = f"ConfigInvalid: {exc}"
        raise
    except NNCoResError as exc:
        log.error("%s failed: %s", manifest.command, exc)
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
    finally:
        manifest.finished = _now()
        manifest.write()
    return manifest


# --- single trainings -------------------------------------------------------------

def train_run_from_config(cfg: RunConfig, seed: int, noise: float | None = None,
                          omega: float | None = None) -> TrainRun:
    problem = make_problem(cfg.problem.name, **cfg.problem.params)
    opt = cfg.optimizer
    epochs = opt.epochs or (1000 if problem.q == 1 else 2000)
    optim = OptimConfig(method=opt.method, learning_rate=opt.learning_rate, epochs=epochs,
                        history=opt.history, c1=opt.c1, c2=opt.c2, max_ls=opt.max_ls,
                        iterations_per_epoch=opt.iterations_per_epoch)
    inv = cfg.experiment.inverse
    inverse = InverseSpec(dict(inv.unknowns), inv.n_obs, inv.log_space) if inv.unknowns else InverseSpec()
    for name in inverse.names:
        if name not in problem.params:
            raise ConfigInvalid(f"{problem.name} has no parameter {name!r}",
                                field="experiment.inverse.unknowns")
    s = cfg.sampling
    return TrainRun(
        problem, model=cfg.model.kind, hidden=tuple(cfg.model.hidden),
        omega=cfg.kernel.omega if omega is None else omega,
        plan=SamplePlan(n_bc=s.n_bc, n_pde=s.n_pde, seed=seed), optim=optim, seed=seed,
        noise=cfg.experiment.noise if noise is None else noise, inverse=inverse,
        kappa_max=cfg.kernel.kappa_max, eig_method=cfg.kernel.eig_method,
        strategy=cfg.model.strategy, w_pde=cfg.model.w_pde, w_rh=cfg.model.w_rh, n_rh=cfg.model.n_rh,
        n_pinn_boundary=s.n_pinn_boundary, n_test=s.n_test, eval_every=cfg.experiment.eval_every,
    )


def summarize(result) -> dict:
    """Timing-free summary of one training."""
    run = result.run
    last = result.report.rows[-1]
    f = result.final
    out = {
        "problem": run.problem.name,
        "problem_params": dict(run.problem.params),
        "model": run.model,
        "seed": run.seed,
        "noise": run.noise,
        "omega": run.omega,
        "epochs_run": result.trace.epochs,
        "n_evals": result.trace.n_evals,
        "optimizer_message": result.trace.message,
        "loss_total": last["loss_total"],
        "loss_pde": last["loss_pde"],
        "l2e_domain": f["l2e_domain"],
        "l2e_mean_only": f["l2e_mean_only"],
        "l2e_per_output": f.get("l2e_per_output"),
        "l2e_boundary": f["l2e_boundary"],
        "boundary_max": f["boundary_max"],
        "kappas": result.kappas,
        "deltas": result.deltas,
    }
    if result.params:
        out["estimated_params"] = dict(result.params)
    return out


def prediction_grid(problem: PdeProblem, predictor, n: int = 201):
    """Rows ``x1, x2, pred_<o>..., ref_<o>..., abs_err`` on an ``n`` by ``n`` grid.

    ``abs_err`` is the largest absolute error over the outputs that have a
    reference; it is NaN when none does.
    """
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(problem.lower, problem.upper)]
    g0, g1 = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g0.ravel(), g1.ravel()])
    pred = np.asarray(predictor(pts)).reshape(pts.shape[0], -1)
    fn = reference_function(problem)
    ref = np.full_like(pred, np.nan) if fn is None else np.asarray(fn(pts)).reshape(pred.shape)
    with np.errstate(invalid="ignore"):
        err = np.abs(pred - ref)
    abs_err = np.full(pts.shape[0], np.nan) if np.all(np.isnan(err)) else np.nanmax(err, axis=1)
    cols = ["x1", "x2"] + [f"pred_{o}" for o in problem.outputs] + [f"ref_{o}" for o in problem.outputs] + ["abs_err"]
    return cols, np.column_stack([pts, pred, ref, abs_err])


def _train_task(cfg_json: str, seed: int, out_dir: str, noise=None, omega=None, grid_n=None) -> dict:
    """One training with its artifacts; module level so a process pool can run it."""
    cfg = RunConfig.model_validate_json(cfg_json)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = train_run_from_config(cfg, seed, noise, omega)
    run.report_path = out / "loss.csv"
    result = train(run)
    files = [run.report_path]
    cols, rows = prediction_grid(run.problem, result.predictor, grid_n or cfg.experiment.grid_n)
    files.append(io.write_table(out / "grid.csv", cols, rows))
    counts, edges = gradient_histogram(result.final_grad)
    files.append(io.write_histogram_csv(out / "gradient_histogram.csv", counts, edges))
    if result.param_trace:
        names = list(result.param_trace[0])
        prow = ([k + 1, *(p[n] for n in names)] for k, p in enumerate(result.param_trace))
        files.append(io.write_table(out / "params.csv", ["epoch", *names], prow))
    summary = summarize(result)
    files.append(io.write_summary(out / "summary.json", summary))
    summary["files"] = [str(p) for p in files]
    return summary


def _run_many(cfg: RunConfig, tasks: list[tuple], manifest: RunManifest) -> list[dict]:
    """Run ``(seed, subdir, noise, omega)`` tasks, in a process pool when ``jobs > 1``."""
    cfg_json = cfg.model_dump_json()
    args = [(cfg_json, seed, str(manifest.path(sub)), noise, omega) for seed, sub, noise, omega in tasks]
    jobs = cfg.experiment.jobs
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_train_task, *a) for a in args]
            results = [f.result() for f in futures]
    else:
        results = [_train_task(*a) for a in args]
    for res in results:
        for p in res.pop("files"):
            manifest.add(p)
    return results


def _median(values) -> float:
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.median(vals)) if vals else float("nan")


# --- drivers ----------------------------------------------------------------------

def run_solve(config_path, out=None) -> RunManifest:
    """Train every seed of the config and write per-seed and pooled summaries."""
    cfg = load_config(config_path)
    manifest = _start("solve", cfg, out)

    def body(m):
        tasks = [(s, f"seed-{s}", None, None) for s in cfg.experiment.seeds]
        runs = _run_many(cfg, tasks, m)
        pooled = {"command": "solve", "runs": runs,
                  "median_l2e_domain": _median(r["l2e_domain"] for r in runs)}
        m.add(io.write_summary(m.path("summary.json"), pooled))

    return _finish(manifest, body)


def run_inverse(config_path, out=None) -> RunManifest:
    """Like :func:`run_solve`, with unknown PDE parameters estimated jointly."""
    cfg = load_config(config_path)
    if not cfg.experiment.inverse.unknowns:
        raise ConfigInvalid("inverse runs need at least one unknown", field="experiment.inverse.unknowns")
    if cfg.model.kind != "nn-cores":
        raise ConfigInvalid("inverse runs are implemented for nn-cores", field="model.kind")
    train_run_from_config(cfg, cfg.experiment.seeds[0])  # checks the unknown names
    manifest = _start("inverse", cfg, out)

    def body(m):
        tasks = [(s, f"seed-{s}", None, None) for s in cfg.experiment.seeds]
        runs = _run_many(cfg, tasks, m)
        truth = dict(cfg.problem.params)
        problem = make_problem(cfg.problem.name, **truth)
        rel = {}
        for name in cfg.experiment.inverse.unknowns:
            true = problem.params[name]
            rel[name] = [abs(r["estimated_params"][name] - true) / abs(true) for r in runs]
        pooled = {"command": "inverse", "runs": runs, "true_params": {k: problem.params[k] for k in rel},
                  "relative_error": rel, "median_relative_error": {k: _median(v) for k, v in rel.items()}}
        m.add(io.write_summary(m.path("summary.json"), pooled))

    return _finish(manifest, body)


def run_noise_study(config_path, out=None) -> RunManifest:
    """One NN-CoRes training per noise level and seed."""
    cfg = load_config(config_path)
    levels = cfg.experiment.noise_levels
    if not levels:
        raise ConfigInvalid("noise study needs at least one level", field="experiment.noise_levels")
    manifest = _start("noise", cfg, out)

    def body(m):
        tasks = [(s, f"noise-{lvl!r}/seed-{s}", lvl, None) for lvl in levels for s in cfg.experiment.seeds]
        runs = _run_many(cfg, tasks, m)
        per_level = []
        for lvl in levels:
            rs = [r for r in runs if r["noise"] == lvl]
            per_level.append({"noise": lvl, "l2e_domain": [r["l2e_domain"] for r in rs],
                              "median_l2e_domain": _median(r["l2e_domain"] for r in rs)})
        rows = [[lvl["noise"], lvl["median_l2e_domain"]] for lvl in per_level]
        m.add(io.write_table(m.path("noise.csv"), ["noise", "median_l2e_domain"], rows))
        m.add(io.write_summary(m.path("summary.json"), {"command": "noise", "levels": per_level, "runs": runs}))

    return _finish(manifest, body)


SWEEP_COLUMNS = ("omega", "n_train", "delta", "kappa", "boundary_max", "boundary_rms",
                 "boundary_max_rel", "boundary_rms_rel")


def _output_range(problem: PdeProblem, output: str) -> float:
    rng = problem.solution_range(output)
    if rng is None:
        rng = problem.solution_range(problem.outputs[0])
    return float(rng) if rng else 1.0


def boundary_sweep(problem: PdeProblem, omegas, n_trains, seed: int = 0, n_test: int = 10_000,
                   hidden=(20, 20, 20, 20), kappa_max: float = 1e6, eig_method: str = "lapack") -> list[dict]:
    """Held-out boundary error of the untrained field over ``omega`` and sample counts.

    ``n_train`` is the number of samples per boundary segment. Errors are
    pooled over outputs (max of maxima, RMS of RMS values); the ``_rel``
    columns divide by the solution range.
    """
    net = init_network((problem.d, *hidden, problem.q), seed)
    tests = []
    for o, name in enumerate(problem.outputs):
        bp = problem.random_boundary(name, n_test, BOUNDARY_TEST_SEED)
        if bp.shape[0]:
            m_t, _ = forward_tape(net, bp, 0)
            tests.append((o, name, bp, problem.boundary_value(name, bp), m_t[:, 0, o]))
    rows = []
    for n_train in n_trains:
        data = sample_boundary(problem, SamplePlan(n_bc=int(n_train), n_pde=1, seed=seed))
        resid = {}
        for o, ds in enumerate(data):
            m_x, _ = forward_tape(net, ds.X, 0)
            resid[ds.output] = (ds, ds.u - m_x[:, 0, o])
        for omega in omegas:
            cfg = KernelConfig.uniform(problem.d, float(omega), kappa_max=kappa_max)
            maxes, rmss, rel_max, rel_rms, kappa, delta = [], [], [], [], 0.0, 0.0
            try:
                for o, name, bp, bv, m_t in tests:
                    ds, r = resid[name]
                    block = calibrate_nugget(ds, cfg, eig_method)
                    w = linalg.chol_solve(block.chol, cross_kernel(ds.X, bp, block.config))
                    err = np.abs(m_t + w.T @ r - bv)
                    scale = _output_range(problem, name)
                    maxes.append(float(err.max()))
                    rmss.append(float(np.sqrt(np.mean(err * err))))
                    rel_max.append(maxes[-1] / scale)
                    rel_rms.append(rmss[-1] / scale)
                    kappa = max(kappa, block.kappa)
                    delta = max(delta, block.delta)
            except NuggetExhausted:
                rows.append({"omega": float(omega), "n_train": int(n_train), **{c: float("nan") for c in SWEEP_COLUMNS[2:]}})
                continue
            rows.append({
                "omega": float(omega), "n_train": int(n_train), "delta": delta, "kappa": kappa,
                "boundary_max": max(maxes), "boundary_rms": float(np.sqrt(np.mean(np.square(rmss)))),
                "boundary_max_rel": max(rel_max), "boundary_rms_rel": float(np.sqrt(np.mean(np.square(rel_rms)))),
            })
    return rows


def run_sweep_omega(config_path, out=None, stage_b: bool | None = None) -> RunManifest:
    """Stage A: untrained boundary error over an omega grid. Stage B: trained L2,e on a coarse grid."""
    cfg = load_config(config_path)
    sw = cfg.experiment.sweep
    if sw.omega_max < sw.omega_min:
        raise ConfigInvalid("omega_max must not be below omega_min", field="experiment.sweep.omega_max")
    manifest = _start("sweep-omega", cfg, out)
    do_b = sw.stage_b if stage_b is None else stage_b

    def body(m):
        problem = make_problem(cfg.problem.name, **cfg.problem.params)
        omegas = np.linspace(sw.omega_min, sw.omega_max, sw.n_omega)
        seed = cfg.experiment.seeds[0]
        rows = boundary_sweep(problem, omegas, sw.n_train, seed, sw.n_test, tuple(cfg.model.hidden),
                              cfg.kernel.kappa_max)
        m.add(io.write_table(m.path("sweep_stage_a.csv"), SWEEP_COLUMNS,
                             ([r[c] for c in SWEEP_COLUMNS] for r in rows)))
        summary = {"command": "sweep-omega", "stage_a": _sweep_intervals(rows, sw.n_train)}
        if do_b:
            tasks = [(seed, f"stage-b/omega-{w!r}", None, w) for w in sw.stage_b_omegas]
            runs = _run_many(cfg, tasks, m)
            m.add(io.write_table(m.path("sweep_stage_b.csv"), ["omega", "l2e_domain"],
                                 ([r["omega"], r["l2e_domain"]] for r in runs)))
            summary["stage_b"] = runs
        m.add(io.write_summary(m.path("summary.json"), summary))

    return _finish(manifest, body)


def _sweep_intervals(rows, n_trains, level: float = 1e-2) -> list[dict]:
    """Width of the omega range whose relative boundary error stays below ``level``."""
    out = []
    for n in n_trains:
        rs = [r for r in rows if r["n_train"] == n]
        omegas = np.array([r["omega"] for r in rs])
        good = np.array([r["boundary_max_rel"] <= level for r in rs])
        step = float(np.diff(omegas).min()) if omegas.size > 1 else 0.0
        out.append({"n_train": int(n), "n_good": int(good.sum()), "good_width": float(good.sum() * step),
                    "best_omega": float(omegas[np.nanargmin([r["boundary_max_rel"] for r in rs])])})
    return out


def gp_regression(X, y, xt, omega: float = 2.0, kappa_max: float = 1e6, eig_method: str = "jacobi"):
    """Zero-mean GP posterior mean at ``xt`` with fixed ``omega`` and a calibrated nugget.

    Returns ``(prediction, block)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    xt = np.asarray(xt, dtype=np.float64).reshape(-1, X.shape[1])
    block = calibrate_nugget(BoundaryDataset(X, y, "OBS"), KernelConfig.uniform(X.shape[1], omega, kappa_max=kappa_max),
                             eig_method)
    w = linalg.chol_solve(block.chol, cross_kernel(X, xt, block.config))
    return w.T @ np.asarray(y, dtype=np.float64), block


def run_gp_demo(config_path, out=None) -> RunManifest:
    """1-D regression of ``sin(2 pi f x)`` at the configured frequencies."""
    cfg = load_config(config_path)
    demo = cfg.experiment.gp_demo
    if not demo.upper > demo.lower:
        raise ConfigInvalid("gp_demo.upper must exceed gp_demo.lower", field="experiment.gp_demo.upper")
    manifest = _start("gp-demo", cfg, out)

    def body(m):
        rng = np.random.Generator(np.random.PCG64(cfg.experiment.seeds[0]))
        X = np.linspace(demo.lower, demo.upper, demo.n_train)
        xt = np.sort(rng.uniform(demo.lower, demo.upper, demo.n_test))
        curves, cases = [], []
        for f in demo.frequencies:
            target = lambda x, f=f: np.sin(2.0 * np.pi * f * x)
            pred, block = gp_regression(X[:, None], target(X), np.concatenate([X, xt]), demo.omega,
                                        cfg.kernel.kappa_max, cfg.kernel.eig_method)
            p_train, p_test = pred[: X.size], pred[X.size:]
            curves += [[f, "train", x, target(x), p] for x, p in zip(X, p_train)]
            curves += [[f, "test", x, target(x), p] for x, p in zip(xt, p_test)]
            cases.append({"frequency": f, "delta": block.delta, "kappa": block.kappa,
                          "kappa_max": cfg.kernel.kappa_max, "rmse_train": l2e(p_train, target(X)),
                          "rmse_test": l2e(p_test, target(xt))})
        m.add(io.write_table(m.path("gp_demo.csv"), ["frequency", "split", "x", "target", "pred"], curves))
        m.add(io.write_summary(m.path("summary.json"), {"command": "gp-demo", "omega": demo.omega, "cases": cases}))

    return _finish(manifest, body)


COMMANDS = {
    "solve": run_solve,
    "sweep-omega": run_sweep_omega,
    "noise": run_noise_study,
    "gp-demo": run_gp_demo,
    "inverse": run_inverse,
}
