"""Training loops for NN-CoRes and the PINN baselines.

Every model kind is wrapped in a small evaluator exposing ``forward(theta)``
(output jets on registered point sets) and ``backward(seeds)`` (flat
parameter gradient). The trainers only assemble losses from those jets and
pull cotangents back through :meth:`Linearization.seed`.

For NN-CoRes the kernel weight jets of every registered point set are
computed once; a loss evaluation costs one network pass over those points
plus one order-0 pass over the boundary rows to refresh ``r``.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import MeanNetwork, backprop, forward_tape, init_network, n_channels
from .errors import NonFiniteLoss
from .gp import BoundaryDataset, CoResField, KernelConfig, calibrate_nugget
from .metrics import l2e
from .optim import OptimConfig, OptTrace, minimize
from .problems import (
    PdeProblem,
    SamplePlan,
    corrupt_boundary,
    hard_constraint_jets,
    lambda_weight,
    rh_times,
    sample_boundary,
    sample_interior,
)
from .reference import reference_function

log = logging.getLogger(__name__)

MODEL_KINDS = ("nn-cores", "pinn", "pinn-hc")
TEST_SEED = 20_240_101
BOUNDARY_TEST_SEED = 20_240_202
OBS_SEED_OFFSET = 7_919
NOISE_SEED_OFFSET = 104_729
REPORT_COLUMNS = (
    "epoch", "loss_total", "loss_pde", "loss_bc", "loss_ic",
    "l2e_domain", "l2e_boundary", "l2e_mean_only", "wall_seconds",
)


# --- configuration -----------------------------------------------------------------

@dataclass
class InverseSpec:
    """Unknown PDE parameters with initial guesses, plus the observation budget."""

    guesses: dict = field(default_factory=dict)
    n_obs: int = 200
    log_space: bool = True

    @property
    def names(self) -> list[str]:
        return list(self.guesses)

    def __bool__(self):
        return bool(self.guesses)


@dataclass
class TrainRun:
    problem: PdeProblem
    model: str = "nn-cores"
    hidden: tuple = (20, 20, 20, 20)
    omega: float = 2.0
    plan: SamplePlan = field(default_factory=SamplePlan)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    noise: float = 0.0
    inverse: InverseSpec = field(default_factory=InverseSpec)
    kappa_max: float = 1e6
    eig_method: str = "jacobi"
    # inviscid Burgers strategy: "rh" adds lambda weights and the RH term
    strategy: str = "rh"
    w_pde: float = 1.0
    w_rh: float = 1.0
    n_rh: int = 64
    n_pinn_boundary: int = 1000
    n_test: int = 10_000
    eval_every: int = 10
    report_path: str | Path | None = None

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.inverse and self.model != "nn-cores":
            raise ValueError("inverse mode is implemented for nn-cores only")
        if self.model == "pinn-hc":
            self.problem.hard_constraint()  # raises TransformUndefined early
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.strategy not in ("rh", "naive"):
            raise ValueError("strategy must be 'rh' or 'naive'")

    @property
    def widths(self) -> tuple:
        return (self.problem.d, *self.hidden, self.problem.q)

    @property
    def inviscid(self) -> bool:
        return self.problem.name == "inviscid-burgers"


# --- model evaluators -----------------------------------------------------------------

class _Evaluator:
    """Output jets of a model on named point sets, with reverse-mode gradients."""

    def __init__(self, net: MeanNetwork):
        self.net = net
        self.sets: dict[str, tuple[np.ndarray, int]] = {}
        self._tapes: dict = {}
        self._theta = None

    def register(self, name: str, points: np.ndarray, order: int) -> None:
        self.sets[name] = (np.atleast_2d(points), order)

    def forward(self, theta) -> dict[str, np.ndarray]:
        self._theta = theta
        out = {}
        for name, (pts, order) in self.sets.items():
            m, tape = forward_tape(self.net, pts, order, theta)
            self._tapes[name] = tape
            out[name] = self._transform(name, m)
        return out

    def _transform(self, name, m):
        return m

    def _pullback(self, name, seed):
        return seed

    def backward(self, seeds: dict[str, np.ndarray]) -> np.ndarray:
        grad = np.zeros(self.net.n_params)
        for name, s in seeds.items():
            grad += backprop(self.net, self._tapes[name], self._pullback(name, s), self._theta)
        return grad


class PinnEvaluator(_Evaluator):
    pass


class HardConstraintEvaluator(_Evaluator):
    """``a(x) * m(x) + b(x)`` with analytic jets of ``a`` and ``b``."""

    def __init__(self, net, problem: PdeProblem):
        super().__init__(net)
        self.hc = problem.hard_constraint()
        self._ab = {}
        self._m = {}

    def register(self, name, points, order):
        super().register(name, points, order)
        self._ab[name] = hard_constraint_jets(self.hc, np.atleast_2d(points), order)

    def _transform(self, name, m):
        a, b = self._ab[name]
        self._m[name] = m
        return compose_product(a, m, self.net.d, self.sets[name][1]) + b

    def _pullback(self, name, seed):
        a, _ = self._ab[name]
        return product_adjoint(a, seed, self.net.d, self.sets[name][1])


def compose_product(a: np.ndarray, m: np.ndarray, d: int, order: int) -> np.ndarray:
    """Channel jets of the pointwise product ``a * m`` (both ``(N, C, q)``)."""
    out = a[:, :1] * m
    if order == 0:
        return out[:, :1].copy()
    res = np.empty_like(m)
    res[:, 0] = a[:, 0] * m[:, 0]
    for k in range(d):
        res[:, 1 + k] = a[:, 1 + k] * m[:, 0] + a[:, 0] * m[:, 1 + k]
    if order >= 2:
        for k in range(d):
            for l in range(d):
                c = 1 + d + k * d + l
                res[:, c] = (a[:, c] * m[:, 0] + a[:, 1 + k] * m[:, 1 + l]
                             + a[:, 1 + l] * m[:, 1 + k] + a[:, 0] * m[:, c])
    return res


def product_adjoint(a: np.ndarray, s: np.ndarray, d: int, order: int) -> np.ndarray:
    """Transpose of :func:`compose_product` in ``m`` for fixed ``a``."""
    g = np.zeros_like(s)
    g[:, 0] = a[:, 0] * s[:, 0]
    if order == 0:
        return g
    for k in range(d):
        g[:, 0] += a[:, 1 + k] * s[:, 1 + k]
        g[:, 1 + k] = a[:, 0] * s[:, 1 + k]
    if order >= 2:
        for k in range(d):
            for l in range(d):
                c = 1 + d + k * d + l
                g[:, 0] += a[:, c] * s[:, c]
                g[:, 1 + l] += a[:, 1 + k] * s[:, c]
                g[:, 1 + k] += a[:, 1 + l] * s[:, c]
                g[:, c] = a[:, 0] * s[:, c]
    return g


class CoResEvaluator(_Evaluator):
    """NN-CoRes: network mean plus kernel-weighted boundary residuals.

    The cotangent of ``eta`` reaches ``theta`` twice, directly through
    ``m(x)`` and through ``r = u - m(X)`` weighted by the frozen ``w(x)``.
    """

    def __init__(self, cores: CoResField):
        super().__init__(cores.mean)
        self.field = cores
        self.Xb, self.slices = cores.boundary_points()
        self.wjets: dict[str, list[np.ndarray]] = {}
        self._r = None

    def register(self, name, points, order):
        super().register(name, points, order)
        self.wjets[name] = self.field.weight_jets(np.atleast_2d(points), order)

    def forward(self, theta):
        self._theta = theta
        mb, tape_b = forward_tape(self.net, self.Xb, 0, theta)
        self._tapes["__boundary__"] = tape_b
        self._r = [b.data.u - mb[sl, 0, o] for o, (b, sl) in enumerate(zip(self.field.blocks, self.slices))]
        out = {}
        for name, (pts, order) in self.sets.items():
            m, tape = forward_tape(self.net, pts, order, theta)
            self._tapes[name] = tape
            corr = np.stack([wj @ r for wj, r in zip(self.wjets[name], self._r)], axis=-1)
            out[name] = m + corr
        return out

    def backward(self, seeds):
        grad = np.zeros(self.net.n_params)
        seed_b = np.zeros((self.Xb.shape[0], 1, self.net.q))
        for name, s in seeds.items():
            grad += backprop(self.net, self._tapes[name], s, self._theta)
            for o, (wj, sl) in enumerate(zip(self.wjets[name], self.slices)):
                # d eta / d r_o = w_o, and d r_o / d m(X_o) = -1
                seed_b[sl, 0, o] -= np.einsum("ic,icn->n", s[:, :, o], wj)
        grad += backprop(self.net, self._tapes["__boundary__"], seed_b, self._theta)
        return grad

    def residuals(self):
        return self._r


# --- loss -----------------------------------------------------------------------------

@dataclass
class LossParts:
    total: float
    pde: float
    bc: float = float("nan")
    ic: float = float("nan")
    extra: dict = field(default_factory=dict)


class Objective:
    """Loss and flat gradient of one training run over ``[theta, log(params)]``."""

    def __init__(self, run: TrainRun, evaluator: _Evaluator, colloc: np.ndarray,
                 pinn_data: list[BoundaryDataset] | None = None):
        self.run = run
        self.problem = run.problem.__class__(**run.problem.params)
        self.ev = evaluator
        self.colloc = colloc
        self.n_theta = evaluator.net.n_params
        self.unknowns = run.inverse.names
        self.log_space = run.inverse.log_space
        q = self.problem.q
        d = self.problem.d
        self.C = n_channels(d, 2)
        evaluator.register("pde", colloc, 2)
        self.pinn_data = pinn_data
        if pinn_data is not None:
            for o, ds in enumerate(pinn_data):
                evaluator.register(f"data{o}", ds.X, 0)
        self.use_rh = run.inviscid and run.strategy == "rh"
        if self.use_rh:
            t = rh_times(run.n_rh)
            pts = np.column_stack([np.zeros(t.size + 1), np.concatenate([[0.0], t])])
            evaluator.register("rh", pts, 0)
        self._recent: dict[bytes, LossParts] = {}
        self.q = q

    # parameters of the PDE packed after theta
    def pack(self, theta, params: dict | None = None) -> np.ndarray:
        if not self.unknowns:
            return np.asarray(theta, dtype=np.float64)
        vals = [params[n] for n in self.unknowns]
        tail = np.log(vals) if self.log_space else np.asarray(vals)
        return np.concatenate([theta, tail])

    def unpack(self, z) -> tuple[np.ndarray, dict]:
        theta = z[: self.n_theta]
        tail = z[self.n_theta:]
        vals = np.exp(tail) if self.log_space else tail
        return theta, {n: float(v) for n, v in zip(self.unknowns, vals)}

    def __call__(self, z):
        theta, pvals = self.unpack(np.asarray(z, dtype=np.float64))
        if pvals:
            self.problem.params.update(pvals)
        jets = self.ev.forward(theta)
        N = self.colloc.shape[0]
        eta = jets["pde"]
        lin = self.problem.linearize(self.colloc, eta)
        R = lin.residuals
        seeds = {}
        grad_params = np.zeros(len(self.unknowns))
        if self.run.inviscid and self.use_rh:
            # gradient-based point weights, differentiated through eta_x
            ux = eta[:, 1, 0]
            k1 = self.problem.params["k1"]
            lam = lambda_weight(ux, k1)
            dlam = np.where(ux < 0, 2.0 * k1 * lam * lam, 0.0)
            wR = lam * R[:, 0]
            pde = float(np.mean(wR * wR))
            g_wR = self.run.w_pde * 2.0 * wR / N
            seed = lin.seed((g_wR * lam)[:, None], self.C, self.q)
            seed[:, 1, 0] += g_wR * R[:, 0] * dlam
            loss_pde = self.run.w_pde * pde
        else:
            pde = float(np.sum(np.mean(R * R, axis=0)))
            gR = 2.0 * R / N
            seed = lin.seed(gR, self.C, self.q)
            loss_pde = pde
            for i, n in enumerate(self.unknowns):
                dR = lin.param_partials[n]
                grad_params[i] = float(np.sum(gR * dR))
        seeds["pde"] = seed
        parts = LossParts(total=loss_pde, pde=loss_pde)
        if self.use_rh:
            v = jets["rh"][:, 0, 0]
            dev = v[1:] - v[0]
            rh = float(np.mean(dev * dev))
            g = 2.0 * dev / dev.size * self.run.w_rh
            s = np.zeros_like(jets["rh"])
            s[1:, 0, 0] = g
            s[0, 0, 0] = -g.sum()
            seeds["rh"] = s
            parts.extra["rh"] = rh
            parts.total = parts.pde = loss_pde + self.run.w_rh * rh
        if self.pinn_data is not None:
            bc = ic = 0.0
            has_ic = False
            for o, ds in enumerate(self.pinn_data):
                v = jets[f"data{o}"][:, 0, o]
                err = v - ds.u
                s = np.zeros_like(jets[f"data{o}"])
                for tag in ("BC", "IC"):
                    sel = ds.tags == tag
                    if not np.any(sel):
                        continue
                    e = err[sel]
                    term = float(np.mean(e * e))
                    s[sel, 0, o] = 2.0 * e / e.size
                    if tag == "BC":
                        bc += term
                    else:
                        ic += term
                        has_ic = True
                seeds[f"data{o}"] = s
            parts.bc = bc
            parts.ic = ic if has_ic else float("nan")
            parts.total = parts.pde + bc + (ic if has_ic else 0.0)
        if not math.isfinite(parts.total):
            return parts.total, np.full(self.n_theta + len(self.unknowns), np.nan)
        grad = self.ev.backward(seeds)
        if self.unknowns:
            if self.log_space:
                grad_params = grad_params * np.array([pvals[n] for n in self.unknowns])
            grad = np.concatenate([grad, grad_params])
        key = np.asarray(z).tobytes()
        self._recent[key] = parts
        if len(self._recent) > 64:
            self._recent.pop(next(iter(self._recent)))
        return parts.total, grad

    def parts_at(self, z) -> LossParts:
        key = np.asarray(z).tobytes()
        if key not in self._recent:
            self(z)
        return self._recent[key]


# --- reporting ------------------------------------------------------------------------

@dataclass
class LossReport:
    rows: list = field(default_factory=list)

    def append(self, row: dict) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)


class _CsvStream:
    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8", newline="")
            self._w = csv.writer(self._fh, lineterminator="\n")
            self._w.writerow(REPORT_COLUMNS)

    def write(self, row: dict) -> None:
        if self._fh is None:
            return
        self._w.writerow([row["epoch"]] + [repr(float(row[c])) for c in REPORT_COLUMNS[1:]])
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


@dataclass
class TestSet:
    """Held-out points for the error metrics; ``ref`` is ``None`` without a reference."""

    domain: np.ndarray
    ref: np.ndarray | None
    boundary: list          # per output (points, exact values)


def build_test_set(problem: PdeProblem, n: int = 10_000) -> TestSet:
    pts = sample_interior(problem, n, TEST_SEED)
    fn = reference_function(problem)
    ref = None if fn is None else fn(pts)
    bnd = []
    for o in problem.outputs:
        bp = problem.random_boundary(o, n, BOUNDARY_TEST_SEED)
        bnd.append((bp, problem.boundary_value(o, bp)))
    return TestSet(pts, ref, bnd)


@dataclass
class TrainResult:
    run: TrainRun
    theta: np.ndarray
    report: LossReport
    trace: OptTrace
    cores: CoResField | None = None
    net: MeanNetwork | None = None
    params: dict = field(default_factory=dict)
    param_trace: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    final_grad: np.ndarray | None = None
    predictor: Callable | None = None
    kappas: list = field(default_factory=list)
    deltas: list = field(default_factory=list)


# --- module one ----------------------------------------------------------------------

def boundary_data(run: TrainRun) -> list[BoundaryDataset]:
    """BC/IC samples per output, noise applied, observations merged in."""
    problem = run.problem
    data = sample_boundary(problem, run.plan)
    if run.noise > 0:
        out = []
        for o, ds in enumerate(data):
            rng_ = problem.solution_range(ds.output)
            out.append(corrupt_boundary(ds, run.noise, run.seed + NOISE_SEED_OFFSET + o, rng_))
        data = out
    if run.inverse:
        fn = reference_function(problem.__class__(**_true_params(run)))
        obs = sample_interior(problem, run.inverse.n_obs, run.seed + OBS_SEED_OFFSET)
        vals = fn(obs)
        data = [ds.merge(BoundaryDataset(obs, vals[:, o], "OBS", ds.output)) for o, ds in enumerate(data)]
    return data


def _true_params(run: TrainRun) -> dict:
    return dict(run.problem.params)


def module_one(problem: PdeProblem, kernel: KernelConfig | float = 2.0, plan: SamplePlan | None = None,
               seed: int = 0, hidden=(20, 20, 20, 20), data: list[BoundaryDataset] | None = None,
               eig_method: str = "jacobi") -> CoResField:
    """Calibrate one kernel block per output and attach a freshly initialized mean."""
    plan = plan or SamplePlan()
    if not isinstance(kernel, KernelConfig):
        kernel = KernelConfig.uniform(problem.d, float(kernel))
    if data is None:
        data = sample_boundary(problem, plan)
    blocks = [calibrate_nugget(ds, kernel, eig_method) for ds in data]
    net = init_network((problem.d, *hidden, problem.q), seed)
    cores = CoResField(net, blocks)
    cores.residual_refresh()
    return cores


def _field_for_run(run: TrainRun) -> CoResField:
    kernel = KernelConfig.uniform(run.problem.d, run.omega, kappa_max=run.kappa_max)
    return module_one(run.problem, kernel, run.plan, run.seed, run.hidden, boundary_data(run), run.eig_method)


# --- drivers --------------------------------------------------------------------------

def _residuals_at(ev: CoResEvaluator, theta):
    mb, _ = forward_tape(ev.net, ev.Xb, 0, theta)
    return [b.data.u - mb[sl, 0, o] for o, (b, sl) in enumerate(zip(ev.field.blocks, ev.slices))]


def _w0(ev: CoResEvaluator, pts):
    return [wj[:, 0, :] for wj in ev.field.weight_jets(pts, 0)]


class _Metrics:
    """Error metrics with the kernel weights of the test points cached."""

    def __init__(self, ev: _Evaluator, kind: str, test: TestSet, problem: PdeProblem):
        self.ev = ev
        self.kind = kind
        self.test = test
        self.problem = problem
        self._cache = {}
        if kind == "nn-cores":
            self._cache["domain"] = _w0(ev, test.domain)
            self._cache["boundary"] = [_w0(ev, bp) for bp, _ in test.boundary]
        elif kind == "pinn-hc":
            self._cache["domain"] = hard_constraint_jets(ev.hc, test.domain, 0)
            self._cache["boundary"] = [hard_constraint_jets(ev.hc, bp, 0) for bp, _ in test.boundary]

    def _apply(self, theta, pts, cache, r=None):
        m, _ = forward_tape(self.ev.net, pts, 0, theta)
        m = m[:, 0]
        if self.kind == "nn-cores":
            return m + np.stack([w @ ro for w, ro in zip(cache, r)], axis=-1), m
        if self.kind == "pinn-hc":
            a, b = cache
            return a[:, 0] * m + b[:, 0], m
        return m, m

    def __call__(self, theta) -> dict:
        r = _residuals_at(self.ev, theta) if self.kind == "nn-cores" else None
        out = {}
        if self.test.ref is not None:
            pred, mean = self._apply(theta, self.test.domain, self._cache.get("domain"), r)
            out["l2e_domain"] = l2e(pred.ravel(), self.test.ref.ravel())
            out["l2e_mean_only"] = l2e(mean.ravel(), self.test.ref.ravel())
            out["l2e_per_output"] = [l2e(pred[:, o], self.test.ref[:, o]) for o in range(pred.shape[1])]
        else:
            out["l2e_domain"] = out["l2e_mean_only"] = float("nan")
        b_l2, b_max = [], []
        for o, (bp, bv) in enumerate(self.test.boundary):
            if bp.shape[0] == 0:
                continue
            cache = None
            if self.kind == "nn-cores":
                cache = self._cache["boundary"][o]
            elif self.kind == "pinn-hc":
                cache = self._cache["boundary"][o]
            pred, _ = self._apply(theta, bp, cache, r)
            err = pred[:, o] - bv
            b_l2.append(float(np.sqrt(np.mean(err * err))))
            b_max.append(float(np.max(np.abs(err))))
        out["l2e_boundary"] = float(np.sqrt(np.mean(np.square(b_l2)))) if b_l2 else float("nan")
        out["boundary_max"] = b_max
        return out


def _make_evaluator(run: TrainRun):
    kind = run.model
    if kind == "nn-cores":
        cores = _field_for_run(run)
        return CoResEvaluator(cores), cores, None
    net = init_network(run.widths, run.seed)
    if kind == "pinn-hc":
        return HardConstraintEvaluator(net, run.problem), None, None
    per_seg = _pinn_per_segment(run)
    data = sample_boundary(run.problem, SamplePlan(n_bc=per_seg, n_pde=1, seed=run.seed))
    return PinnEvaluator(net), None, data


def _pinn_per_segment(run: TrainRun) -> int:
    segs = max(len(run.problem.segments(run.problem.outputs[0])), 1)
    return int(math.ceil(run.n_pinn_boundary / segs))


def train(run: TrainRun, test: TestSet | None = None, callback=None) -> TrainResult:
    """Module two for NN-CoRes (or the baseline trainers) under one optimizer budget."""
    ev, cores, pinn_data = _make_evaluator(run)
    colloc = sample_interior(run.problem, run.plan)
    obj = Objective(run, ev, colloc, pinn_data)
    if test is None:
        test = build_test_set(run.problem, run.n_test)
    metrics = _Metrics(ev, run.model, test, run.problem)
    z0 = obj.pack(ev.net.theta, run.inverse.guesses if run.inverse else None)
    report = LossReport()
    stream = _CsvStream(run.report_path)
    param_trace = []
    t0 = time.perf_counter()

    def record(epoch, z, f):
        theta, pvals = obj.unpack(z)
        parts = obj.parts_at(z)
        row = {
            "epoch": epoch, "loss_total": parts.total, "loss_pde": parts.pde,
            "loss_bc": parts.bc, "loss_ic": parts.ic,
            "l2e_domain": float("nan"), "l2e_boundary": float("nan"), "l2e_mean_only": float("nan"),
            "wall_seconds": time.perf_counter() - t0,
        }
        if epoch % run.eval_every == 0 or epoch == 0:
            m = metrics(theta)
            row.update({k: m[k] for k in ("l2e_domain", "l2e_boundary", "l2e_mean_only")})
            row["boundary_max"] = m["boundary_max"]
        if pvals:
            param_trace.append(dict(pvals))
            row.update({f"param_{k}": v for k, v in pvals.items()})
        report.append(row)
        stream.write(row)

    record(0, z0, None)

    def cb(epoch, z, f, g):
        if not math.isfinite(f):
            raise NonFiniteLoss(epoch, f)
        record(epoch, z, f)
        if callback is not None:
            return callback(epoch, z, f, g)
        return None

    try:
        z, trace = minimize(obj, z0, run.optim, cb)
    finally:
        stream.close()
    last = report.rows[-1]
    if math.isnan(last["l2e_domain"]) and math.isnan(last["l2e_boundary"]):
        m = metrics(obj.unpack(z)[0])
        last.update({k: m[k] for k in ("l2e_domain", "l2e_boundary", "l2e_mean_only")})
        last["boundary_max"] = m["boundary_max"]
    theta, pvals = obj.unpack(z)
    final = metrics(theta)
    _, grad = obj(z)
    ev.net.theta[:] = theta
    result = TrainResult(
        run=run, theta=theta, report=report, trace=trace, net=ev.net, params=pvals,
        param_trace=param_trace, final=final, final_grad=grad[: obj.n_theta],
    )
    if cores is not None:
        cores.set_theta(theta)
        cores.residual_refresh()
        result.cores = cores
        result.kappas = [b.kappa for b in cores.blocks]
        result.deltas = [b.delta for b in cores.blocks]
    result.predictor = _predictor(ev, run.model, theta, cores)
    return result


def _predictor(ev: _Evaluator, kind: str, theta, cores):
    if kind == "nn-cores":
        return cores.predict
    net = ev.net.with_theta(theta)

    def predict(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        m, _ = forward_tape(net, pts, 0)
        if kind == "pinn-hc":
            a, b = hard_constraint_jets(ev.hc, pts, 0)
            return a[:, 0] * m[:, 0] + b[:, 0]
        return m[:, 0]

    return predict


def module_two(cores: CoResField, run: TrainRun, test: TestSet | None = None) -> TrainResult:
    """Train an existing field's mean network on the PDE residual alone."""
    if run.model != "nn-cores":
        raise ValueError("module_two trains nn-cores models")
    ev = CoResEvaluator(cores)
    colloc = sample_interior(run.problem, run.plan)
    obj = Objective(run, ev, colloc)
    test = test or build_test_set(run.problem, run.n_test)
    metrics = _Metrics(ev, "nn-cores", test, run.problem)
    report = LossReport()
    t0 = time.perf_counter()

    def cb(epoch, z, f, g):
        parts = obj.parts_at(z)
        row = {"epoch": epoch, "loss_total": parts.total, "loss_pde": parts.pde,
               "loss_bc": parts.bc, "loss_ic": parts.ic, "wall_seconds": time.perf_counter() - t0}
        if epoch % run.eval_every == 0:
            row.update({k: v for k, v in metrics(z).items() if k in REPORT_COLUMNS})
        report.append(row)

    z, trace = minimize(obj, cores.mean.theta.copy(), run.optim, cb)
    cores.set_theta(z)
    cores.residual_refresh()
    return TrainResult(run=run, theta=z, report=report, trace=trace, cores=cores, net=cores.mean,
                       final=metrics(z), final_grad=obj(z)[1])


def train_pinn(run: TrainRun, test=None) -> TrainResult:
    run.model = "pinn"
    return train(run, test)


def train_pinn_hc(run: TrainRun, test=None) -> TrainResult:
    run.problem.hard_constraint()
    run.model = "pinn-hc"
    return train(run, test)


def train_inverse(run: TrainRun, test=None) -> TrainResult:
    if not run.inverse:
        raise ValueError("inverse run needs at least one unknown parameter")
    return train(run, test)


def train_inviscid(run: TrainRun, test=None) -> TrainResult:
    if not run.inviscid:
        raise ValueError("train_inviscid needs the inviscid-burgers problem")
    return train(run, test)


def gradient_histogram(grad, bins: int = 14, lo: float = -12.0, hi: float = 2.0):
    """Counts of ``log10|g_i|`` over equal bins on ``[lo, hi]``.

    Zeros (and anything below ``10**lo``) land in the first bin, values above
    ``10**hi`` in the last.
    """
    g = np.abs(np.asarray(grad, dtype=np.float64).ravel())
    with np.errstate(divide="ignore"):
        lg = np.where(g > 0, np.log10(np.where(g > 0, g, 1.0)), lo)
    lg = np.clip(lg, lo, hi)
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.floor((lg - lo) / (hi - lo) * bins + 1e-9).astype(int), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return counts, edges
