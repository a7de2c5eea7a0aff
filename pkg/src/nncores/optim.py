"""Full-batch minimizers over flat parameter vectors: Adam and L-BFGS.

Both take ``loss_and_grad(theta) -> (float, ndarray)`` and an initial vector
and return the final vector with an :class:`OptTrace`. One epoch is one
optimizer iteration (one Adam update, or one L-BFGS direction plus its line
search).
"""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteLoss

log = logging.getLogger(__name__)

LossAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]
Callback = Callable[[int, np.ndarray, float, np.ndarray], "bool | None"]

DEFAULT_LR = {"adam": 1e-3, "lbfgs": 1e-2}


@dataclass
class OptimConfig:
    method: str = "lbfgs"
    learning_rate: float | None = None
    epochs: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    history: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 25
    tolerance_grad: float = 1e-11
    curvature_eps: float = 1e-10
    iterations_per_epoch: int = 1

    def __post_init__(self):
        if self.method not in DEFAULT_LR:
            raise ValueError(f"unknown method {self.method!r}")
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LR[self.method]
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.history < 1 or self.max_ls < 1 or self.iterations_per_epoch < 1:
            raise ValueError("history, max_ls and iterations_per_epoch must be >= 1")


@dataclass
class OptTrace:
    loss: list = field(default_factory=list)
    grad_inf: list = field(default_factory=list)
    wall: list = field(default_factory=list)
    n_evals: int = 0
    message: str = ""

    @property
    def epochs(self) -> int:
        return len(self.loss)

    def record(self, loss: float, grad: np.ndarray, t0: float) -> None:
        self.loss.append(float(loss))
        self.grad_inf.append(float(np.max(np.abs(grad))) if grad.size else 0.0)
        self.wall.append(time.perf_counter() - t0)


class _Counted:
    def __init__(self, fn: LossAndGrad, trace: OptTrace):
        self.fn = fn
        self.trace = trace

    def __call__(self, x):
        f, g = self.fn(x)
        self.trace.n_evals += 1
        return float(f), np.asarray(g, dtype=np.float64)


def minimize_adam(loss_and_grad: LossAndGrad, theta0, cfg: OptimConfig | None = None,
                  callback: Callback | None = None):
    cfg = cfg or OptimConfig(method="adam")
    theta = np.array(theta0, dtype=np.float64)
    trace = OptTrace()
    fg = _Counted(loss_and_grad, trace)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    lr, b1, b2 = cfg.learning_rate, cfg.beta1, cfg.beta2
    t0 = time.perf_counter()
    for k in range(1, cfg.epochs + 1):
        f, g = fg(theta)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise NonFiniteLoss(k, f)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**k)
        vhat = v / (1 - b2**k)
        theta = theta - lr * mhat / (np.sqrt(vhat) + cfg.eps)
        trace.record(f, g, t0)
        if callback is not None and callback(k, theta, f, g):
            trace.message = "stopped by callback"
            break
    else:
        trace.message = "epoch budget reached"
    return theta, trace


# --- L-BFGS ---------------------------------------------------------------------

def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimizer of the cubic through two points with slopes, clamped to [lo, hi]."""
    if not np.isfinite(f2) or not np.isfinite(g2):
        return 0.5 * (lo + hi)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2_sq = d1 * d1 - g1 * g2
    if d2_sq >= 0:
        d2 = np.sqrt(d2_sq)
        if x1 <= x2:
            pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2 * d2))
        else:
            pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2 * d2))
        if np.isfinite(pos):
            return min(max(pos, lo), hi)
    return 0.5 * (lo + hi)


@dataclass
class _LsResult:
    t: float
    f: float
    g: np.ndarray
    ok: bool
    evals: int


def strong_wolfe(fg, x, d, f0, g0, t, c1=1e-4, c2=0.9, max_ls=25, f_eps=1e-12) -> _LsResult:
    """Bracketing line search with cubic interpolation in the zoom phase.

    The returned step always satisfies the sufficient-decrease condition
    when ``ok`` is true; the curvature condition holds unless the trial
    budget ran out first.

    Near the loss floor, differences in ``f`` drown in rounding. A trial whose
    value lies within ``f_eps * |f0|`` of ``f0`` is then accepted on the
    approximate Wolfe test of Hager and Zhang (slope-based decrease plus
    strong curvature), so sufficient decrease holds up to that tolerance.
    """
    gtd0 = float(g0 @ d)
    f_tol = f0 + f_eps * abs(f0)

    def approx_wolfe(f_new, gtd_new):
        return f_new <= f_tol and -c2 * gtd0 >= gtd_new >= c2 * gtd0 and gtd_new <= (2 * c1 - 1) * gtd0
    t_prev, f_prev, gtd_prev = 0.0, f0, gtd0
    g_prev = g0
    best = None
    evals = 0
    bracket = None
    while evals < max_ls:
        f_new, g_new = fg(x + t * d)
        evals += 1
        gtd_new = float(g_new @ d) if np.all(np.isfinite(g_new)) else np.nan
        finite = np.isfinite(f_new) and np.isfinite(gtd_new)
        armijo = finite and f_new <= f0 + c1 * t * gtd0
        if armijo and (best is None or f_new < best.f):
            best = _LsResult(t, f_new, g_new, True, evals)
        if finite and approx_wolfe(f_new, gtd_new):
            return _LsResult(t, f_new, g_new, True, evals)
        if not armijo or (evals > 1 and f_new >= f_prev):
            bracket = [(t_prev, f_prev, gtd_prev, g_prev), (t, f_new, gtd_new, g_new)]
            break
        if abs(gtd_new) <= -c2 * gtd0:
            return _LsResult(t, f_new, g_new, True, evals)
        if gtd_new >= 0:
            bracket = [(t, f_new, gtd_new, g_new), (t_prev, f_prev, gtd_prev, g_prev)]
            break
        lo, hi = t + 0.01 * (t - t_prev), 10.0 * t
        t_next = _cubic_min(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, lo, hi)
        t_prev, f_prev, gtd_prev, g_prev = t, f_new, gtd_new, g_new
        t = t_next
    if bracket is None:
        if best is not None and best.f < f0:
            best.evals = evals
            return best
        return _LsResult(0.0, f0, g0, False, evals)

    # zoom: bracket[0] is always the low end (lowest Armijo-satisfying value)
    insuf_progress = False
    while evals < max_ls:
        (a_t, a_f, a_g, _), (b_t, b_f, b_g, _) = bracket
        if abs(b_t - a_t) * np.max(np.abs(d)) < 1e-16:
            break
        lo, hi = min(a_t, b_t), max(a_t, b_t)
        t = _cubic_min(a_t, a_f, a_g, b_t, b_f, b_g, lo, hi)
        # keep the trial away from the bracket ends
        eps = 0.1 * (hi - lo)
        if min(hi - t, t - lo) < eps:
            if insuf_progress or t >= hi or t <= lo:
                t = hi - eps if abs(t - hi) < abs(t - lo) else lo + eps
                insuf_progress = False
            else:
                insuf_progress = True
        else:
            insuf_progress = False
        f_new, g_new = fg(x + t * d)
        evals += 1
        gtd_new = float(g_new @ d) if np.all(np.isfinite(g_new)) else np.nan
        finite = np.isfinite(f_new) and np.isfinite(gtd_new)
        armijo = finite and f_new <= f0 + c1 * t * gtd0
        if armijo and (best is None or f_new < best.f):
            best = _LsResult(t, f_new, g_new, True, evals)
        if finite and approx_wolfe(f_new, gtd_new):
            return _LsResult(t, f_new, g_new, True, evals)
        if not armijo or f_new >= a_f:
            bracket[1] = (t, f_new, gtd_new, g_new)
        else:
            if abs(gtd_new) <= -c2 * gtd0:
                return _LsResult(t, f_new, g_new, True, evals)
            if gtd_new * (b_t - a_t) >= 0:
                bracket[1] = bracket[0]
            bracket[0] = (t, f_new, gtd_new, g_new)
    # a "best" point with no strict decrease is a stall, not progress
    if best is not None and best.f < f0:
        best.evals = evals
        return best
    return _LsResult(0.0, f0, g0, False, evals)


def _two_loop(g, pairs):
    q = -g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def minimize_lbfgs(loss_and_grad: LossAndGrad, theta0, cfg: OptimConfig | None = None,
                   callback: Callback | None = None):
    """L-BFGS with a strong-Wolfe line search.

    With no curvature history the search starts from ``learning_rate`` along
    the steepest-descent direction; afterwards the quasi-Newton step ``t = 1``
    is tried first. Pairs failing the curvature test are dropped. A failed
    search clears the history once and retries along the gradient; a second
    failure ends the run at the best point seen.

    One epoch is ``cfg.iterations_per_epoch`` iterations (PyTorch's
    ``max_iter`` per ``step()`` call); the trace and the callback see the
    state at the end of each epoch.
    """
    cfg = cfg or OptimConfig()
    x = np.array(theta0, dtype=np.float64)
    trace = OptTrace()
    fg = _Counted(loss_and_grad, trace)
    t0 = time.perf_counter()
    f, g = fg(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteLoss(0, f)
    pairs: deque = deque(maxlen=cfg.history)
    if np.max(np.abs(g), initial=0.0) <= cfg.tolerance_grad:
        trace.message = "initial point is stationary"
        return x, trace
    for epoch in range(1, cfg.epochs + 1):
        stop, moved = None, 0
        for _ in range(cfg.iterations_per_epoch):
            res = None
            for attempt in range(2):
                if pairs:
                    d = _two_loop(g, list(pairs))
                    t = 1.0
                    if not g @ d < 0:
                        pairs.clear()
                if not pairs:
                    d = -g
                    t = cfg.learning_rate
                res = strong_wolfe(fg, x, d, f, g, t, cfg.c1, cfg.c2, cfg.max_ls)
                if res.ok or not pairs:
                    break
                log.debug("epoch %d: line search failed, clearing history", epoch)
                pairs.clear()
            if not res.ok:
                stop = "line search failed"
                break
            s = res.t * d
            y = res.g - g
            sy = float(s @ y)
            if sy > cfg.curvature_eps * np.linalg.norm(s) * np.linalg.norm(y):
                pairs.append((s, y, 1.0 / sy))
            x = x + s
            f_old, f, g = f, res.f, res.g
            moved += 1
            if np.max(np.abs(g)) <= cfg.tolerance_grad:
                stop = "gradient tolerance reached"
                break
            if f == f_old and np.max(np.abs(s)) == 0.0:
                stop = "no progress"
                break
        if not moved:
            # the epoch's first search failed: nothing new to record
            trace.message = stop
            break
        trace.record(f, g, t0)
        if callback is not None and callback(epoch, x, f, g):
            trace.message = "stopped by callback"
            break
        if stop is not None:
            trace.message = stop
            break
    else:
        trace.message = "epoch budget reached"
    return x, trace


def minimize(loss_and_grad: LossAndGrad, theta0, cfg: OptimConfig, callback: Callback | None = None):
    if cfg.method == "adam":
        return minimize_adam(loss_and_grad, theta0, cfg, callback)
    return minimize_lbfgs(loss_and_grad, theta0, cfg, callback)
