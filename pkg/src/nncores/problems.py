"""Benchmark PDE systems: residual operators over jets, samplers and forcings.

Residuals are written against the channel layout of :mod:`nncores.autodiff`
(value, gradient, row-major Hessian). :meth:`PdeProblem.linearize` returns
the residuals together with their partial derivatives with respect to every
jet entry they touch, which is what the trainers need to build adjoint seeds.
"""
from __future__ import annotations

from dataclasses import dataclass, field


import numpy as np

from .autodiff import JetBundle, n_channels
from .errors import MissingDerivative, WrongProblem
from .gp import BoundaryDataset

PI = np.pi


def ch_val() -> int:
    return 0


def ch_grad(k: int) -> int:
    return 1 + k


def ch_hess(k: int, l: int, d: int) -> int:
    return 1 + d + k * d + l


@dataclass
class Linearization:
    """Residuals ``(N, n_eq)`` and their sparse partials.

    ``partials[e]`` lists ``(channel, output, coeff)`` triples with ``coeff``
    broadcastable to ``(N,)``; repeated keys add up. ``param_partials`` maps
    a PDE parameter name to ``dR/dparam`` of shape ``(N, n_eq)``.
    """

    residuals: np.ndarray
    partials: list
    param_partials: dict = field(default_factory=dict)

    def seed(self, g: np.ndarray, n_ch: int, q: int) -> np.ndarray:
        """Pull a cotangent ``g (N, n_eq)`` on the residuals back to jet channels."""
        N = g.shape[0]
        out = np.zeros((N, n_ch, q))
        for e, terms in enumerate(self.partials):
            ge = g[:, e]
            for c, o, coeff in terms:
                out[:, c, o] += ge * coeff
        return out


@dataclass(frozen=True)
class Segment:
    """A boundary line ``x[axis] == value`` spanning the box in the other axis."""

    axis: int
    value: float
    tag: str


@dataclass
class SamplePlan:
    n_bc: int = 40
    n_pde: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.n_bc < 1:
            raise ValueError("n_bc must be >= 1")
        if self.n_pde < 1:
            raise ValueError("n_pde must be >= 1")


@dataclass
class HardConstraint:
    """Output transform ``a(x) * m(x) + b(x)``; each term is a sum of separable products."""

    a: list          # per output: list of terms, each a list of d (f, f', f'') callables
    b: list


def _factor_jets(terms, points: np.ndarray, order: int) -> np.ndarray:
    # jets (N, C) of sum_t prod_k f_tk(x_k)
    N, d = points.shape
    out = np.zeros((N, n_channels(d, order)))
    for term in terms:
        vals = [np.asarray(f[0](points[:, k]), dtype=float) * np.ones(N) for k, f in enumerate(term)]
        d1 = [np.asarray(f[1](points[:, k]), dtype=float) * np.ones(N) for k, f in enumerate(term)]
        d2 = [np.asarray(f[2](points[:, k]), dtype=float) * np.ones(N) for k, f in enumerate(term)]

        def prod(repl):
            p = np.ones(N)
            for k in range(d):
                p = p * repl.get(k, vals[k])
            return p

        out[:, 0] += prod({})
        if order >= 1:
            for k in range(d):
                out[:, ch_grad(k)] += prod({k: d1[k]})
        if order >= 2:
            for k in range(d):
                for l in range(d):
                    rep = {k: d2[k]} if k == l else {k: d1[k], l: d1[l]}
                    out[:, ch_hess(k, l, d)] += prod(rep)
    return out


def _poly(c0, c1=0.0, c2=0.0, c3=0.0):
    # (f, f', f'') of c0 + c1 x + c2 x^2 + c3 x^3
    return (
        lambda x: c0 + c1 * x + c2 * x**2 + c3 * x**3,
        lambda x: c1 + 2 * c2 * x + 3 * c3 * x**2,
        lambda x: 2 * c2 + 6 * c3 * x,
    )


def _sin(a, scale=1.0):
    w = a * PI
    return (lambda x: scale * np.sin(w * x), lambda x: scale * w * np.cos(w * x), lambda x: -scale * w * w * np.sin(w * x))


ONE = _poly(1.0)


class PdeProblem:
    """Geometry, parameters and residual operator of one benchmark."""

    name: str = ""
    d: int = 2
    outputs: tuple = ("u",)
    inputs: tuple = ("x", "y")
    equations: tuple = ("pde",)
    lower: tuple = (0.0, 0.0)
    upper: tuple = (1.0, 1.0)
    forced = False

    def __init__(self, **params):
        self.params = dict(self.default_params())
        unknown = set(params) - set(self.params)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        self.params.update({k: float(v) for k, v in params.items()})
        self.validate()

    def default_params(self) -> dict:
        return {}

    def validate(self) -> None:
        pass

    def __repr__(self):
        return f"{type(self).__name__}({', '.join(f'{k}={v:g}' for k, v in self.params.items())})"

    @property
    def q(self) -> int:
        return len(self.outputs)

    # --- boundary description -------------------------------------------------
    def segments(self, output: str) -> list[Segment]:
        return [Segment(1, self.upper[1], "BC"), Segment(1, self.lower[1], "BC"),
                Segment(0, self.lower[0], "BC"), Segment(0, self.upper[0], "BC")]

    def boundary_value(self, output: str, X: np.ndarray) -> np.ndarray:
        return np.zeros(X.shape[0])

    def segment_points(self, seg: Segment, n: int) -> np.ndarray:
        other = 1 - seg.axis
        pts = np.empty((n, 2))
        pts[:, seg.axis] = seg.value
        pts[:, other] = np.linspace(self.lower[other], self.upper[other], n)
        return pts

    def random_boundary(self, output: str, n: int, seed: int) -> np.ndarray:
        """``n`` uniform points on the boundary segments of ``output``, length weighted."""
        rng = np.random.Generator(np.random.PCG64(seed))
        segs = self.segments(output)
        lengths = np.array([self.upper[1 - s.axis] - self.lower[1 - s.axis] for s in segs])
        which = rng.choice(len(segs), size=n, p=lengths / lengths.sum())
        t = rng.uniform(size=n)
        pts = np.empty((n, 2))
        for i, s in enumerate(segs):
            sel = which == i
            other = 1 - s.axis
            pts[sel, s.axis] = s.value
            pts[sel, other] = self.lower[other] + t[sel] * (self.upper[other] - self.lower[other])
        return pts

    # --- residuals --------------------------------------------------------------
    def linearize(self, x: np.ndarray, ch: np.ndarray) -> Linearization:
        raise NotImplementedError

    def _need(self, ch: np.ndarray) -> None:
        if ch.shape[1] < n_channels(self.d, 2):
            raise MissingDerivative(f"{self.name} residual needs second-order jets")

    def forcing(self, x: np.ndarray) -> np.ndarray:
        raise WrongProblem(f"{self.name} has no manufactured forcing")

    def exact(self, x: np.ndarray) -> np.ndarray:
        raise WrongProblem(f"{self.name} has no analytic solution")

    def hard_constraint(self) -> HardConstraint:
        from .errors import TransformUndefined

        raise TransformUndefined(f"no hard-constraint transform for {self.name}")

    @property
    def has_ic(self) -> bool:
        return any(s.tag == "IC" for o in self.outputs for s in self.segments(o))

    def solution_range(self, output: str = "u") -> float | None:
        return None


def _box_hc(lo: float, hi: float, q: int = 1) -> HardConstraint:
    # a = prod (x_k - lo)(hi - x_k), b = 0
    edge = _poly(-lo * hi, lo + hi, -1.0)
    zero = [[_poly(0.0), ONE]]
    return HardConstraint(a=[[[edge, edge]]] * q, b=[zero] * q)


class Burgers(PdeProblem):
    name = "burgers"
    inputs = ("x", "t")
    lower = (-1.0, 0.0)
    upper = (1.0, 1.0)

    def default_params(self):
        return {"nu": 0.02 / PI}

    def validate(self):
        if self.params["nu"] < 0:
            from .errors import InvalidViscosity

            raise InvalidViscosity("nu must be non-negative")

    def segments(self, output):
        # BC lines first so their exact zeros win at the shared corners
        return [Segment(0, -1.0, "BC"), Segment(0, 1.0, "BC"), Segment(1, 0.0, "IC")]

    def boundary_value(self, output, X):
        val = np.where(X[:, 1] == 0.0, -np.sin(PI * X[:, 0]), 0.0)
        return np.where(np.abs(X[:, 0]) == 1.0, 0.0, val)

    def linearize(self, x, ch):
        self._need(ch)
        nu = self.params["nu"]
        u, ux, ut, uxx = ch[:, 0, 0], ch[:, 1, 0], ch[:, 2, 0], ch[:, 3, 0]
        R = ut + u * ux - nu * uxx
        partials = [[(0, 0, ux), (1, 0, u), (2, 0, 1.0), (3, 0, -nu)]]
        return Linearization(R[:, None], partials, {"nu": -uxx[:, None]})

    def hard_constraint(self):
        # a = (1 - x^2)(1 - e^{-t}),  b = -2 sin(pi x) / (1 + e^{-t})
        a_t = (lambda t: 1 - np.exp(-t), lambda t: np.exp(-t), lambda t: -np.exp(-t))

        def g(t):
            return 1.0 / (1.0 + np.exp(-t))

        b_t = (g, lambda t: g(t) * (1 - g(t)), lambda t: g(t) * (1 - g(t)) * (1 - 2 * g(t)))
        return HardConstraint(a=[[[_poly(1.0, 0.0, -1.0), a_t]]], b=[[[_sin(1.0, -2.0), b_t]]])

    def solution_range(self, output="u"):
        return 2.0


class InviscidBurgers(Burgers):
    name = "inviscid-burgers"

    def default_params(self):
        return {"nu": 0.0, "k1": 0.2}

    def validate(self):
        if self.params["nu"] != 0.0:
            raise ValueError("inviscid-burgers requires nu = 0")
        k1 = self.params["k1"]
        if not 0.1 <= k1 <= 0.4:
            raise ValueError(f"k1 must lie in [0.1, 0.4], got {k1}")


class Elliptic(PdeProblem):
    name = "elliptic"
    forced = True

    def default_params(self):
        return {"alpha": 30.0}

    def validate(self):
        if self.params["alpha"] not in (20.0, 30.0):
            raise ValueError("alpha must be 20 or 30")

    def exact(self, x):
        x = np.atleast_2d(x)
        s1 = np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])
        s4 = np.sin(4 * PI * x[:, 0]) * np.sin(4 * PI * x[:, 1])
        return s1 + 2 * s4

    def forcing(self, x):
        x = np.atleast_2d(x)
        s1 = np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])
        s4 = np.sin(4 * PI * x[:, 0]) * np.sin(4 * PI * x[:, 1])
        u = s1 + 2 * s4
        return -2 * PI**2 * s1 - 64 * PI**2 * s4 - self.params["alpha"] * u**3

    def linearize(self, x, ch):
        self._need(ch)
        a = self.params["alpha"]
        u, uxx, uyy = ch[:, 0, 0], ch[:, 3, 0], ch[:, 6, 0]
        R = uxx + uyy - a * u**3 - self.forcing(x)
        partials = [[(0, 0, -3 * a * u * u), (3, 0, 1.0), (6, 0, 1.0)]]
        return Linearization(R[:, None], partials, {"alpha": (self.exact(x) ** 3 - u**3)[:, None]})

    def hard_constraint(self):
        return _box_hc(0.0, 1.0)

    def solution_range(self, output="u"):
        g = np.linspace(0, 1, 401)
        xx, yy = np.meshgrid(g, g)
        u = self.exact(np.column_stack([xx.ravel(), yy.ravel()]))
        return float(u.max() - u.min())


class Eikonal(PdeProblem):
    name = "eikonal"

    def default_params(self):
        return {"epsilon": 0.05}

    def validate(self):
        if self.params["epsilon"] not in (0.01, 0.05):
            raise ValueError("epsilon must be 0.01 or 0.05")

    def linearize(self, x, ch):
        self._need(ch)
        eps = self.params["epsilon"]
        ux, uy, uxx, uyy = ch[:, 1, 0], ch[:, 2, 0], ch[:, 3, 0], ch[:, 6, 0]
        R = ux * ux + uy * uy - eps * (uxx + uyy) - 1.0
        partials = [[(1, 0, 2 * ux), (2, 0, 2 * uy), (3, 0, -eps), (6, 0, -eps)]]
        return Linearization(R[:, None], partials, {"epsilon": -(uxx + uyy)[:, None]})

    def hard_constraint(self):
        return _box_hc(0.0, 1.0)

    def solution_range(self, output="u"):
        from .reference import eikonal_reference

        return float(eikonal_reference(self.params["epsilon"], 128).values.max())


class Helmholtz(PdeProblem):
    name = "helmholtz"
    lower = (-1.0, -1.0)
    upper = (1.0, 1.0)
    forced = True

    def default_params(self):
        return {"a1": 1.0, "a2": 4.0}

    def exact(self, x):
        x = np.atleast_2d(x)
        return np.sin(self.params["a1"] * PI * x[:, 0]) * np.sin(self.params["a2"] * PI * x[:, 1])

    def forcing(self, x):
        a1, a2 = self.params["a1"], self.params["a2"]
        return (1 - (a1 * a1 + a2 * a2) * PI**2) * self.exact(x)

    def linearize(self, x, ch):
        self._need(ch)
        u, uxx, uyy = ch[:, 0, 0], ch[:, 3, 0], ch[:, 6, 0]
        R = uxx + uyy + u - self.forcing(x)
        return Linearization(R[:, None], [[(0, 0, 1.0), (3, 0, 1.0), (6, 0, 1.0)]])

    def hard_constraint(self):
        return _box_hc(-1.0, 1.0)

    def solution_range(self, output="u"):
        return 2.0


class LidDrivenCavity(PdeProblem):
    name = "ldc"
    outputs = ("u", "v", "p")
    equations = ("continuity", "momentum_x", "momentum_y")

    def default_params(self):
        return {"A": 3.0, "nu": 0.01, "rho": 1.0}

    def validate(self):
        if self.params["A"] not in (3.0, 5.0):
            raise ValueError("A must be 3 or 5")

    @property
    def reynolds(self) -> float:
        p = self.params
        return p["rho"] * (2 * p["A"] / PI) * 1.0 / p["nu"]

    def segments(self, output):
        if output == "p":
            return []
        return super().segments(output)  # lid first: corners take the lid value

    def boundary_value(self, output, X):
        if output == "u":
            return np.where(X[:, 1] == 1.0, self.params["A"] * np.sin(PI * X[:, 0]), 0.0)
        return np.zeros(X.shape[0])

    def linearize(self, x, ch):
        self._need(ch)
        nu, rho = self.params["nu"], self.params["rho"]
        u, v = ch[:, 0, 0], ch[:, 0, 1]
        ux, uy, vx, vy = ch[:, 1, 0], ch[:, 2, 0], ch[:, 1, 1], ch[:, 2, 1]
        px, py = ch[:, 1, 2], ch[:, 2, 2]
        lap_u = ch[:, 3, 0] + ch[:, 6, 0]
        lap_v = ch[:, 3, 1] + ch[:, 6, 1]
        R = np.column_stack([
            ux + vy,
            u * ux + v * uy + px / rho - nu * lap_u,
            u * vx + v * vy + py / rho - nu * lap_v,
        ])
        partials = [
            [(1, 0, 1.0), (2, 1, 1.0)],
            [(0, 0, ux), (1, 0, u), (0, 1, uy), (2, 0, v), (1, 2, 1 / rho), (3, 0, -nu), (6, 0, -nu)],
            [(0, 0, vx), (1, 1, u), (0, 1, vy), (2, 1, v), (2, 2, 1 / rho), (3, 1, -nu), (6, 1, -nu)],
        ]
        zeros = np.zeros_like(u)
        return Linearization(R, partials, {"nu": np.column_stack([zeros, -lap_u, -lap_v])})

    def hard_constraint(self):
        edge = _poly(0.0, 1.0, -1.0)
        box = [[edge, edge]]
        lid = [[_sin(1.0, self.params["A"]), _poly(0.0, 0.0, 3.0, -2.0)]]
        zero = [[_poly(0.0), ONE]]
        # pressure is pinned at the origin only
        a_p = [[_poly(0.0, 1.0), ONE], [ONE, _poly(0.0, 1.0)]]
        return HardConstraint(a=[box, box, a_p], b=[lid, zero, zero])

    def random_boundary(self, output, n, seed):
        if output == "p":
            return np.zeros((0, 2))
        return super().random_boundary(output, n, seed)

    def solution_range(self, output="u"):
        return {"u": self.params["A"], "v": None, "p": None}.get(output)


PROBLEMS = {
    cls.name: cls for cls in (Burgers, Elliptic, Eikonal, LidDrivenCavity, Helmholtz, InviscidBurgers)
}


def make_problem(name: str, **params) -> PdeProblem:
    try:
        cls = PROBLEMS[name]
    except KeyError:
        raise WrongProblem(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return cls(**params)


# --- operations --------------------------------------------------------------

def pde_residual(problem: PdeProblem, jets: JetBundle, x=None) -> np.ndarray:
    """Residuals ``(N, n_eq)`` of ``problem`` for a batch of output jets.

    ``x`` is needed only by problems with a manufactured forcing.
    """
    if jets.hess is None:
        raise MissingDerivative(f"{problem.name} residual needs second-order jets")
    single = jets.value.ndim == 1
    if single:
        jets = JetBundle(jets.value[None], jets.grad[None], jets.hess[None])
    if x is None:
        if problem.forced:
            raise ValueError(f"{problem.name} residual needs the evaluation points")
        x = np.zeros((jets.n_points, problem.d))
    lin = problem.linearize(np.atleast_2d(x), jets.to_channels())
    return lin.residuals[0] if single else lin.residuals


def manufactured_forcing(problem: PdeProblem, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    val = problem.forcing(np.atleast_2d(x))
    return float(val[0]) if x.ndim == 1 else val


def sample_boundary(problem: PdeProblem, plan: SamplePlan) -> list[BoundaryDataset]:
    """One dataset per output, equispaced on each segment, exact duplicates dropped."""
    out = []
    for o in problem.outputs:
        segs = problem.segments(o)
        if not segs:
            # pressure gauge: the single pinned row
            out.append(BoundaryDataset(np.zeros((1, problem.d)), [0.0], "BC", o))
            continue
        pts, tags = [], []
        for s in segs:
            p = problem.segment_points(s, plan.n_bc)
            pts.append(p)
            tags += [s.tag] * p.shape[0]
        X = np.vstack(pts)
        _, first = np.unique(X, axis=0, return_index=True)
        keep = np.sort(first)
        X = X[keep]
        tags = np.asarray(tags, dtype=object)[keep]
        out.append(BoundaryDataset(X, problem.boundary_value(o, X), tags, o))
    return out


def sample_interior(problem: PdeProblem, plan: SamplePlan | int, seed: int | None = None) -> np.ndarray:
    """Uniform points in the open box, deterministic per seed."""
    if isinstance(plan, SamplePlan):
        n, seed = plan.n_pde, plan.seed if seed is None else seed
    else:
        n = int(plan)
        seed = 0 if seed is None else seed
    rng = np.random.Generator(np.random.PCG64(seed))
    lo = np.asarray(problem.lower)
    hi = np.asarray(problem.upper)
    pts = np.empty((0, problem.d))
    while pts.shape[0] < n:
        cand = lo + rng.uniform(size=(n, problem.d)) * (hi - lo)
        ok = np.all((cand > lo) & (cand < hi), axis=1)
        pts = np.vstack([pts, cand[ok]])
    return pts[:n]


def lambda_weight(u_x, k1: float = 0.2):
    """Gradient-based residual weight ``1 / (k1 (|u_x| - u_x) + 1)``."""
    u_x = np.asarray(u_x, dtype=np.float64)
    return 1.0 / (k1 * (np.abs(u_x) - u_x) + 1.0)


def rh_times(n: int = 64) -> np.ndarray:
    return np.arange(1, n + 1) / n


def rh_loss(field_or_fn, t_samples=None) -> float:
    """Mean squared drift of ``eta(0, t)`` away from ``eta(0, 0)``.

    ``field_or_fn`` is a :class:`CoResField` or any callable mapping an
    ``(N, 2)`` array to ``(N,)`` or ``(N, 1)`` values.
    """
    t = rh_times() if t_samples is None else np.asarray(t_samples, dtype=np.float64)
    pts = np.column_stack([np.zeros(t.size + 1), np.concatenate([[0.0], t])])
    if hasattr(field_or_fn, "predict"):
        if field_or_fn.d != 2 or field_or_fn.mean.q != 1:
            raise WrongProblem("rh_loss applies to the scalar Burgers field")
        vals = field_or_fn.predict(pts)[:, 0]
    else:
        vals = np.asarray(field_or_fn(pts)).reshape(-1)
    return float(np.mean((vals[1:] - vals[0]) ** 2))


def corrupt_boundary(data: BoundaryDataset, level: float, seed: int, value_range: float | None = None) -> BoundaryDataset:
    """Add zero-mean Gaussian noise with std ``level * value_range``.

    ``value_range`` defaults to the spread of the dataset itself.
    """
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return data.with_values(data.u.copy())
    if value_range is None:
        value_range = float(np.ptp(data.u))
    rng = np.random.Generator(np.random.PCG64(seed))
    return data.with_values(data.u + rng.normal(0.0, level * value_range, size=data.n))


def hard_constraint_jets(hc: HardConstraint, points: np.ndarray, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Jets ``(N, C, q)`` of the transform factors ``a`` and offsets ``b``."""
    a = np.stack([_factor_jets(t, points, order) for t in hc.a], axis=-1)
    b = np.stack([_factor_jets(t, points, order) for t in hc.b], axis=-1)
    return a, b
