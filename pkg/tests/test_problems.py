import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from nncores.autodiff import JetBundle, n_channels
from nncores.errors import MissingDerivative, TransformUndefined, WrongProblem
from nncores.gp import BoundaryDataset
from nncores.problems import (
    PROBLEMS,
    SamplePlan,
    corrupt_boundary,
    hard_constraint_jets,
    lambda_weight,
    make_problem,
    manufactured_forcing,
    pde_residual,
    rh_loss,
    rh_times,
    sample_boundary,
    sample_interior,
)

X, Y = sp.symbols("x y")


def symbolic_jets(exprs, pts):
    """Order-2 jets of sympy expressions in (x, y), one output per expression."""
    n = pts.shape[0]
    q = len(exprs)
    value = np.empty((n, q))
    grad = np.empty((n, q, 2))
    hess = np.empty((n, q, 2, 2))
    for o, e in enumerate(exprs):
        def ev(expr):
            f = sp.lambdify((X, Y), expr, "numpy")
            return np.broadcast_to(f(pts[:, 0], pts[:, 1]), (n,))

        value[:, o] = ev(e)
        for k, a in enumerate((X, Y)):
            grad[:, o, k] = ev(sp.diff(e, a))
            for l, b in enumerate((X, Y)):
                hess[:, o, k, l] = ev(sp.diff(e, a, b))
    return JetBundle(value, grad, hess)


def single_jet(value, grad, hess):
    return JetBundle(np.array([[value]], float), np.array([grad], float), np.array([hess], float))


class TestResiduals:
    def test_burgers_constant_field(self):
        jet = single_jet(0.7, [[0.0, 0.0]], [[[0.0, 0.0], [0.0, 0.0]]])
        assert pde_residual(make_problem("burgers"), jet)[0] == 0.0

    @pytest.mark.parametrize("nu", [0.0, 0.01 / math.pi, 0.02 / math.pi, 0.5])
    def test_burgers_transport_term(self, nu):
        # inputs are (x, t): u_x = 1, u_t = 0, u_xx = 0
        jet = single_jet(0.5, [[1.0, 0.0]], [[[0.0, 0.0], [0.0, 0.0]]])
        problem = make_problem("burgers") if nu else make_problem("inviscid-burgers")
        if nu:
            problem.params["nu"] = nu
        assert pde_residual(problem, jet)[0] == pytest.approx(0.5)

    @pytest.mark.parametrize("eps", [0.01, 0.05])
    def test_eikonal_distance_ansatz(self, eps):
        jet = single_jet(0.3, [[1.0, 0.0]], [[[0.0, 0.0], [0.0, 0.0]]])
        assert pde_residual(make_problem("eikonal", epsilon=eps), jet)[0] == pytest.approx(0.0, abs=1e-15)

    def test_missing_derivative(self):
        with pytest.raises(MissingDerivative):
            pde_residual(make_problem("burgers"), JetBundle(np.zeros((1, 1)), np.zeros((1, 1, 2))))

    @pytest.mark.parametrize("alpha", [20.0, 30.0])
    def test_elliptic_exact_solution(self, alpha):
        u = sp.sin(sp.pi * X) * sp.sin(sp.pi * Y) + 2 * sp.sin(4 * sp.pi * X) * sp.sin(4 * sp.pi * Y)
        pts = np.random.default_rng(0).uniform(size=(1000, 2))
        problem = make_problem("elliptic", alpha=alpha)
        res = pde_residual(problem, symbolic_jets([u], pts), pts)
        assert np.max(np.abs(res)) <= 1e-8

    def test_helmholtz_exact_solution(self):
        u = sp.sin(sp.pi * X) * sp.sin(4 * sp.pi * Y)
        pts = np.random.default_rng(1).uniform(-1, 1, size=(1000, 2))
        res = pde_residual(make_problem("helmholtz"), symbolic_jets([u], pts), pts)
        assert np.max(np.abs(res)) <= 1e-8

    def test_ldc_continuity_on_divergence_free_field(self):
        psi = X**3 * Y**2 - 2 * X * Y**4 + X**2 * Y + 0.5 * X**4
        p = X * Y
        pts = np.random.default_rng(2).uniform(size=(200, 2))
        jets = symbolic_jets([sp.diff(psi, Y), -sp.diff(psi, X), p], pts)
        res = pde_residual(make_problem("ldc"), jets)
        assert res.shape == (200, 3)
        assert np.max(np.abs(res[:, 0])) <= 1e-10

    def test_ldc_momentum_against_symbolic(self):
        u = sp.sin(sp.pi * X) * Y**2
        v = X * Y * (1 - X)
        p = sp.cos(X + Y)
        nu = 0.01
        mom_x = u * sp.diff(u, X) + v * sp.diff(u, Y) + sp.diff(p, X) - nu * (sp.diff(u, X, 2) + sp.diff(u, Y, 2))
        pts = np.random.default_rng(3).uniform(size=(50, 2))
        res = pde_residual(make_problem("ldc"), symbolic_jets([u, v, p], pts))
        expect = sp.lambdify((X, Y), mom_x, "numpy")(pts[:, 0], pts[:, 1])
        np.testing.assert_allclose(res[:, 1], expect, atol=1e-12)

    @pytest.mark.parametrize("name", sorted(PROBLEMS))
    def test_seed_is_adjoint_of_linearization(self, name):
        """``Linearization.seed`` must equal the gradient of sum(g * R) over the jet channels."""
        problem = make_problem(name)
        rng = np.random.default_rng(4)
        n, d, q = 6, problem.d, problem.q
        C = n_channels(d, 2)
        x = rng.uniform(0.1, 0.9, size=(n, d))
        ch = rng.standard_normal((n, C, q))
        lin = problem.linearize(x, ch)
        g = rng.standard_normal(lin.residuals.shape)
        seed = lin.seed(g, C, q)
        h = 1e-6
        for i in range(n):
            for c in range(C):
                for o in range(q):
                    e = np.zeros_like(ch)
                    e[i, c, o] = h
                    fp = np.sum(g * problem.linearize(x, ch + e).residuals)
                    fm = np.sum(g * problem.linearize(x, ch - e).residuals)
                    assert seed[i, c, o] == pytest.approx((fp - fm) / (2 * h), rel=1e-6, abs=1e-7)


class TestForcing:
    def test_elliptic_centre(self):
        value = manufactured_forcing(make_problem("elliptic", alpha=30), [0.5, 0.5])
        assert value == pytest.approx(-2 * math.pi**2 - 30, rel=1e-12)
        assert value == pytest.approx(-49.7392, abs=5e-5)

    def test_helmholtz_zero(self):
        assert manufactured_forcing(make_problem("helmholtz"), [0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)

    def test_helmholtz_peak(self):
        value = manufactured_forcing(make_problem("helmholtz"), [0.5, 0.125])
        # 17 pi^2 = 167.7833, so the value is -166.7833
        assert value == pytest.approx(1 - 17 * math.pi**2, rel=1e-12)
        assert value == pytest.approx(-166.7833, abs=5e-5)

    def test_wrong_problem(self):
        with pytest.raises(WrongProblem):
            manufactured_forcing(make_problem("burgers"), [0.0, 0.5])


class TestParameters:
    def test_reynolds(self):
        assert 190 <= make_problem("ldc", A=3).reynolds <= 192
        assert 317 <= make_problem("ldc", A=5).reynolds <= 319

    @pytest.mark.parametrize("name,params", [
        ("elliptic", {"alpha": 25}), ("eikonal", {"epsilon": 0.1}), ("ldc", {"A": 4}),
        ("inviscid-burgers", {"k1": 0.5}), ("burgers", {"nu": -1.0}), ("burgers", {"gamma": 1.0}),
    ])
    def test_out_of_range(self, name, params):
        with pytest.raises(ValueError):
            make_problem(name, **params)

    def test_unknown_name(self):
        with pytest.raises(WrongProblem):
            make_problem("poisson")


class TestSampling:
    def test_burgers_initial_condition(self):
        data = sample_boundary(make_problem("burgers"), SamplePlan(n_bc=5))[0]
        ic = data.X[:, 1] == 0.0
        order = np.argsort(data.X[ic, 0])
        np.testing.assert_array_equal(data.X[ic, 0][order], [-1, -0.5, 0, 0.5, 1])
        np.testing.assert_allclose(data.u[ic][order], [0, 1, 0, -1, 0], atol=1e-15)

    def test_ldc_lid(self):
        u, v, p = sample_boundary(make_problem("ldc", A=3), SamplePlan(n_bc=3))
        lid = u.X[:, 1] == 1.0
        vals = dict(zip(u.X[lid, 0], u.u[lid]))
        assert vals[0.0] == 0.0 and vals[1.0] == pytest.approx(0.0, abs=1e-15)
        assert vals[0.5] == pytest.approx(3.0)
        np.testing.assert_array_equal(v.u, 0.0)
        assert p.n == 1 and p.u[0] == 0.0 and np.all(p.X == 0)

    @pytest.mark.parametrize("name", sorted(PROBLEMS))
    def test_values_follow_boundary_function(self, name):
        problem = make_problem(name)
        for ds in sample_boundary(problem, SamplePlan(n_bc=17)):
            if problem.segments(ds.output):
                np.testing.assert_array_equal(ds.u, problem.boundary_value(ds.output, ds.X))
            assert not ds.has_duplicates

    def test_forty_per_segment(self):
        data = sample_boundary(make_problem("burgers"), SamplePlan(n_bc=40))[0]
        assert data.n == 3 * 40 - 2  # the two corners are shared
        data = sample_boundary(make_problem("elliptic"), SamplePlan(n_bc=40))[0]
        assert data.n == 4 * 40 - 4

    def test_interior_deterministic(self):
        problem = make_problem("eikonal")
        a = sample_interior(problem, SamplePlan(n_pde=100, seed=3))
        b = sample_interior(problem, SamplePlan(n_pde=100, seed=3))
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("name", sorted(PROBLEMS))
    def test_interior_strictly_inside(self, name):
        problem = make_problem(name)
        pts = sample_interior(problem, 2000, 1)
        assert np.all(pts > np.asarray(problem.lower)) and np.all(pts < np.asarray(problem.upper))

    def test_interior_mean(self):
        # 3 sigma of the mean of 1e4 uniforms is 3 / sqrt(12e4) < 0.01
        pts = sample_interior(make_problem("elliptic"), 10_000, 0)
        np.testing.assert_allclose(pts.mean(axis=0), [0.5, 0.5], atol=0.01)


class TestInviscidHelpers:
    def test_lambda_flat_for_positive_slope(self):
        np.testing.assert_array_equal(lambda_weight(np.array([0.0, 0.3, 50.0]), 0.2), 1.0)

    def test_lambda_known_value(self):
        assert lambda_weight(-1.0, 0.2) == pytest.approx(1 / 1.4)
        assert lambda_weight(-1.0, 0.2) == pytest.approx(0.714286, abs=5e-7)

    def test_lambda_vanishes(self):
        assert 0 < lambda_weight(-1e12, 0.2) < 1e-11

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(-1e3, 1e3), b=st.floats(-1e3, 1e3), k1=st.floats(0.1, 0.4))
    def test_lambda_monotone_and_bounded(self, a, b, k1):
        lo, hi = min(a, b), max(a, b)
        la, lb = lambda_weight(lo, k1), lambda_weight(hi, k1)
        assert 0 < la <= lb <= 1

    def test_rh_times(self):
        t = rh_times()
        assert t.size == 64 and t[0] > 0 and t[-1] == 1.0

    def test_rh_loss_odd_field(self):
        assert rh_loss(lambda p: -np.sin(np.pi * p[:, 0]) * (1 + p[:, 1])) == 0.0

    def test_rh_loss_constant_drift(self):
        fn = lambda p: np.where(p[:, 1] > 0, 0.3, -0.1)
        assert rh_loss(fn, np.linspace(0.1, 1, 8)) == pytest.approx(0.16)

    def test_rh_loss_random_field(self):
        from nncores.autodiff import init_network
        from nncores.gp import CoResField, KernelConfig, calibrate_nugget

        problem = make_problem("inviscid-burgers")
        data = sample_boundary(problem, SamplePlan(n_bc=20))[0]
        f = CoResField(init_network((2, 10, 10, 1), 5), [calibrate_nugget(data, KernelConfig.uniform(2))])
        f.residual_refresh()
        t = np.random.default_rng(0).uniform(size=8)
        ref = f.posterior_jet(np.array([0.0, 0.0]), 0).value[0]
        devs = [f.posterior_jet(np.array([0.0, ti]), 0).value[0] - ref for ti in t]
        assert rh_loss(f, t) == pytest.approx(sum(v * v for v in devs) / 8, rel=1e-12)

    def test_rh_loss_wrong_field(self):
        from nncores.autodiff import init_network
        from nncores.gp import CoResField, KernelConfig, calibrate_nugget

        blocks = [calibrate_nugget(np.array([[0.0, 0.0]]), KernelConfig.uniform(2)) for _ in range(3)]
        with pytest.raises(WrongProblem):
            rh_loss(CoResField(init_network((2, 4, 3), 0), blocks))


class TestCorruption:
    def test_level_zero(self):
        data = sample_boundary(make_problem("burgers"), SamplePlan())[0]
        out = corrupt_boundary(data, 0.0, seed=1)
        np.testing.assert_array_equal(out.u, data.u)

    def test_noise_std(self):
        # chi-square: sample std of 1e4 normals is within 5% with overwhelming probability
        data = BoundaryDataset(np.zeros((10_000, 2)), np.zeros(10_000), "BC")
        out = corrupt_boundary(data, 0.01, seed=2, value_range=2.0)
        assert abs(np.std(out.u) - 0.02) <= 0.05 * 0.02

    def test_deterministic(self):
        data = sample_boundary(make_problem("burgers"), SamplePlan())[0]
        a = corrupt_boundary(data, 0.01, seed=9)
        b = corrupt_boundary(data, 0.01, seed=9)
        assert a.u.tobytes() == b.u.tobytes()

    def test_negative_level(self):
        data = sample_boundary(make_problem("burgers"), SamplePlan())[0]
        with pytest.raises(ValueError):
            corrupt_boundary(data, -0.1, seed=0)


class TestHardConstraint:
    def test_burgers_offset_matches_initial_condition(self):
        hc = make_problem("burgers").hard_constraint()
        x = np.linspace(-1, 1, 11)
        pts = np.column_stack([x, np.zeros_like(x)])
        a, b = hard_constraint_jets(hc, pts, 0)
        np.testing.assert_allclose(b[:, 0, 0], -np.sin(np.pi * x), atol=1e-15)
        np.testing.assert_array_equal(a[:, 0, 0], 0.0)

    @pytest.mark.parametrize("name", ["burgers", "elliptic", "eikonal", "helmholtz", "ldc"])
    def test_factor_vanishes_on_dirichlet_edges(self, name):
        problem = make_problem(name)
        hc = problem.hard_constraint()
        for o, out in enumerate(problem.outputs):
            if not problem.segments(out):
                continue
            pts = problem.random_boundary(out, 500, 3)
            a, b = hard_constraint_jets(hc, pts, 0)
            assert np.max(np.abs(a[:, 0, o])) <= 1e-15
            np.testing.assert_allclose(b[:, 0, o], problem.boundary_value(out, pts), atol=1e-14)

    @pytest.mark.parametrize("name", ["burgers", "elliptic", "helmholtz", "ldc"])
    def test_factor_jets_match_finite_differences(self, name):
        problem = make_problem(name)
        hc = problem.hard_constraint()
        pts = sample_interior(problem, 5, 1)
        a, b = hard_constraint_jets(hc, pts, 2)
        h = 1e-5
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            ap, bp = hard_constraint_jets(hc, pts + e, 0)
            am, bm = hard_constraint_jets(hc, pts - e, 0)
            np.testing.assert_allclose(a[:, 1 + k], (ap[:, 0] - am[:, 0]) / (2 * h), rtol=1e-6, atol=1e-8)
            np.testing.assert_allclose(b[:, 1 + k], (bp[:, 0] - bm[:, 0]) / (2 * h), rtol=1e-6, atol=1e-7)
            ap, bp = hard_constraint_jets(hc, pts + e, 1)
            am, bm = hard_constraint_jets(hc, pts - e, 1)
            for l in range(2):
                c = 3 + l * 2 + k
                np.testing.assert_allclose(a[:, c], (ap[:, 1 + l] - am[:, 1 + l]) / (2 * h), rtol=1e-5, atol=1e-7)
                np.testing.assert_allclose(b[:, c], (bp[:, 1 + l] - bm[:, 1 + l]) / (2 * h), rtol=1e-5, atol=1e-6)

    def test_inviscid_inherits_transform(self):
        make_problem("inviscid-burgers").hard_constraint()

    def test_undefined_transform(self):
        from nncores.problems import PdeProblem

        with pytest.raises(TransformUndefined):
            PdeProblem().hard_constraint()
