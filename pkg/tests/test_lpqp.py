import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relucert import lpqp
from relucert.lpqp import (InfeasibleParameter, LpProblem, LpStatus,
                           QpSolver, solve_lp, solve_qp, u_mpc)
from relucert.model import LtiSystem, Polytope, condense, make_design


def norm_lp_problem(K):
    """The column-sum LP computing ||K||_1 (t plus per-column majorants)."""
    K = np.asarray(K, float)
    m, n = K.shape
    # variables: eta = col(s_1..s_n, t)
    nv = m * n + 1
    c = np.zeros(nv)
    c[-1] = 1.0
    rows, rhs = [], []
    for j in range(n):
        r = np.zeros(nv)
        r[j * m:(j + 1) * m] = 1.0
        r[-1] = -1.0
        rows.append(r)
        rhs.append(0.0)
    for j in range(n):
        for i in range(m):
            r = np.zeros(nv)
            r[j * m + i] = -1.0
            rows.append(r.copy())
            rhs.append(K[i, j])
            rows.append(r.copy())
            rhs.append(-K[i, j])
    return LpProblem(c=c, A_ub=np.array(rows), b_ub=np.array(rhs))


class TestSimplex:
    def test_min_x_geq_3(self):
        res = solve_lp(LpProblem(c=[1.0], A_ub=[[-1.0]], b_ub=[-3.0]))
        assert res.status == LpStatus.OPTIMAL
        assert abs(res.x[0] - 3.0) < 1e-9

    def test_matrix_norm_lp(self):
        # max column abs-sum of [[1,-2],[3,4]] is 6
        res = solve_lp(norm_lp_problem([[1.0, -2.0], [3.0, 4.0]]))
        assert res.status == LpStatus.OPTIMAL
        assert abs(res.objective - 6.0) < 1e-9

    def test_infeasible(self):
        res = solve_lp(LpProblem(c=[1.0], A_ub=[[1.0], [-1.0]],
                                 b_ub=[0.0, -1.0]))
        assert res.status == LpStatus.INFEASIBLE

    def test_unbounded(self):
        res = solve_lp(LpProblem(c=[-1.0], A_ub=[[-1.0]], b_ub=[0.0]))
        assert res.status == LpStatus.UNBOUNDED

    def test_equality_and_bounds(self):
        # min x+y s.t. x + y = 1, 0 <= x <= 0.3
        res = solve_lp(LpProblem(c=[1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[1.0],
                                 lo=[0.0, -np.inf], hi=[0.3, np.inf]))
        assert res.status == LpStatus.OPTIMAL
        assert abs(res.objective - 1.0) < 1e-9

    def test_bounds_only(self):
        res = solve_lp(LpProblem(c=[2.0, -1.0], lo=[-1.0, -2.0], hi=[1.0, 2.0]))
        assert res.status == LpStatus.OPTIMAL
        assert np.allclose(res.x, [-1.0, 2.0])

    def test_determinism(self):
        prob = norm_lp_problem(np.arange(12).reshape(3, 4) - 5.0)
        r1 = solve_lp(prob)
        r2 = solve_lp(prob)
        assert r1.x.tobytes() == r2.x.tobytes()
        assert r1.iterations == r2.iterations

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_vs_scipy(self, seed):
        from scipy.optimize import linprog

        rng = np.random.default_rng(seed)
        nv = int(rng.integers(1, 5))
        nr = int(rng.integers(1, 6))
        A = rng.normal(size=(nr, nv))
        b = rng.normal(size=nr) + 1.0
        c = rng.normal(size=nv)
        lo = np.full(nv, -5.0)
        hi = np.full(nv, 5.0)
        mine = solve_lp(LpProblem(c=c, A_ub=A, b_ub=b, lo=lo, hi=hi))
        ref = linprog(c, A_ub=A, b_ub=b, bounds=list(zip(lo, hi)),
                      method="highs")
        if ref.status == 2:
            assert mine.status == LpStatus.INFEASIBLE
        else:
            assert mine.status == LpStatus.OPTIMAL
            assert abs(mine.objective - ref.fun) < 1e-7 * (1 + abs(ref.fun))

    def test_duality_gap_zero(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            nv, nr = 4, 6
            A = rng.normal(size=(nr, nv))
            b = rng.normal(size=nr) + 2.0
            c = rng.normal(size=nv)
            lo, hi = np.full(nv, -3.0), np.full(nv, 3.0)
            res = solve_lp(LpProblem(c=c, A_ub=A, b_ub=b, lo=lo, hi=hi))
            assert res.status == LpStatus.OPTIMAL
            assert np.all(res.duals_ub >= -1e-9)
            # stationarity: c + A' lambda = pi_lo - pi_hi, complementary with bounds
            station = res.reduced_costs
            dual_obj = -res.duals_ub @ b + np.where(station > 0, station, 0) @ lo \
                + np.where(station < 0, station, 0) @ hi
            assert abs(dual_obj - res.objective) < 1e-7 * (1 + abs(res.objective))


@pytest.fixture(scope="module")
def toy_qp():
    sys = LtiSystem([[0.9, 0.2], [-0.1, 0.8]], [[0.5], [1.0]])
    design = make_design(sys, np.eye(2), [[1.0]], 3,
                         Polytope.box([2.0, 2.0]), Polytope.box([1.0]))
    return condense(design)


class TestQp:
    def test_interior_origin(self, toy_qp):
        sol = solve_qp(toy_qp, [0.0, 0.0])
        assert np.abs(sol.z).max() < 1e-10
        assert np.abs(sol.mu).max() < 1e-10
        assert sol.active_set == []

    def test_one_dimensional_kkt(self):
        # min z^2 s.t. z <= -1 + x at x = 0: stationarity 2 z + mu = 0
        from dataclasses import dataclass

        @dataclass(eq=False)
        class MiniQp:
            H = np.array([[2.0]])
            N = np.array([[1.0]])
            d = np.array([-1.0])
            S = np.array([[1.0]])
            HiNT = np.array([[0.5]])
            p = 1

        qp = MiniQp()
        sol = QpSolver(qp).solve(np.array([0.0]))
        assert abs(sol.z[0] + 1.0) < 1e-10
        assert abs(sol.mu[0] - 2.0) < 1e-10
        assert sol.active_set == [0]

    def test_kkt_residuals_random(self, toy_qp):
        rng = np.random.default_rng(3)
        solver = QpSolver(toy_qp)
        checked = 0
        for _ in range(60):
            x = rng.uniform(-2, 2, 2)
            try:
                sol = solver.solve(x, on_licq_violation="ignore")
            except InfeasibleParameter:
                continue
            checked += 1
            b = toy_qp.d + toy_qp.S @ x
            r = b - toy_qp.N @ sol.z
            assert sol.kkt_residual < 1e-8
            assert r.min() > -1e-8
            assert sol.mu.min() >= 0.0
            assert abs(sol.mu @ r) < 1e-8
        assert checked > 30

    def test_infeasible_parameter(self, toy_qp):
        with pytest.raises(InfeasibleParameter):
            solve_qp(toy_qp, [50.0, 50.0])

    def test_active_set_determinism(self, toy_qp):
        x = np.array([1.7, -1.2])
        s1 = solve_qp(toy_qp, x, on_licq_violation="ignore")
        s2 = solve_qp(toy_qp, x, on_licq_violation="ignore")
        assert s1.active_set == s2.active_set
        assert s1.z.tobytes() == s2.z.tobytes()


class TestUMpc:
    def test_origin(self, toy_qp):
        assert np.abs(u_mpc(toy_qp, [0.0, 0.0])).max() < 1e-12

    def test_lqr_in_interior(self, toy_qp):
        rng = np.random.default_rng(8)
        K = toy_qp.design.K
        for _ in range(20):
            x = rng.uniform(-0.2, 0.2, 2)   # deep interior: LQR feasible
            u = u_mpc(toy_qp, x)
            assert np.abs(u - K @ x).max() < 1e-7

    def test_finite_difference_gain(self, toy_qp):
        x = np.array([0.12, -0.07])
        h = 1e-5
        K = np.zeros((toy_qp.m, toy_qp.n))
        for j in range(toy_qp.n):
            e = np.zeros(toy_qp.n)
            e[j] = h
            K[:, j] = (u_mpc(toy_qp, x + e) - u_mpc(toy_qp, x - e)) / (2 * h)
        assert np.abs(K - toy_qp.design.K).max() < 1e-6

    def test_saturation_on_table_example7(self):
        # |u_i| <= 5 must bind at an aggressive boundary state
        sys = LtiSystem([[1.5, 0.0], [1.0, -1.5]], np.eye(2))
        design = make_design(sys, np.eye(2), np.eye(2), 12,
                             Polytope.box([6.0, 6.0]), Polytope.box([5.0, 5.0]))
        qp = condense(design)
        u = u_mpc(qp, [5.9, 0.0])
        assert np.abs(u).max() <= 5.0 + 1e-9
        assert np.isclose(np.abs(u).max(), 5.0, atol=1e-7)
