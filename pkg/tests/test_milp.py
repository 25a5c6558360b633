import sys

import numpy as np
import pytest

from relucert.milp import (LinExpr, MilpError, MilpModel, MilpOptions,
                           MilpResult, read_lp, solve_milp,
                           solve_with_backend, tighten_bounds, write_lp,
                           write_solution)


def big_m_toy():
    # max y s.t. y <= 3.7, y <= 10 sigma
    m = MilpModel("toy", sense="max")
    y = m.add_cont("y", 0.0, 100.0)
    s = m.add_bin("sigma")
    m.add_le(LinExpr.of(y), 3.7)
    m.add_le(LinExpr.of(y) - LinExpr.of(s, 10.0), 0.0)
    m.register_bigm("y_on", 10.0, "interval")
    m.set_objective(LinExpr.of(y))
    return m, y, s


def knapsack():
    m = MilpModel("knap", sense="max")
    a = m.add_bin("a")
    b = m.add_bin("b")
    m.add_le(LinExpr.of(a) + LinExpr.of(b), 1.0)
    m.set_objective(LinExpr.of(a, 3.0) + LinExpr.of(b, 2.0))
    return m


class TestSolve:
    @pytest.mark.parametrize("backend", ["highs", "internal"])
    def test_big_m_toy(self, backend):
        m, y, s = big_m_toy()
        res = solve_milp(m, MilpOptions(lp_backend=backend))
        assert res.status == "Optimal"
        assert abs(res.objective - 3.7) < 1e-9
        assert res.x[s] == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("backend", ["highs", "internal"])
    def test_knapsack(self, backend):
        res = solve_milp(knapsack(), MilpOptions(lp_backend=backend))
        assert res.status == "Optimal"
        assert abs(res.objective - 3.0) < 1e-9

    def test_infeasible(self):
        m = MilpModel("inf", sense="max")
        x = m.add_cont("x", 0.0, 1.0)
        m.add_le(LinExpr.of(x), -1.0)
        m.set_objective(LinExpr.of(x))
        assert solve_milp(m).status == "Infeasible"

    def test_unbounded(self):
        m = MilpModel("unb", sense="max")
        x = m.add_cont("x", 0.0, np.inf)
        m.set_objective(LinExpr.of(x))
        assert solve_milp(m).status == "Unbounded"

    def test_refuses_bad_bigm(self):
        m, _, _ = big_m_toy()
        with pytest.raises(MilpError):
            m.register_bigm("bad", np.inf, "none")

    def test_determinism_node_counts(self):
        rng = np.random.default_rng(0)
        m = MilpModel("rand", sense="max")
        nb = 8
        xs = [m.add_bin(f"b{i}") for i in range(nb)]
        w = rng.uniform(0.5, 2.0, nb)
        v = rng.uniform(0.5, 2.0, nb)
        m.add_le(LinExpr.combine([LinExpr.of(i) for i in xs], w), 4.0)
        m.set_objective(LinExpr.combine([LinExpr.of(i) for i in xs], v))
        r1 = solve_milp(m)
        r2 = solve_milp(m)
        assert r1.node_count == r2.node_count
        assert r1.objective == r2.objective
        assert r1.x.tobytes() == r2.x.tobytes()

    def test_relaxation_dominates(self):
        m = knapsack()
        from relucert.milp import _LpBackend

        backend = _LpBackend(m, "highs")
        _, _, relax = backend.solve(np.asarray(m.lo), np.asarray(m.hi))
        res = solve_milp(m)
        assert relax >= res.objective - 1e-9

    def test_warm_start_accepted(self):
        m, y, s = big_m_toy()
        ws = np.zeros(m.nvars)
        ws[y], ws[s] = 3.7, 1.0
        res = solve_milp(m, warm_starts=[ws])
        assert res.status == "Optimal" and abs(res.objective - 3.7) < 1e-9

    def test_timeout_reports_bound(self):
        rng = np.random.default_rng(3)
        m = MilpModel("hard", sense="max")
        nb = 24
        xs = [m.add_bin(f"b{i}") for i in range(nb)]
        w = rng.uniform(0.5, 2.0, nb)
        v = w + rng.uniform(0, 1e-3, nb)   # weakly correlated knapsack
        m.add_le(LinExpr.combine([LinExpr.of(i) for i in xs], w),
                 0.5 * w.sum())
        m.set_objective(LinExpr.combine([LinExpr.of(i) for i in xs], v))
        res = solve_milp(m, MilpOptions(node_limit=5))
        assert res.status in ("TimedOut", "Optimal")
        if res.status == "TimedOut":
            assert res.bound is not None
            if res.objective is not None:
                assert res.bound >= res.objective - 1e-9

    def test_minimize_sense(self):
        m = MilpModel("min", sense="min")
        x = m.add_cont("x", -5.0, 5.0)
        s = m.add_bin("s")
        # x >= 1 - 6 s  and x >= -2 + s
        m.add_ge(LinExpr.of(x) + LinExpr.of(s, 6.0), 1.0)
        m.add_ge(LinExpr.of(x) - LinExpr.of(s, 1.0), -2.0)
        m.set_objective(LinExpr.of(x))
        res = solve_milp(m)
        assert res.status == "Optimal"
        assert abs(res.objective - (-1.0)) < 1e-9


class TestCacheAndBounds:
    def test_cache_round_trip(self, tmp_path):
        m, _, _ = big_m_toy()
        opts = MilpOptions(cache_dir=str(tmp_path))
        r1 = solve_milp(m, opts)
        r2 = solve_milp(m, opts)
        assert r2.status == r1.status and r2.objective == r1.objective
        assert len(list(tmp_path.glob("*.json"))) == 1

    def test_tighten_bounds(self):
        m, y, s = big_m_toy()
        (lo, hi), = tighten_bounds(m, [LinExpr.of(y) + 1.0])
        assert lo == pytest.approx(1.0, abs=1e-7)
        assert hi == pytest.approx(4.7, abs=1e-7)


class TestLpFormat:
    def test_round_trip_same_optimum(self, tmp_path):
        m, _, _ = big_m_toy()
        path = tmp_path / "m.lp"
        write_lp(m, path)
        m2 = read_lp(path)
        r1 = solve_milp(m)
        r2 = solve_milp(m2)
        assert abs(r1.objective - r2.objective) < 1e-9

    def test_negative_bounds_round_trip(self, tmp_path):
        m = MilpModel("neg", sense="min")
        x = m.add_cont("x", -2.5, -0.5)
        m.set_objective(LinExpr.of(x))
        path = tmp_path / "m.lp"
        write_lp(m, path)
        m2 = read_lp(path)
        assert solve_milp(m2).objective == pytest.approx(-2.5)


class TestBackend:
    def test_external_agrees_with_internal(self, tmp_path):
        m, _, _ = big_m_toy()
        exe = f"{sys.executable} -m relucert.cli backend-solve"
        res = solve_with_backend(m, exe, workdir=str(tmp_path))
        ref = solve_milp(m)
        assert res.status == "Optimal"
        assert abs(res.objective - ref.objective) < 1e-9

    def test_external_infeasible(self, tmp_path):
        m = MilpModel("inf", sense="max")
        x = m.add_cont("x", 0.0, 1.0)
        m.add_le(LinExpr.of(x), -1.0)
        m.set_objective(LinExpr.of(x))
        exe = f"{sys.executable} -m relucert.cli backend-solve"
        res = solve_with_backend(m, exe, workdir=str(tmp_path))
        assert res.status == "Infeasible"

    def test_missing_executable(self):
        m, _, _ = big_m_toy()
        with pytest.raises(MilpError):
            solve_with_backend(m, "/nonexistent/solver-binary")

    def test_solution_file_round_trip(self, tmp_path):
        m, _, _ = big_m_toy()
        res = solve_milp(m)
        path = tmp_path / "m.sol"
        write_solution(res, m, path)
        text = path.read_text()
        assert "=status= Optimal" in text and "=obj=" in text
