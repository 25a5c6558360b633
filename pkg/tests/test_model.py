import numpy as np
import pytest

from relucert.model import (LtiSystem, ModelError, Polytope,
                            augment_for_input_constraints, condense,
                            dare_residual, load_problem, make_design,
                            problem_from_dict, problem_to_dict, save_problem,
                            solve_dare)

RNG = np.random.default_rng(42)


def simulate_cost(design, x, v):
    """Oracle: roll the dynamics forward and sum the stage costs."""
    sys = design.sys
    m, T = sys.m, design.T
    xi = np.asarray(x, float)
    total = 0.0
    for i in range(T):
        vi = v[i * m:(i + 1) * m]
        total += design.stage_cost(xi, vi)
        xi = sys.step(xi, vi)
    total += 0.5 * float(xi @ design.P @ xi)
    return total


def trajectory_feasible(design, x, v):
    sys = design.sys
    m, T = sys.m, design.T
    xi = np.asarray(x, float)
    for i in range(T):
        if not design.X.contains(xi, tol=1e-10):
            return False
        vi = v[i * m:(i + 1) * m]
        if not design.U.contains(vi, tol=1e-10):
            return False
        xi = sys.step(xi, vi)
    return design.X.contains(xi, tol=1e-10)


def small_design(seed=0, n=2, m=1, T=3):
    rng = np.random.default_rng(seed)
    while True:
        A = rng.normal(size=(n, n)) * 0.6
        B = rng.normal(size=(n, m))
        sys = LtiSystem(A, B)
        try:
            return sys, make_design(sys, np.eye(n), np.eye(m), T,
                                    Polytope.box(np.full(n, 4.0)),
                                    Polytope.box(np.full(m, 1.0)))
        except ModelError:
            seed += 1
            rng = np.random.default_rng(seed)


class TestDare:
    def test_scalar_golden_ratio(self):
        # p = 1 + p - p^2/(1+p) solved in closed form gives the golden ratio
        sys = LtiSystem([[1.0]], [[1.0]])
        P, K = solve_dare(sys, [[1.0]], [[1.0]])
        phi = (1 + np.sqrt(5)) / 2
        assert abs(P[0, 0] - phi) < 1e-9
        assert abs(K[0, 0] - (-phi / (1 + phi))) < 1e-9

    def test_no_dynamics(self):
        sys = LtiSystem([[0.0]], [[1.0]])
        P, K = solve_dare(sys, [[1.0]], [[1.0]])
        assert abs(P[0, 0] - 1.0) < 1e-12
        assert abs(K[0, 0]) < 1e-12

    def test_double_integrator_matches_recursion_oracle(self):
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        B = np.array([[0.5], [1.0]])
        sys = LtiSystem(A, B)
        Q, R = np.eye(2), np.array([[0.1]])
        P, K = solve_dare(sys, Q, R)
        # independent oracle: 500 plain recursion steps
        Po = Q.copy()
        for _ in range(500):
            BtPB = R + B.T @ Po @ B
            BtPA = B.T @ Po @ A
            Po = Q + A.T @ Po @ A - BtPA.T @ np.linalg.solve(BtPB, BtPA)
        assert np.abs(P - Po).max() < 1e-8
        Ko = -np.linalg.solve(R + B.T @ Po @ B, B.T @ Po @ A)
        assert np.abs(K - Ko).max() < 1e-8
        assert dare_residual(A, B, Q, R, P) < 1e-8

    def test_not_stabilizable(self):
        sys = LtiSystem([[2.0]], [[0.0]])
        with pytest.raises(ModelError):
            solve_dare(sys, [[1.0]], [[1.0]])

    def test_schur_stable_closed_loop(self):
        sys, design = small_design(3)
        Abar = sys.A + sys.B @ design.K
        assert np.max(np.abs(np.linalg.eigvals(Abar))) < 1.0


class TestCondense:
    def test_one_step_identity(self):
        sys = LtiSystem([[1.0]], [[1.0]])
        design = make_design(sys, [[1.0]], [[1.0]], 1,
                             Polytope.box([1.0]), Polytope.box([1.0]),
                             P=[[1.0]], K=[[-0.5]])
        qp = condense(design)
        assert np.allclose(qp.H, [[2.0]])
        assert np.allclose(qp.Gamma, [[0.0], [1.0]])
        assert np.allclose(qp.Theta, [[1.0], [1.0]])

    def test_literature_example3_dimensions(self):
        # |x1|,|x2| <= 5 and |u| <= 1 with T = 8: states constrained at
        # stages 0..T, inputs at 0..T-1
        sys = LtiSystem([[0.0, 1.0], [1.0, 0.0]], [[2.0], [4.0]])
        design = make_design(sys, np.eye(2), [[4.5]], 8,
                             Polytope.box([5.0, 5.0]), Polytope.box([1.0]))
        qp = condense(design)
        assert qp.H.shape == (8, 8)
        assert qp.p == 9 * 4 + 8 * 2
        assert np.linalg.matrix_rank(qp.S) == 2

    def test_cost_identity_random(self):
        for seed in range(5):
            sys, design = small_design(seed)
            qp = condense(design)
            rng = np.random.default_rng(seed + 100)
            for _ in range(10):
                x = rng.uniform(-1, 1, sys.n)
                v = rng.uniform(-1, 1, sys.m * design.T)
                z = qp.z_from_v(v, x)
                lhs = qp.value_terms(z, x)
                rhs = simulate_cost(design, x, v)
                assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(rhs))

    def test_constraint_identity_random(self):
        sys, design = small_design(7)
        qp = condense(design)
        rng = np.random.default_rng(11)
        seen = {True: 0, False: 0}
        for _ in range(200):
            x = rng.uniform(-3, 3, sys.n)
            v = rng.uniform(-1.5, 1.5, sys.m * design.T)
            z = qp.z_from_v(v, x)
            milp_feasible = bool(np.all(qp.N @ z <= qp.d + qp.S @ x + 1e-9))
            assert milp_feasible == trajectory_feasible(design, x, v)
            seen[milp_feasible] += 1
        assert seen[True] > 0 and seen[False] > 0

    def test_symmetric_pd_hessian(self):
        _, design = small_design(2)
        qp = condense(design)
        assert np.allclose(qp.H, qp.H.T)
        assert np.linalg.eigvalsh(qp.H).min() > 0


class TestAugment:
    def test_block_structure(self):
        a, b = 0.7, 0.3
        sys = LtiSystem([[a]], [[b]])
        design = make_design(sys, [[1.0]], [[1.0]], 3,
                             Polytope.box([1.0]), Polytope.box([2.0]))
        sys_hat, design_hat = augment_for_input_constraints(sys, design)
        assert np.allclose(sys_hat.A, [[a, 0.0], [0.0, 0.0]])
        assert np.allclose(sys_hat.B, [[b], [1.0]])
        # X_hat is the box [-1,1] x [-2,2]
        assert design_hat.X.contains([1.0, 2.0])
        assert not design_hat.X.contains([1.0, 2.1])
        assert not design_hat.X.contains([1.1, 0.0])

    def test_closed_loop_matches_original_on_state_block(self):
        sys, design = small_design(5)
        sys_hat, design_hat = augment_for_input_constraints(sys, design)
        n = sys.n
        x = np.array([0.3, -0.2])
        xh = np.concatenate([x, np.zeros(sys.m)])
        for _ in range(20):
            u = design_hat.K @ xh
            x = sys.step(x, u)
            xh = sys_hat.step(xh, u)
            assert np.allclose(xh[:n], x, atol=1e-12)


class TestPolytope:
    def test_box_and_membership(self):
        P = Polytope.box([1.0, 2.0])
        assert P.contains([1.0, -2.0])
        assert not P.contains([1.0001, 0.0])
        lo, hi = P.bounding_box()
        assert np.allclose(lo, [-1, -2]) and np.allclose(hi, [1, 2])

    def test_reduce_drops_redundant(self):
        G = np.array([[1.0, 0], [0, 1], [-1, 0], [0, -1], [1, 0]])
        h = np.array([1.0, 1, 1, 1, 5])
        red = Polytope(G, h).reduce()
        assert red.nrows == 4

    def test_vertices_of_box(self):
        P = Polytope.box([1.0, 1.0])
        v = P.vertices()
        assert v.shape == (4, 2)
        assert np.allclose(np.abs(v), 1.0)

    def test_bounded_detection(self):
        assert Polytope.box([1.0, 1.0]).is_bounded()
        assert not Polytope(np.array([[1.0, 0.0]]), np.array([1.0])).is_bounded()


class TestProblemFile:
    def test_round_trip(self, tmp_path):
        _, design = small_design(9)
        path = tmp_path / "problem.json"
        save_problem(design, path)
        loaded = load_problem(path)
        assert np.allclose(loaded.sys.A, design.sys.A)
        assert np.allclose(loaded.P, design.P)
        assert loaded.T == design.T
        assert np.allclose(loaded.X.G, design.X.G)

    def test_box_shorthand(self):
        data = {"A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
                "T": 2, "state_box": [1.0], "input_box": [1.0]}
        design = problem_from_dict(data)
        assert design.X.nrows == 2
        d2 = problem_to_dict(design)
        assert "Xi" in d2 and "P" in d2
