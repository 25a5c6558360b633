"""Control problem data types and exact condensation of the MPC program.

The receding-horizon program

    min  0.5*||x_T||_P^2 + sum_i 0.5*(||x_i||_Q^2 + ||v_i||_R^2)
    s.t. x_{i+1} = A x_i + B v_i,  x_0 = x,
         Xi x_i <= xi (i = 0..T),  Upsilon v_i <= rho (i = 0..T-1)

is condensed into the inequality-only parametric QP

    min_z 0.5*z'Hz   s.t.  N z <= d + S x,

with the shifted variable z = v + H^{-1} D x. Everything downstream
(QP oracle, MILP encodings, stability constants) consumes `CondensedQp`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ModelError(ValueError):
    """Invalid problem data (dimensions, definiteness, boundedness)."""


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ModelError(f"{name} must be a finite 2-D matrix")
    return M


def _as_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ModelError(f"{name} must be a finite vector")
    return v


def _check_psd(M: np.ndarray, name: str, strict: bool = False) -> None:
    if not np.allclose(M, M.T, atol=1e-10):
        raise ModelError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    if strict:
        if w.min() <= 1e-12 * max(1.0, w.max()):
            raise ModelError(f"{name} must be positive definite")
    elif w.min() < -1e-10 * max(1.0, abs(w.max())):
        raise ModelError(f"{name} must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Discrete-time linear system x+ = A x + B u."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A, "A"))
        object.__setattr__(self, "B", _as_matrix(self.B, "B"))
        if self.A.shape[0] != self.A.shape[1]:
            raise ModelError("A must be square")
        if self.B.shape[0] != self.A.shape[0]:
            raise ModelError("B row count must match the state dimension")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ np.asarray(x, float) + self.B @ np.asarray(u, float)


@dataclass(frozen=True, eq=False)
class Polytope:
    """Halfspace representation {x : G x <= h}."""

    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "G", _as_matrix(self.G, "G"))
        object.__setattr__(self, "h", _as_vector(self.h, "h"))
        if self.G.shape[0] != self.h.shape[0]:
            raise ModelError("polytope row mismatch between G and h")

    @classmethod
    def box(cls, bounds) -> "Polytope":
        """Symmetric box |x_i| <= bounds[i]."""
        b = _as_vector(bounds, "bounds")
        d = b.size
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([b, b]))

    @classmethod
    def from_bounds(cls, lo, hi) -> "Polytope":
        lo = _as_vector(lo, "lo")
        hi = _as_vector(hi, "hi")
        d = lo.size
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([hi, -lo]))

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @property
    def nrows(self) -> int:
        return self.G.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, float).reshape(-1)
        return bool(np.all(self.G @ x <= self.h + tol * (1.0 + np.abs(self.h))))

    def has_origin_interior(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.h > tol))

    def cartesian(self, other: "Polytope") -> "Polytope":
        """Cartesian product {(x, y) : x in self, y in other}."""
        q1, d1 = self.G.shape
        q2, d2 = other.G.shape
        G = np.zeros((q1 + q2, d1 + d2))
        G[:q1, :d1] = self.G
        G[q1:, d1:] = other.G
        return Polytope(G, np.concatenate([self.h, other.h]))

    def intersect(self, other: "Polytope") -> "Polytope":
        if other.dim != self.dim:
            raise ModelError("dimension mismatch in polytope intersection")
        return Polytope(np.vstack([self.G, other.G]),
                        np.concatenate([self.h, other.h]))

    def support(self, direction) -> float:
        """max_{x in P} direction' x  (LP), +inf when unbounded."""
        from . import lpqp

        c = -np.asarray(direction, float).reshape(-1)
        res = lpqp.solve_lp(lpqp.LpProblem(c=c, A_ub=self.G, b_ub=self.h))
        if res.status == lpqp.LpStatus.UNBOUNDED:
            return np.inf
        if res.status != lpqp.LpStatus.OPTIMAL:
            raise ModelError("support LP failed (empty polytope?)")
        return float(-res.objective)

    def bounding_box(self):
        """Per-coordinate (lo, hi) via 2*dim support LPs."""
        d = self.dim
        lo = np.empty(d)
        hi = np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            hi[i] = self.support(e)
            lo[i] = -self.support(-e)
        return lo, hi

    def is_bounded(self) -> bool:
        lo, hi = self.bounding_box()
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def is_empty(self) -> bool:
        from . import lpqp

        res = lpqp.solve_lp(lpqp.LpProblem(c=np.zeros(self.dim),
                                           A_ub=self.G, b_ub=self.h))
        return res.status == lpqp.LpStatus.INFEASIBLE

    def reduce(self, tol: float = 1e-9) -> "Polytope":
        """Drop redundant rows (each tested by one LP over the others)."""
        keep = list(range(self.nrows))
        i = 0
        while i < len(keep):
            row = keep[i]
            rest = keep[:i] + keep[i + 1:]
            sub = Polytope(self.G[rest], self.h[rest])
            if sub.support(self.G[row]) <= self.h[row] + tol:
                keep.pop(i)
            else:
                i += 1
        return Polytope(self.G[keep], self.h[keep])

    def vertices(self) -> np.ndarray:
        """Vertex list via halfspace intersection (bounded, origin interior)."""
        from scipy.spatial import HalfspaceIntersection

        if not self.has_origin_interior():
            raise ModelError("vertex enumeration needs the origin interior")
        halfspaces = np.hstack([self.G, -self.h[:, None]])
        hs = HalfspaceIntersection(halfspaces, np.zeros(self.dim))
        verts = np.unique(np.round(hs.intersections, 9), axis=0)
        return verts

    def grid_sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Rejection-sample `count` points uniformly from the polytope."""
        lo, hi = self.bounding_box()
        out = []
        tries = 0
        while len(out) < count and tries < 1000 * count + 1000:
            cand = rng.uniform(lo, hi, size=(count, self.dim))
            ok = np.all(cand @ self.G.T <= self.h + 1e-12, axis=1)
            out.extend(cand[ok])
            tries += count
        if len(out) < count:
            raise ModelError("rejection sampling failed (thin polytope?)")
        return np.asarray(out[:count])


@dataclass(frozen=True, eq=False)
class MpcDesign:
    """Weights, horizon and constraint data of the receding-horizon program."""

    sys: LtiSystem
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray          # unconstrained optimal gain, u = K x
    T: int
    X: Polytope
    U: Polytope

    def __post_init__(self):
        n, m = self.sys.n, self.sys.m
        for name, M, shape in (("Q", self.Q, (n, n)), ("R", self.R, (m, m)),
                               ("P", self.P, (n, n)), ("K", self.K, (m, n))):
            object.__setattr__(self, name, _as_matrix(M, name))
            if getattr(self, name).shape != shape:
                raise ModelError(f"{name} must have shape {shape}")
        _check_psd(self.Q, "Q")
        _check_psd(self.R, "R", strict=True)
        _check_psd(self.P, "P")
        if self.T < 1:
            raise ModelError("horizon T must be >= 1")
        if self.X.dim != n or self.U.dim != m:
            raise ModelError("constraint polytope dimensions mismatch")
        for poly, name in ((self.X, "X"), (self.U, "U")):
            if not poly.has_origin_interior():
                raise ModelError(f"{name} must contain the origin in its interior")
        # stability constants require the Riccati pair; condensation alone
        # tolerates any PSD terminal weight, so record rather than reject
        res = dare_residual(self.sys.A, self.sys.B, self.Q, self.R, self.P)
        object.__setattr__(self, "dare_ok",
                           res <= 1e-6 * max(1.0, float(np.abs(self.P).max())))

    # stage-wise constraint data
    @property
    def Xi(self) -> np.ndarray:
        return self.X.G

    @property
    def xi(self) -> np.ndarray:
        return self.X.h

    @property
    def Upsilon(self) -> np.ndarray:
        return self.U.G

    @property
    def rho(self) -> np.ndarray:
        return self.U.h

    def stage_cost(self, x, u) -> float:
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        return 0.5 * float(x @ self.Q @ x + u @ self.R @ u)


@dataclass(frozen=True, eq=False)
class CondensedQp:
    """Inequality-only parametric QP: min 0.5 z'Hz s.t. N z <= d + S x."""

    H: np.ndarray          # (mT, mT), symmetric PD
    D: np.ndarray          # (mT, n), cross term Gamma' Qbar Theta
    N: np.ndarray          # (p, mT)
    d: np.ndarray          # (p,)
    S: np.ndarray          # (p, n)
    Gamma: np.ndarray      # ((T+1)n, mT) input-to-state map
    Theta: np.ndarray      # ((T+1)n, n) free response map
    C: np.ndarray          # (m, mT) first-input selector
    HiD: np.ndarray        # H^{-1} D, refined to 1e-12 residual
    HiNT: np.ndarray       # H^{-1} N'
    Wx: np.ndarray         # x-only quadratic cost term of the optimal value
    n: int
    m: int
    T: int
    design: MpcDesign = field(repr=False, compare=False)

    @property
    def p(self) -> int:
        return self.N.shape[0]

    @property
    def zero_rows(self) -> np.ndarray:
        """Mask of parameter-only rows (vanishing N row, nonzero S row)."""
        return np.linalg.norm(self.N, axis=1) <= 1e-12

    def value_terms(self, z: np.ndarray, x: np.ndarray) -> float:
        """Optimal-value expression 0.5 z'Hz + 0.5 x'Wx x at any (z, x)."""
        z = np.asarray(z, float)
        x = np.asarray(x, float)
        return 0.5 * float(z @ self.H @ z) + 0.5 * float(x @ self.Wx @ x)

    def z_from_v(self, v: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.asarray(v, float) + self.HiD @ np.asarray(x, float)

    def v_from_z(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.asarray(z, float) - self.HiD @ np.asarray(x, float)


def riccati_step(A, B, Q, R, P) -> np.ndarray:
    """One backward Riccati recursion step."""
    BtPB = R + B.T @ P @ B
    BtPA = B.T @ P @ A
    return Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(BtPB, BtPA)


def dare_residual(A, B, Q, R, P) -> float:
    return float(np.abs(P - riccati_step(A, B, Q, R, P)).max())


def solve_dare(sys: LtiSystem, Q, R, tol: float = 1e-12,
               max_iter: int = 100_000):
    """Fixed-point iteration of the Riccati recursion.

    Returns (P, K) with u = K x the associated stationary gain. Raises
    `ModelError` when the iteration fails to converge, which under
    Q >= 0, R > 0 indicates a non-stabilizable pair.
    """
    Q = _as_matrix(Q, "Q")
    R = _as_matrix(R, "R")
    _check_psd(Q, "Q")
    _check_psd(R, "R", strict=True)
    A, B = sys.A, sys.B
    P = Q.copy()
    for _ in range(max_iter):
        Pn = riccati_step(A, B, Q, R, P)
        Pn = 0.5 * (Pn + Pn.T)
        if np.abs(Pn - P).max() < tol:
            P = Pn
            break
        if not np.all(np.isfinite(Pn)) or np.abs(Pn).max() > 1e14:
            raise ModelError("Riccati iteration diverged: (A, B) not stabilizable")
        P = Pn
    else:
        raise ModelError("Riccati iteration did not converge: "
                         "(A, B) not stabilizable")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    Abar = A + B @ K
    if np.max(np.abs(np.linalg.eigvals(Abar))) >= 1.0:
        raise ModelError("closed-loop A + B K not Schur stable")
    if dare_residual(A, B, Q, R, P) > 1e-10 * max(1.0, float(np.abs(P).max())):
        raise ModelError("Riccati residual above tolerance")
    return P, K


def make_design(sys: LtiSystem, Q, R, T: int, X: Polytope, U: Polytope,
                P=None, K=None) -> MpcDesign:
    """Assemble a design; P and K default to the Riccati solution."""
    if P is None or K is None:
        P, K = solve_dare(sys, Q, R)
    return MpcDesign(sys=sys, Q=np.asarray(Q, float), R=np.asarray(R, float),
                     P=np.asarray(P, float), K=np.asarray(K, float),
                     T=int(T), X=X, U=U)


def _refine_solve(H: np.ndarray, Rhs: np.ndarray, tol: float = 1e-12,
                  rounds: int = 4) -> np.ndarray:
    """Solve H X = Rhs with iterative refinement of the residual."""
    X = np.linalg.solve(H, Rhs)
    scale = max(1.0, float(np.abs(Rhs).max()))
    for _ in range(rounds):
        res = Rhs - H @ X
        if np.abs(res).max() <= tol * scale:
            break
        X = X + np.linalg.solve(H, res)
    return X


def condense(design: MpcDesign) -> CondensedQp:
    """Build H, D, N, d, S from the block prediction matrices.

    State rows cover stages 0..T (the stage-0 rows constrain only the
    parameter and keep rank(S) = n); input rows cover stages 0..T-1.
    """
    sys = design.sys
    A, B = sys.A, sys.B
    n, m, T = sys.n, sys.m, design.T
    Gamma = np.zeros(((T + 1) * n, m * T))
    Theta = np.zeros(((T + 1) * n, n))
    Apow = [np.eye(n)]
    for _ in range(T):
        Apow.append(A @ Apow[-1])
    for i in range(T + 1):
        Theta[i * n:(i + 1) * n] = Apow[i]
        for j in range(i):
            Gamma[i * n:(i + 1) * n, j * m:(j + 1) * m] = Apow[i - j - 1] @ B
    Qbar = np.zeros(((T + 1) * n, (T + 1) * n))
    for i in range(T):
        Qbar[i * n:(i + 1) * n, i * n:(i + 1) * n] = design.Q
    Qbar[T * n:, T * n:] = design.P
    Rbar = np.kron(np.eye(T), design.R)

    H = Rbar + Gamma.T @ Qbar @ Gamma
    H = 0.5 * (H + H.T)
    w = np.linalg.eigvalsh(H)
    if w.min() < 1e-9 * w.max():
        raise ModelError("degenerate cost: condensed Hessian numerically singular")
    D = Gamma.T @ Qbar @ Theta

    Xi, xi = design.Xi, design.xi
    Up, rho = design.Upsilon, design.rho
    Nx = np.kron(np.eye(T + 1), Xi) @ Gamma
    Nu = np.kron(np.eye(T), Up)
    N = np.vstack([Nx, Nu])
    d = np.concatenate([np.tile(xi, T + 1), np.tile(rho, T)])
    HiD = _refine_solve(H, D)
    HiNT = _refine_solve(H, N.T)
    S = N @ HiD - np.vstack([np.kron(np.eye(T + 1), Xi) @ Theta,
                             np.zeros((Nu.shape[0], n))])
    if np.linalg.matrix_rank(S, tol=1e-9 * max(1.0, np.abs(S).max())) < n:
        raise ModelError("rank(S) < n: parameter set is degenerate")
    C = np.zeros((m, m * T))
    C[:, :m] = np.eye(m)
    Wx = Theta.T @ Qbar @ Theta - D.T @ HiD
    Wx = 0.5 * (Wx + Wx.T)
    return CondensedQp(H=H, D=D, N=N, d=d, S=S, Gamma=Gamma, Theta=Theta,
                       C=C, HiD=HiD, HiNT=HiNT, Wx=Wx, n=n, m=m, T=T,
                       design=design)


def augment_for_input_constraints(sys: LtiSystem, design: MpcDesign):
    """Lift to state (x, u_prev) so input constraints become state constraints.

    The lifted system is x_hat+ = [A 0; 0 0] x_hat + [B; I] u with
    constraint set X x U; weights are padded with the original R on the
    stored-input block so the stage cost is preserved.
    """
    n, m = sys.n, sys.m
    Ahat = np.zeros((n + m, n + m))
    Ahat[:n, :n] = sys.A
    Bhat = np.vstack([sys.B, np.eye(m)])
    sys_hat = LtiSystem(Ahat, Bhat)
    Qhat = np.zeros((n + m, n + m))
    Qhat[:n, :n] = design.Q
    Xhat = design.X.cartesian(design.U)
    # input still penalized through R; terminal weight from the lifted Riccati
    Phat, Khat = solve_dare(sys_hat, Qhat, design.R)
    big = float(max(np.abs(design.X.h).max(), np.abs(design.U.h).max())) * 1e6
    Uhat = Polytope.box(np.full(m, big))
    design_hat = MpcDesign(sys=sys_hat, Q=Qhat, R=design.R, P=Phat, K=Khat,
                           T=design.T, X=Xhat, U=Uhat)
    return sys_hat, design_hat


# ---------------------------------------------------------------------------
# problem file format (documented in docs/problem_format.md)

def problem_to_dict(design: MpcDesign) -> dict:
    return {
        "A": design.sys.A.tolist(),
        "B": design.sys.B.tolist(),
        "Q": design.Q.tolist(),
        "R": design.R.tolist(),
        "T": design.T,
        "Xi": design.Xi.tolist(),
        "xi": design.xi.tolist(),
        "Upsilon": design.Upsilon.tolist(),
        "rho": design.rho.tolist(),
        "P": design.P.tolist(),
        "K": design.K.tolist(),
    }


def problem_from_dict(data: dict) -> MpcDesign:
    sys = LtiSystem(np.array(data["A"], float), np.array(data["B"], float))
    if "state_box" in data:
        X = Polytope.box(data["state_box"])
    else:
        X = Polytope(np.array(data["Xi"], float), np.array(data["xi"], float))
    if "input_box" in data:
        U = Polytope.box(data["input_box"])
    else:
        U = Polytope(np.array(data["Upsilon"], float),
                     np.array(data["rho"], float))
    return make_design(sys, np.array(data["Q"], float),
                       np.array(data["R"], float), int(data["T"]), X, U,
                       P=np.array(data["P"], float) if "P" in data else None,
                       K=np.array(data["K"], float) if "K" in data else None)


def save_problem(design: MpcDesign, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(design), fh, indent=1, sort_keys=True)


def load_problem(path) -> MpcDesign:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
