"""Dense LP and strictly convex QP kernel.

`solve_lp` is a two-phase revised simplex with Dantzig pricing, a
cycling guard that switches to Bland's rule after 5 * (#rows)
degenerate pivots, and basis-inverse refactorization every 50 pivots.
`QpSolver` is a primal active-set method for min 0.5 z'Hz s.t.
N z <= b, returning multipliers and the identified active set; it is
the ground-truth oracle for the MILP encodings.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

if TYPE_CHECKING:  # pragma: no cover
    from .model import CondensedQp


class KernelError(RuntimeError):
    """Numerical failure inside the LP/QP kernel."""


class InfeasibleParameter(ValueError):
    """The queried state lies outside the feasible parameter set."""


class LicqViolation(RuntimeError):
    """Active constraint rows are rank deficient at the queried state."""

    def __init__(self, x, active):
        self.x = np.asarray(x, float)
        self.active = list(active)
        super().__init__(f"LICQ violated at x={self.x.tolist()}; "
                         f"active set {self.active}")


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    KERNEL_FAILURE = "kernel_failure"


@dataclass(eq=False)
class LpProblem:
    """min c'x s.t. A_ub x <= b_ub, A_eq x = b_eq, lo <= x <= hi."""

    c: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, float).reshape(-1)
        nv = self.c.size
        if nv == 0:
            raise ValueError("LP needs at least one variable")
        if self.A_ub is None:
            self.A_ub = np.zeros((0, nv))
            self.b_ub = np.zeros(0)
        else:
            self.A_ub = np.atleast_2d(np.asarray(self.A_ub, float))
            self.b_ub = np.asarray(self.b_ub, float).reshape(-1)
        if self.A_eq is None:
            self.A_eq = np.zeros((0, nv))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, float))
            self.b_eq = np.asarray(self.b_eq, float).reshape(-1)
        self.lo = (np.full(nv, -np.inf) if self.lo is None
                   else np.asarray(self.lo, float).reshape(-1).copy())
        self.hi = (np.full(nv, np.inf) if self.hi is None
                   else np.asarray(self.hi, float).reshape(-1).copy())


@dataclass(eq=False)
class LpResult:
    status: LpStatus
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals_ub: Optional[np.ndarray] = None
    duals_eq: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    iterations: int = 0


_FEAS_TOL = 1e-9
_PIVOT_TOL = 1e-10
_COST_TOL = 1e-9
_REFACTOR_EVERY = 50


class _Simplex:
    """Revised simplex on min c'x, A x = b, x >= 0 with b >= 0."""

    def __init__(self, A: np.ndarray, b: np.ndarray):
        self.A = A
        self.b = b.copy()
        self.mrows = A.shape[0]
        neg = self.b < 0
        self.A[neg] *= -1.0
        self.b[neg] *= -1.0
        self.flip = neg

    def _refactor(self):
        Ab = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(Ab)
        except np.linalg.LinAlgError as exc:
            raise KernelError("singular basis during refactorization") from exc

    def run(self, c: np.ndarray, basis: Sequence[int],
            Binv: Optional[np.ndarray], frozen: np.ndarray,
            max_iter: int):
        """Optimize cost c from the given starting basis.

        `frozen` marks columns barred from entering (spent artificials).
        Returns (status, basis, Binv, xB, iterations).
        """
        m = self.mrows
        self.basis = list(basis)
        if Binv is None:
            self._refactor()
        else:
            self.Binv = Binv
        bland = False
        degenerate_streak = 0
        pivots_since_factor = 0
        nv = self.A.shape[1]
        it = 0
        while it < max_iter:
            it += 1
            xB = self.Binv @ self.b
            cB = c[self.basis]
            y = cB @ self.Binv
            reduced = c - y @ self.A
            reduced[self.basis] = 0.0
            reduced[frozen] = np.inf
            if bland:
                elig = np.flatnonzero(reduced < -_COST_TOL)
                if elig.size == 0:
                    return LpStatus.OPTIMAL, self.basis, self.Binv, xB, it
                enter = int(elig[0])
            else:
                enter = int(np.argmin(reduced))
                if reduced[enter] >= -_COST_TOL:
                    return LpStatus.OPTIMAL, self.basis, self.Binv, xB, it
            w = self.Binv @ self.A[:, enter]
            pos = w > _PIVOT_TOL
            if not np.any(pos):
                return LpStatus.UNBOUNDED, self.basis, self.Binv, xB, it
            ratios = np.full(m, np.inf)
            ratios[pos] = xB[pos] / w[pos]
            rmin = ratios.min()
            ties = np.flatnonzero(ratios <= rmin + 1e-12)
            if bland:
                # leave the tied row whose basic variable has lowest index
                leave = int(min(ties, key=lambda r: self.basis[r]))
            else:
                leave = int(ties[np.argmax(w[ties])])
            if rmin <= 1e-12:
                degenerate_streak += 1
                if degenerate_streak >= 5 * m:
                    bland = True
            else:
                degenerate_streak = 0
            piv = w[leave]
            self.basis[leave] = enter
            pivots_since_factor += 1
            if pivots_since_factor >= _REFACTOR_EVERY:
                self._refactor()
                pivots_since_factor = 0
            else:
                row = self.Binv[leave] / piv
                corr = np.outer(w, row)
                corr[leave] = self.Binv[leave] - row
                self.Binv -= corr
                self.Binv[leave] = row
            if nv > 10_000:  # pragma: no cover - guard for pathological sizes
                raise KernelError("LP too large for the dense kernel")
        return LpStatus.KERNEL_FAILURE, self.basis, self.Binv, None, it


def solve_lp(prob: LpProblem, max_iter: Optional[int] = None) -> LpResult:
    """Two-phase dense simplex; deterministic for identical inputs."""
    c0 = prob.c
    nv = c0.size
    lo, hi = prob.lo, prob.hi
    if np.any(lo > hi):
        return LpResult(status=LpStatus.INFEASIBLE)

    # standard-form transformation bookkeeping: x_orig = sign * x_std + shift
    col_of = []           # (kind, data) per structural column
    shift = np.zeros(nv)
    sign = np.ones(nv)
    extra_rows = []       # upper-bound rows: (col, rhs)
    std_cols = 0
    pos_part = {}
    neg_part = {}
    for j in range(nv):
        if np.isfinite(lo[j]):
            shift[j] = lo[j]
            pos_part[j] = std_cols
            col_of.append(("var", j))
            std_cols += 1
            if np.isfinite(hi[j]):
                extra_rows.append((j, hi[j] - lo[j]))
        elif np.isfinite(hi[j]):
            shift[j] = hi[j]
            sign[j] = -1.0
            pos_part[j] = std_cols
            col_of.append(("var", j))
            std_cols += 1
        else:
            pos_part[j] = std_cols
            neg_part[j] = std_cols + 1
            col_of.append(("var", j))
            col_of.append(("neg", j))
            std_cols += 2

    n_ub = prob.A_ub.shape[0]
    n_eq = prob.A_eq.shape[0]
    n_bndrows = len(extra_rows)
    mrows = n_ub + n_eq + n_bndrows
    if mrows == 0:
        # cost minimized at the bounds directly
        x = np.where(c0 > 0, lo, np.where(c0 < 0, hi, np.where(
            np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
        if np.any(~np.isfinite(x[np.abs(c0) > 0])):
            return LpResult(status=LpStatus.UNBOUNDED)
        x = np.where(np.isfinite(x), x, 0.0)
        return LpResult(status=LpStatus.OPTIMAL, x=x,
                        objective=float(c0 @ x),
                        duals_ub=np.zeros(0), duals_eq=np.zeros(0),
                        reduced_costs=c0.copy())

    nslack = n_ub + n_bndrows
    ncols = std_cols + nslack
    A = np.zeros((mrows, ncols))
    b = np.zeros(mrows)
    c = np.zeros(ncols)

    def emit(row_mat, into_row, orig_row):
        for j in range(nv):
            a = row_mat[orig_row, j]
            if a == 0.0:
                continue
            A[into_row, pos_part[j]] += a * sign[j]
            if j in neg_part:
                A[into_row, neg_part[j]] -= a
        return row_mat[orig_row] @ shift

    r = 0
    for i in range(n_ub):
        base = emit(prob.A_ub, r, i)
        A[r, std_cols + i] = 1.0
        b[r] = prob.b_ub[i] - base
        r += 1
    for i in range(n_eq):
        base = emit(prob.A_eq, r, i)
        b[r] = prob.b_eq[i] - base
        r += 1
    for k, (j, ub) in enumerate(extra_rows):
        A[r, pos_part[j]] = 1.0
        A[r, std_cols + n_ub + k] = 1.0
        b[r] = ub
        r += 1
    for j in range(nv):
        c[pos_part[j]] += c0[j] * sign[j]
        if j in neg_part:
            c[neg_part[j]] -= c0[j]

    max_iter = max_iter or (5000 + 200 * mrows)
    sx = _Simplex(A, b)

    # phase 1
    art = np.arange(ncols, ncols + mrows)
    sx.A = np.hstack([sx.A, np.eye(mrows)])
    c1 = np.zeros(ncols + mrows)
    c1[art] = 1.0
    frozen = np.zeros(ncols + mrows, dtype=bool)
    status, basis, Binv, xB, it1 = sx.run(c1, list(art), np.eye(mrows),
                                          frozen, max_iter)
    if status != LpStatus.OPTIMAL:
        return LpResult(status=LpStatus.KERNEL_FAILURE, iterations=it1)
    if float(c1[basis] @ xB) > _FEAS_TOL * (1.0 + np.abs(b).max()):
        return LpResult(status=LpStatus.INFEASIBLE, iterations=it1)
    # pivot remaining artificials out where possible; freeze them
    for row in range(mrows):
        if basis[row] >= ncols:
            cand = np.flatnonzero(np.abs(Binv[row] @ sx.A[:, :ncols])
                                  > 1e-8)
            cand = [j for j in cand if j not in basis]
            if cand:
                enterj = int(cand[0])
                w = Binv @ sx.A[:, enterj]
                piv = w[row]
                rowv = Binv[row] / piv
                corr = np.outer(w, rowv)
                corr[row] = Binv[row] - rowv
                Binv = Binv - corr
                Binv[row] = rowv
                basis[row] = enterj
    frozen[art] = True

    c2 = np.concatenate([c, np.zeros(mrows)])
    status, basis, Binv, xB, it2 = sx.run(c2, basis, Binv, frozen, max_iter)
    iters = it1 + it2
    if status == LpStatus.UNBOUNDED:
        return LpResult(status=LpStatus.UNBOUNDED, iterations=iters)
    if status != LpStatus.OPTIMAL:
        return LpResult(status=LpStatus.KERNEL_FAILURE, iterations=iters)

    xstd = np.zeros(ncols + mrows)
    xstd[basis] = xB
    x = shift.copy()
    for j in range(nv):
        x[j] += sign[j] * xstd[pos_part[j]]
        if j in neg_part:
            x[j] -= xstd[neg_part[j]]

    y = c2[basis] @ Binv
    y = np.where(sx.flip, -y, y)
    duals_ub = -y[:n_ub]
    duals_eq = -y[n_ub:n_ub + n_eq]
    duals_ub = np.where(np.abs(duals_ub) < 1e-12, 0.0, duals_ub)
    # stationarity residual c + A_ub' lambda + A_eq' nu = pi_lo - pi_hi
    red = c0 + prob.A_ub.T @ duals_ub + prob.A_eq.T @ duals_eq
    return LpResult(status=LpStatus.OPTIMAL, x=x, objective=float(c0 @ x),
                    duals_ub=duals_ub, duals_eq=duals_eq,
                    reduced_costs=red, iterations=iters)


# ---------------------------------------------------------------------------
# strictly convex QP

@dataclass(eq=False)
class QpSolution:
    z: np.ndarray
    mu: np.ndarray
    active_set: list
    objective: float
    licq_ok: bool
    kkt_residual: float
    comp_gap: float


class QpSolver:
    """Primal active-set solver for min 0.5 z'Hz s.t. N z <= d + S x.

    One instance per condensed QP; holds the Cholesky factor of H and a
    mutable warm-start working set, so use one instance per worker.
    """

    def __init__(self, qp: "CondensedQp"):
        self.qp = qp
        self.H = qp.H
        self.N = qp.N
        self.chol = cho_factor(qp.H)
        self.row_norms = np.linalg.norm(qp.N, axis=1)
        self.nonzero = self.row_norms > 1e-12
        self.nz_idx = np.flatnonzero(self.nonzero)
        self.HiNT = qp.HiNT
        self._last_ws: Optional[list] = None

    # -- internals ----------------------------------------------------------
    def _kkt_step(self, z, W):
        """Solve the equality subproblem on working set W."""
        g = self.H @ z
        if not W:
            p = -cho_solve(self.chol, g)
            return p, np.zeros(0)
        NW = self.N[W]
        HiNWt = cho_solve(self.chol, NW.T)
        M = NW @ HiNWt
        rhs = -NW @ cho_solve(self.chol, g)
        try:
            nu = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise KernelError("singular working-set system") from exc
        p = -cho_solve(self.chol, g + NW.T @ nu)
        return p, nu

    def _feasible_start(self, b):
        """Phase-1 LP: min t s.t. N z - t <= b, t >= 0."""
        mT = self.H.shape[0]
        rows = self.N[self.nonzero]
        rhs = b[self.nonzero]
        A_ub = np.hstack([rows, -np.ones((rows.shape[0], 1))])
        c = np.zeros(mT + 1)
        c[-1] = 1.0
        lo = np.full(mT + 1, -np.inf)
        lo[-1] = 0.0
        res = solve_lp(LpProblem(c=c, A_ub=A_ub, b_ub=rhs, lo=lo))
        if res.status != LpStatus.OPTIMAL:
            raise KernelError(f"QP phase-1 LP returned {res.status}")
        t = res.x[-1]
        if t > 1e-7 * (1.0 + np.abs(rhs).max()):
            raise InfeasibleParameter("x outside feasible set")
        return res.x[:mT]

    # -- public -------------------------------------------------------------
    def solve(self, x, on_licq_violation: str = "raise",
              warm_set: Optional[list] = None) -> QpSolution:
        x = np.asarray(x, float).reshape(-1)
        qp = self.qp
        b = qp.d + qp.S @ x
        scale = 1.0 + np.abs(b).max()
        if np.any(b[~self.nonzero] < -1e-9 * scale):
            raise InfeasibleParameter("x outside feasible set")

        # warm start: try the remembered working set as an equality guess
        for ws in ([warm_set] if warm_set is not None else []) + \
                  ([self._last_ws] if self._last_ws else []):
            sol = self._try_warm(ws, b, scale)
            if sol is not None:
                return self._finish(sol[0], sol[1], x, b, on_licq_violation)

        mT = self.H.shape[0]
        if np.all(b[self.nonzero] >= -1e-12 * scale):
            z = np.zeros(mT)
        else:
            z = self._feasible_start(b)
            viol = self.N @ z - b
            if viol.max() > 0:      # nudge strictly inside the tolerance band
                z = z  # LP already within tolerance; active-set handles ties
        W: list = []
        res = self.N @ z - b
        for i in self.nz_idx:
            if res[i] >= -1e-8 * (1.0 + self.row_norms[i]):
                trial = W + [int(i)]
                if np.linalg.matrix_rank(self.N[trial]) == len(trial):
                    W = trial
                if len(W) == mT:
                    break

        max_it = 100 * (qp.p + mT) + 200
        stall = 0
        bland = False
        for _ in range(max_it):
            p, nu = self._kkt_step(z, W)
            if np.abs(p).max() <= 1e-11 * (1.0 + np.abs(z).max()):
                if nu.size and nu.min() < -1e-9:
                    if bland:
                        drop = int(np.flatnonzero(nu < -1e-9)[0])
                    else:
                        drop = int(np.argmin(nu))
                    W.pop(drop)
                    stall += 1
                    if stall > 5 * qp.p:
                        bland = True
                    continue
                mu = np.zeros(qp.p)
                for k, i in enumerate(W):
                    mu[i] = max(nu[k], 0.0) if nu.size else 0.0
                self._last_ws = list(W)
                return self._finish(z, mu, x, b, on_licq_violation)
            Np = self.N @ p
            resid = b - self.N @ z
            alpha = 1.0
            blocking = -1
            for i in self.nz_idx:
                if i in W or Np[i] <= 1e-12 * (1.0 + self.row_norms[i]):
                    continue
                ai = resid[i] / Np[i]
                if ai < alpha - 1e-12:
                    alpha = max(ai, 0.0)
                    blocking = int(i)
            z = z + alpha * p
            if blocking >= 0:
                W.append(blocking)
                if alpha <= 1e-12:
                    stall += 1
                    if stall > 5 * qp.p:
                        bland = True
                else:
                    stall = 0
        raise KernelError("active-set QP did not converge")

    def _try_warm(self, W, b, scale):
        """Accept a working set if its equality solution is primal/dual ok."""
        try:
            W = [int(i) for i in W if self.nonzero[i]]
            if len(W) > self.H.shape[0]:
                return None
            if W:
                NW = self.N[W]
                HiNWt = cho_solve(self.chol, NW.T)
                M = NW @ HiNWt
                nu = np.linalg.solve(M, -b[W])
                z = -HiNWt @ nu
            else:
                nu = np.zeros(0)
                z = np.zeros(self.H.shape[0])
        except np.linalg.LinAlgError:
            return None
        if nu.size and nu.min() < -1e-10:
            return None
        if np.any(self.N @ z - b > 1e-9 * scale):
            return None
        mu = np.zeros(self.qp.p)
        for k, i in enumerate(W):
            mu[i] = max(nu[k], 0.0) if nu.size else 0.0
        self._last_ws = list(W)
        return z, mu

    def _finish(self, z, mu, x, b, on_licq_violation):
        qp = self.qp
        res = b - self.N @ z
        act_tol = 1e-7 * (1.0 + self.row_norms)
        active = [int(i) for i in self.nz_idx if res[i] <= act_tol[i]]
        licq_ok = True
        if active:
            licq_ok = (np.linalg.matrix_rank(self.N[active], tol=1e-9)
                       == len(active))
        if not licq_ok and on_licq_violation == "raise":
            raise LicqViolation(x, active)
        kkt = float(np.abs(z + self.HiNT @ mu).max())
        comp = float(np.abs(mu @ res))
        obj = 0.5 * float(z @ self.H @ z)
        return QpSolution(z=z, mu=mu, active_set=active, objective=obj,
                          licq_ok=licq_ok, kkt_residual=kkt, comp_gap=comp)


_solver_cache: dict = {}


def _solver_for(qp: "CondensedQp") -> QpSolver:
    key = id(qp)
    entry = _solver_cache.get(key)
    if entry is None or entry[0]() is None:
        import weakref

        entry = (weakref.ref(qp), QpSolver(qp))
        _solver_cache[key] = entry
        if len(_solver_cache) > 64:
            dead = [k for k, (r, _) in _solver_cache.items() if r() is None]
            for k in dead:
                del _solver_cache[k]
    return entry[1]


def solve_qp(qp: "CondensedQp", x, on_licq_violation: str = "raise"
             ) -> QpSolution:
    """Solve the condensed QP at parameter x (module-level convenience)."""
    return _solver_for(qp).solve(x, on_licq_violation=on_licq_violation)


def u_mpc(qp: "CondensedQp", x, solver: Optional[QpSolver] = None
          ) -> np.ndarray:
    """Receding-horizon control u = C (z* - H^{-1} D x)."""
    x = np.asarray(x, float).reshape(-1)
    sol = (solver or _solver_for(qp)).solve(x, on_licq_violation="ignore")
    return qp.C @ (sol.z - qp.HiD @ x)


def value_function(qp: "CondensedQp", x, solver: Optional[QpSolver] = None):
    """Optimal cost V_T(x) and its gradient W x - S' mu at the solution."""
    x = np.asarray(x, float).reshape(-1)
    sol = (solver or _solver_for(qp)).solve(x, on_licq_violation="ignore")
    val = qp.value_terms(sol.z, x)
    grad = qp.Wx @ x - qp.S.T @ sol.mu
    return val, grad, sol
