"""Active-set enumeration of the explicit receding-horizon law.

Brute-force oracle used to validate the MILP route on small instances:
every candidate active set with linearly independent rows defines an
affine piece; the piece is kept when its consistency region intersects
the domain (one feasibility LP each). The alpha-Lipschitz constant is
the maximum piece-gain norm.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import lpqp
from .model import CondensedQp, Polytope


@dataclass(eq=False)
class RegionGain:
    active: tuple
    K: np.ndarray
    c: np.ndarray


def region_gain(qp: CondensedQp, active) -> RegionGain:
    """Affine law u = K x + c of the piece with the given active rows."""
    active = tuple(int(i) for i in active)
    if not active:
        return RegionGain((), -qp.C @ qp.HiD, np.zeros(qp.m))
    NA = qp.N[list(active)]
    HiNAt = np.linalg.solve(qp.H, NA.T)
    W = NA @ HiNAt
    Winv = np.linalg.inv(W)
    T = HiNAt @ Winv
    K = qp.C @ (T @ qp.S[list(active)] - qp.HiD)
    c = qp.C @ (T @ qp.d[list(active)])
    return RegionGain(active, K, c)


def gain_at(qp: CondensedQp, x, solver: Optional[lpqp.QpSolver] = None
            ) -> RegionGain:
    """Piece gain observed at a specific state (via the QP oracle)."""
    sol = (solver or lpqp.QpSolver(qp)).solve(x, on_licq_violation="ignore")
    act = tuple(i for i in sol.active_set if sol.mu[i] > 1e-9)
    return region_gain(qp, act)


def _region_nonempty(qp: CondensedQp, domain: Polytope, active) -> bool:
    """LP feasibility of {x : active set consistent at x} within the domain."""
    n = qp.n
    rows = [domain.G]
    rhs = [domain.h]
    act = list(active)
    inact = [i for i in range(qp.p) if i not in active]
    if act:
        NA, SA, dA = qp.N[act], qp.S[act], qp.d[act]
        HiNAt = np.linalg.solve(qp.H, NA.T)
        W = NA @ HiNAt
        try:
            Winv = np.linalg.inv(W)
        except np.linalg.LinAlgError:
            return False
        mu_x = -Winv @ SA           # mu(x) = mu_c + mu_x x >= 0
        mu_c = -Winv @ dA
        rows.append(mu_x)           # -mu(x) <= 0  ->  mu_x x >= -mu_c
        rhs.append(mu_c)
        zx = HiNAt @ Winv @ SA
        zc = HiNAt @ Winv @ dA
    else:
        zx = np.zeros((qp.H.shape[0], n))
        zc = np.zeros(qp.H.shape[0])
    if inact:
        NI, SI, dI = qp.N[inact], qp.S[inact], qp.d[inact]
        rows.append(NI @ zx - SI)   # slack >= 0
        rhs.append(dI - NI @ zc)
    prob = lpqp.LpProblem(c=np.zeros(n), A_ub=np.vstack(rows),
                          b_ub=np.concatenate(rhs))
    return lpqp.solve_lp(prob).status == lpqp.LpStatus.OPTIMAL


def enumerate_region_gains(qp: CondensedQp, domain: Polytope,
                           max_sets: int = 200_000) -> List[RegionGain]:
    """All affine pieces whose consistency region meets the domain."""
    mT = qp.H.shape[0]
    nz = [i for i in range(qp.p) if not qp.zero_rows[i]]
    out = []
    count = 0
    for k in range(0, mT + 1):
        for active in itertools.combinations(nz, k):
            count += 1
            if count > max_sets:
                raise RuntimeError("active-set enumeration budget exceeded")
            if k and np.linalg.matrix_rank(qp.N[list(active)]) < k:
                continue
            if _region_nonempty(qp, domain, active):
                try:
                    out.append(region_gain(qp, active))
                except np.linalg.LinAlgError:
                    continue
    return out


def lipschitz_via_enumeration(qp: CondensedQp, domain: Polytope,
                              alpha: float, transpose: bool = True) -> float:
    from .encodings import norm_of_matrix

    gains = enumerate_region_gains(qp, domain)
    return max(norm_of_matrix(g.K, alpha, transpose) for g in gains)
