"""MILP encodings of the certification quantities.

Four building blocks are composed into models:

* `encode_mpc_kkt` — complementarity-free KKT system of the condensed
  QP with binary active-set indicators sigma,
* `encode_mpc_gain` — canonical-basis perturbed copies sharing sigma,
  exposing the critical-region gain columns u^i - u(x),
* `encode_nn` — big-M ReLU encoding (output and Jacobian-product modes),
* `encode_norm_max` — exact 1/inf matrix-norm maximization with a
  binary column/row selector and linearized products.

Top-level drivers (`lipschitz_mpc`, `worst_case_error`,
`lipschitz_error`) assemble these, derive valid activation constants,
seed the branch and bound with sampled feasible points, and return
witnesses alongside solver statistics.

Gain norms default to the transpose convention (the PWA Lipschitz
constant as max over pieces of ||K'||_alpha); `gain_transpose=False`
selects the plain induced norm instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import lpqp
from .milp import (LinExpr, MilpError, MilpModel, MilpOptions, MilpResult,
                   solve_milp, tighten_bounds)
from .model import CondensedQp, Polytope
from .relunet import ActivationBounds, ReluNetwork, forward, propagate_bounds

INF = np.inf
RELU_EPS = 1e-6          # strictness tolerance in the sign-indicator rows
_BIGM_SEED = 0xC0FFEE    # internal sampling seed: results must not depend
                         # on the user's seed choice


class EncodingError(RuntimeError):
    pass


@dataclass
class EncodeOptions:
    alpha: float = INF                  # 1 or inf
    gain_transpose: bool = True
    lp_tighten: bool = True
    n_warm_samples: int = 200
    seed: int = 0
    milp: MilpOptions = field(default_factory=MilpOptions)

    def __post_init__(self):
        if self.alpha not in (1, 1.0, INF):
            raise ValueError("alpha must be 1 or inf")
        self.alpha = float(self.alpha)


# ---------------------------------------------------------------------------
# domain and big-M derivation

@dataclass
class DomainVars:
    idx: List[int]
    lo: np.ndarray
    hi: np.ndarray
    polytope: Polytope

    def exprs(self) -> List[LinExpr]:
        return [LinExpr.of(i) for i in self.idx]


def add_domain(model: MilpModel, domain: Polytope, name: str = "x"
               ) -> DomainVars:
    lo, hi = domain.bounding_box()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise EncodingError("certification domain must be bounded")
    idx = [model.add_cont(f"{name}{i}", lo[i], hi[i])
           for i in range(domain.dim)]
    for r in range(domain.nrows):
        expr = LinExpr({idx[j]: domain.G[r, j] for j in range(domain.dim)
                        if domain.G[r, j] != 0.0})
        model.add_le(expr, domain.h[r], name=f"{name}_dom{r}")
    return DomainVars(idx=idx, lo=lo, hi=hi, polytope=domain)


@dataclass
class KktBigM:
    r_bar: np.ndarray
    mu_bar: float
    z_lo: np.ndarray
    z_hi: np.ndarray
    provenance: str
    unverified: bool


def derive_kkt_bigm(qp: CondensedQp, domain: Polytope,
                    n_samples: int = 160) -> KktBigM:
    """Activation constants for the KKT encoding.

    Slack caps come from interval arithmetic over the domain box and the
    input-feasible z box; multiplier caps use sampled KKT points with a
    100x safety factor and an absolute floor of 1e4, tagged unverified.
    """
    rng = np.random.default_rng(_BIGM_SEED)
    x_lo, x_hi = domain.bounding_box()
    x_hi_inf = x_hi + 1.0          # canonical-basis perturbations add +e_i
    # z* = v* + H^{-1}D x with v* stagewise input-feasible
    u_lo, u_hi = qp.design.U.bounding_box()
    v_lo = np.tile(u_lo, qp.T)
    v_hi = np.tile(u_hi, qp.T)
    HiD = qp.HiD
    Hp, Hm = np.maximum(HiD, 0.0), np.minimum(HiD, 0.0)
    z_lo = v_lo + Hm @ x_hi_inf + Hp @ x_lo
    z_hi = v_hi + Hp @ x_hi_inf + Hm @ x_lo
    # r = d + S x - N z over the boxes
    Sp, Sm = np.maximum(qp.S, 0.0), np.minimum(qp.S, 0.0)
    Np, Nm = np.maximum(qp.N, 0.0), np.minimum(qp.N, 0.0)
    r_hi = qp.d + Sp @ x_hi_inf + Sm @ x_lo - (Np @ z_lo + Nm @ z_hi)
    r_bar = np.maximum(r_hi, 1.0)

    solver = lpqp.QpSolver(qp)
    mu_max = 0.0
    r_pert = np.zeros(qp.p)
    samples = _domain_samples(domain, rng, n_samples)
    for x in samples:
        try:
            sol = solver.solve(x, on_licq_violation="ignore")
        except (lpqp.InfeasibleParameter, lpqp.KernelError):
            continue
        mu_max = max(mu_max, float(sol.mu.max(initial=0.0)))
        act = [i for i in sol.active_set if sol.mu[i] > 1e-9]
        if not act:
            continue
        try:
            K_cols, mus, zs = _perturbed_solutions(qp, x, act)
        except np.linalg.LinAlgError:
            continue
        mu_max = max(mu_max, float(np.abs(mus).max(initial=0.0)))
        for zi, xi in zs:
            r_pert = np.maximum(r_pert, np.abs(qp.d + qp.S @ xi - qp.N @ zi))
    mu_bar = max(1e4, 100.0 * mu_max)
    r_bar = np.maximum(r_bar, 10.0 * r_pert + 1.0)
    zc = np.abs(qp.HiNT) @ np.full(qp.p, mu_bar)
    return KktBigM(r_bar=r_bar, mu_bar=mu_bar,
                   z_lo=np.minimum(z_lo, -zc), z_hi=np.maximum(z_hi, zc),
                   provenance="interval+sampled(x100, floor 1e4)",
                   unverified=True)


def _domain_samples(domain: Polytope, rng, count: int) -> np.ndarray:
    lo, hi = domain.bounding_box()
    n = domain.dim
    pts = [np.zeros(n)]
    # scaled boundary rays catch near-saturated active sets
    for _ in range(count // 2):
        u = rng.normal(size=n)
        u /= max(np.linalg.norm(u), 1e-12)
        t = np.inf
        for r in range(domain.nrows):
            gu = domain.G[r] @ u
            if gu > 1e-12:
                t = min(t, domain.h[r] / gu)
        if np.isfinite(t):
            for f in (0.999, 0.9, 0.6):
                pts.append(f * t * u)
    cand = rng.uniform(lo, hi, size=(count, n))
    inside = np.all(cand @ domain.G.T <= domain.h + 1e-12, axis=1)
    pts.extend(cand[inside])
    return np.asarray(pts)


def _perturbed_solutions(qp: CondensedQp, x, active):
    """Equality-system solutions at x + e_i for a fixed active set."""
    NA = qp.N[active]
    SA = qp.S[active]
    dA = qp.d[active]
    HiNAt = np.linalg.solve(qp.H, NA.T)
    W = NA @ HiNAt
    Winv = np.linalg.inv(W)
    n = qp.n
    cols, mus, zs = [], [], []
    for i in range(n):
        xi = np.asarray(x, float).copy()
        xi[i] += 1.0
        mu_i = -Winv @ (dA + SA @ xi)
        z_i = HiNAt @ Winv @ (dA + SA @ xi)
        u_i = qp.C @ (z_i - qp.HiD @ xi)
        cols.append(u_i)
        mus.append(mu_i)
        zs.append((z_i, xi))
    return cols, mus, zs


# ---------------------------------------------------------------------------
# KKT encoding (complementarity via binary sigma)

@dataclass
class KktEncoding:
    x: DomainVars
    z: List[int]
    mu: List[int]
    r: List[int]
    sigma: List[int]
    u_expr: List[LinExpr]
    bigm: KktBigM
    qp: CondensedQp


def encode_mpc_kkt(model: MilpModel, qp: CondensedQp, x: DomainVars,
                   bigm: Optional[KktBigM] = None) -> KktEncoding:
    bigm = bigm or derive_kkt_bigm(qp, x.polytope)
    p, mT = qp.p, qp.H.shape[0]
    zero = qp.zero_rows
    z = [model.add_cont(f"z{k}", bigm.z_lo[k], bigm.z_hi[k])
         for k in range(mT)]
    mu = [model.add_cont(f"mu{i}", 0.0, bigm.mu_bar) for i in range(p)]
    r = [model.add_cont(f"r{i}", 0.0, bigm.r_bar[i]) for i in range(p)]
    sigma = [model.add_bin(f"sigma{i}") for i in range(p)]
    for i in range(p):
        model.register_bigm(f"r_bar[{i}]", bigm.r_bar[i], bigm.provenance)
    model.register_bigm("mu_bar", bigm.mu_bar, bigm.provenance)

    for i in range(p):
        if zero[i]:
            # parameter-only row: never treated as active, multiplier 0
            model.fix(sigma[i], 0.0)
            model.fix(mu[i], 0.0)
        else:
            # 0 <= r <= r_bar (1 - sigma),  0 <= mu <= mu_bar sigma
            model.add_le(LinExpr.of(r[i]) + LinExpr.of(sigma[i], bigm.r_bar[i]),
                         bigm.r_bar[i], name=f"ract{i}")
            model.add_le(LinExpr.of(mu[i]) - LinExpr.of(sigma[i], bigm.mu_bar),
                         0.0, name=f"muact{i}")
            model.link_bounds(sigma[i], r[i], (0.0, bigm.r_bar[i]), (0.0, 0.0))
            model.link_bounds(sigma[i], mu[i], (0.0, 0.0), (0.0, bigm.mu_bar))
    # stationarity z + H^{-1} N' mu = 0
    HiNT = qp.HiNT
    for k in range(mT):
        expr = LinExpr.of(z[k])
        for i in range(p):
            if HiNT[k, i] != 0.0 and not zero[i]:
                expr.add(LinExpr.of(mu[i], HiNT[k, i]))
        model.add_eq(expr, 0.0, name=f"stat{k}")
    # primal feasibility N z + r - S x = d
    for i in range(p):
        expr = LinExpr.of(r[i])
        for k in range(mT):
            if qp.N[i, k] != 0.0:
                expr.add(LinExpr.of(z[k], qp.N[i, k]))
        for j in range(qp.n):
            if qp.S[i, j] != 0.0:
                expr.add(LinExpr.of(x.idx[j], -qp.S[i, j]))
        model.add_eq(expr, qp.d[i], name=f"feas{i}")
    # LICQ caps the number of simultaneously active rows at mT
    model.add_le(LinExpr({sigma[i]: 1.0 for i in range(p) if not zero[i]}),
                 float(mT), name="licq_card")
    # provably exclusive opposite rows cannot both be active
    nz = np.flatnonzero(~zero)
    scale = 1e-9 * (1.0 + np.abs(qp.N).max() + np.abs(qp.S).max())
    for a in range(len(nz)):
        for bdx in range(a + 1, len(nz)):
            i, j = int(nz[a]), int(nz[bdx])
            if (np.abs(qp.N[i] + qp.N[j]).max() < scale and
                    np.abs(qp.S[i] + qp.S[j]).max() < scale and
                    qp.d[i] + qp.d[j] > 1e-9):
                model.add_le(LinExpr.of(sigma[i]) + LinExpr.of(sigma[j]), 1.0,
                             name=f"excl{i}_{j}")

    CHiD = qp.C @ qp.HiD
    u_expr = []
    for row in range(qp.m):
        expr = LinExpr()
        for k in range(mT):
            if qp.C[row, k] != 0.0:
                expr.add(LinExpr.of(z[k], qp.C[row, k]))
        for j in range(qp.n):
            if CHiD[row, j] != 0.0:
                expr.add(LinExpr.of(x.idx[j], -CHiD[row, j]))
        u_expr.append(expr)
    return KktEncoding(x=x, z=z, mu=mu, r=r, sigma=sigma, u_expr=u_expr,
                       bigm=bigm, qp=qp)


@dataclass
class GainEncoding:
    kkt: KktEncoding
    z_i: List[List[int]]
    mu_i: List[List[int]]
    r_i: List[List[int]]
    u_i_expr: List[List[LinExpr]]
    K_expr: List[List[LinExpr]]        # m x n


def encode_mpc_gain(model: MilpModel, kkt: KktEncoding) -> GainEncoding:
    """Perturbed KKT copies along the canonical basis, sharing sigma.

    The sign constraints are relaxed two-sided exactly as the
    construction requires; u^i may legitimately differ fromuj the true
    control at x + e_i near region boundaries.
    """
    qp = kkt.qp
    p, mT, n, m = qp.p, qp.H.shape[0], qp.n, qp.m
    bigm = kkt.bigm
    zero = qp.zero_rows
    HiNT = qp.HiNT
    CHiD = qp.C @ qp.HiD
    z_cap = np.abs(HiNT) @ np.full(p, bigm.mu_bar)
    z_i, mu_i, r_i, u_i_expr = [], [], [], []
    for i in range(n):
        zi = [model.add_cont(f"z^{i}_{k}", -z_cap[k], z_cap[k])
              for k in range(mT)]
        mui = [model.add_cont(f"mu^{i}_{j}", -bigm.mu_bar, bigm.mu_bar)
               for j in range(p)]
        ri = [model.add_cont(f"r^{i}_{j}", -bigm.r_bar[j], bigm.r_bar[j])
              for j in range(p)]
        for j in range(p):
            if zero[j]:
                model.fix(mui[j], 0.0)
                continue
            # -mu_bar sigma <= mu^i <= mu_bar sigma
            model.add_le(LinExpr.of(mui[j]) -
                         LinExpr.of(kkt.sigma[j], bigm.mu_bar), 0.0)
            model.add_le(LinExpr.of(mui[j], -1.0) -
                         LinExpr.of(kkt.sigma[j], bigm.mu_bar), 0.0)
            model.link_bounds(kkt.sigma[j], mui[j], (0.0, 0.0),
                              (-bigm.mu_bar, bigm.mu_bar))
            # -r_bar (1-sigma) <= r^i <= r_bar (1-sigma)
            model.add_le(LinExpr.of(ri[j]) +
                         LinExpr.of(kkt.sigma[j], bigm.r_bar[j]),
                         bigm.r_bar[j])
            model.add_le(LinExpr.of(ri[j], -1.0) +
                         LinExpr.of(kkt.sigma[j], bigm.r_bar[j]),
                         bigm.r_bar[j])
            model.link_bounds(kkt.sigma[j], ri[j],
                              (-bigm.r_bar[j], bigm.r_bar[j]), (0.0, 0.0))
        for k in range(mT):
            expr = LinExpr.of(zi[k])
            for j in range(p):
                if HiNT[k, j] != 0.0 and not zero[j]:
                    expr.add(LinExpr.of(mui[j], HiNT[k, j]))
            model.add_eq(expr, 0.0)
        # N z^i + r^i - S (x + e_i) = d
        for j in range(p):
            expr = LinExpr.of(ri[j])
            for k in range(mT):
                if qp.N[j, k] != 0.0:
                    expr.add(LinExpr.of(zi[k], qp.N[j, k]))
            for col in range(n):
                if qp.S[j, col] != 0.0:
                    expr.add(LinExpr.of(kkt.x.idx[col], -qp.S[j, col]))
            model.add_eq(expr, qp.d[j] + qp.S[j, i])
        ui = []
        for row in range(m):
            expr = LinExpr(const=-CHiD[row, i])          # -C H^{-1}D e_i
            for k in range(mT):
                if qp.C[row, k] != 0.0:
                    expr.add(LinExpr.of(zi[k], qp.C[row, k]))
            for col in range(n):
                if CHiD[row, col] != 0.0:
                    expr.add(LinExpr.of(kkt.x.idx[col], -CHiD[row, col]))
            ui.append(expr)
        z_i.append(zi)
        mu_i.append(mui)
        r_i.append(ri)
        u_i_expr.append(ui)
    K_expr = [[u_i_expr[i][row] - kkt.u_expr[row] for i in range(n)]
              for row in range(m)]
    return GainEncoding(kkt=kkt, z_i=z_i, mu_i=mu_i, r_i=r_i,
                        u_i_expr=u_i_expr, K_expr=K_expr)


# ---------------------------------------------------------------------------
# ReLU network encoding

@dataclass
class NnEncoding:
    x: DomainVars
    net: ReluNetwork
    bounds: ActivationBounds
    delta: List[List[Optional[int]]]       # None when the neuron is stable
    delta_fixed: List[np.ndarray]          # fixed values where stable
    q: List[List[LinExpr]]
    out_expr: List[LinExpr]
    jac_expr: Optional[List[List[LinExpr]]] = None     # m x n
    jac_bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None
    aux: List[int] = field(default_factory=list)
    aux_meta: List[Tuple[int, int, int]] = field(default_factory=list)


def encode_nn(model: MilpModel, net: ReluNetwork, x: DomainVars,
              bounds: ActivationBounds, mode: str = "output") -> NnEncoding:
    """Big-M model of the network over the domain box.

    `mode="output"` exposes the network output as affine expressions;
    `mode="jacobian"` additionally builds the layer-product chain whose
    final matrix equals the local input-output gain.
    """
    if mode not in ("output", "jacobian"):
        raise EncodingError("mode must be 'output' or 'jacobian'")
    if not (np.all(bounds.input_lo <= x.lo + 1e-9) and
            np.all(bounds.input_hi >= x.hi - 1e-9)):
        raise EncodingError("activation bounds do not cover the domain box")
    acts: List[List[LinExpr]] = [x.exprs()]
    delta: List[List[Optional[int]]] = []
    delta_fixed: List[np.ndarray] = []
    q_all: List[List[LinExpr]] = []
    for j, (W, b) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
        lo_j = bounds.lower[j]
        hi_j = bounds.upper[j]
        dl: List[Optional[int]] = []
        fx = np.full(W.shape[0], -1.0)
        qs: List[LinExpr] = []
        for i in range(W.shape[0]):
            pre = LinExpr(const=b[i])
            for k in range(W.shape[1]):
                if W[i, k] != 0.0:
                    pre.add(acts[-1][k], W[i, k])
            lb, ub = float(lo_j[i]), float(hi_j[i])
            if lb > ub + 1e-12:
                raise EncodingError(f"invalid bounds at neuron ({j},{i})")
            if ub <= 0.0:
                dl.append(None)
                fx[i] = 0.0
                qs.append(LinExpr(const=0.0))
                continue
            if lb >= 0.0:
                dl.append(None)
                fx[i] = 1.0
                qs.append(pre)
                continue
            d = model.add_bin(f"delta{j}_{i}")
            q = model.add_cont(f"q{j}_{i}", 0.0, ub)
            model.register_bigm(f"act[{j},{i}]", max(abs(lb), abs(ub)),
                                bounds.method)
            # pre >= lb (1 - delta)   and   pre + eps <= (ub + eps) delta
            model.add_ge(pre + LinExpr.of(d, lb), lb, name=f"sgn_lo{j}_{i}")
            model.add_le(pre - LinExpr.of(d, ub + RELU_EPS), -RELU_EPS,
                         name=f"sgn_hi{j}_{i}")
            # q <= ub delta ; q <= pre - lb (1 - delta) ; q >= pre
            model.add_le(LinExpr.of(q) - LinExpr.of(d, ub), 0.0)
            model.add_le(LinExpr.of(q) - pre - LinExpr.of(d, -lb), -lb)
            model.add_ge(LinExpr.of(q) - pre, 0.0)
            model.link_bounds(d, q, (0.0, 0.0), (0.0, ub))
            dl.append(d)
            qs.append(LinExpr.of(q))
        delta.append(dl)
        delta_fixed.append(fx)
        q_all.append(qs)
        acts.append(qs)
    WL, bL = net.weights[-1], net.biases[-1]
    out_expr = []
    for row in range(WL.shape[0]):
        expr = LinExpr(const=bL[row])
        for k in range(WL.shape[1]):
            if WL[row, k] != 0.0:
                expr.add(acts[-1][k], WL[row, k])
        out_expr.append(expr)
    enc = NnEncoding(x=x, net=net, bounds=bounds, delta=delta,
                     delta_fixed=delta_fixed, q=q_all, out_expr=out_expr)
    if mode == "jacobian":
        _encode_jacobian_chain(model, enc)
    return enc


def _encode_jacobian_chain(model: MilpModel, enc: NnEncoding) -> None:
    """Product chain Y^{j+1} = W^{j+1} diag(delta^j) Y^j with Y^0 = W^0."""
    net = enc.net
    n = net.n_in
    Y_expr: List[List[LinExpr]] = [[LinExpr(const=net.weights[0][h, k])
                                    for k in range(n)]
                                   for h in range(net.weights[0].shape[0])]
    Y_lo = net.weights[0].astype(float).copy()
    Y_hi = net.weights[0].astype(float).copy()
    for j in range(net.L):
        nj = len(Y_expr)
        # G = diag(delta^j) Y^j
        G_expr: List[List[LinExpr]] = []
        G_lo = np.zeros((nj, n))
        G_hi = np.zeros((nj, n))
        for h in range(nj):
            d = enc.delta[j][h]
            row: List[LinExpr] = []
            for k in range(n):
                ylo, yhi = float(Y_lo[h, k]), float(Y_hi[h, k])
                if d is None:
                    if enc.delta_fixed[j][h] == 1.0:
                        row.append(Y_expr[h][k])
                        G_lo[h, k], G_hi[h, k] = ylo, yhi
                    else:
                        row.append(LinExpr(const=0.0))
                    continue
                if yhi - ylo <= 1e-14:          # constant entry: linear in delta
                    row.append(LinExpr.of(d, ylo))
                    G_lo[h, k] = min(0.0, ylo)
                    G_hi[h, k] = max(0.0, ylo)
                    continue
                g = model.add_cont(f"g{j}_{h}_{k}", min(0.0, ylo),
                                   max(0.0, yhi))
                model.register_bigm(f"jac[{j},{h},{k}]",
                                    max(abs(ylo), abs(yhi)), "interval")
                ye = Y_expr[h][k]
                model.add_le(LinExpr.of(g) - LinExpr.of(d, yhi), 0.0)
                model.add_ge(LinExpr.of(g) - LinExpr.of(d, ylo), 0.0)
                model.add_le(LinExpr.of(g) - ye - LinExpr.of(d, -ylo), -ylo)
                model.add_ge(LinExpr.of(g) - ye - LinExpr.of(d, -yhi), -yhi)
                model.link_bounds(d, g, (0.0, 0.0), (ylo, yhi))
                enc.aux.append(g)
                enc.aux_meta.append((j, h, k))
                row.append(LinExpr.of(g))
                G_lo[h, k] = min(0.0, ylo)
                G_hi[h, k] = max(0.0, yhi)
            G_expr.append(row)
        Wn = net.weights[j + 1]
        Wp, Wm = np.maximum(Wn, 0.0), np.minimum(Wn, 0.0)
        Y_lo = Wp @ G_lo + Wm @ G_hi
        Y_hi = Wp @ G_hi + Wm @ G_lo
        Y_expr = [[LinExpr.combine([G_expr[t][k] for t in range(nj)],
                                   Wn[h, :]) for k in range(n)]
                  for h in range(Wn.shape[0])]
    enc.jac_expr = Y_expr
    enc.jac_bounds = (Y_lo, Y_hi)


def lp_tighten_bounds(net: ReluNetwork, bounds: ActivationBounds
                      ) -> ActivationBounds:
    """Tighten interval activation bounds with per-neuron relaxation LPs."""
    lowers = [lo.copy() for lo in bounds.lower]
    uppers = [hi.copy() for hi in bounds.upper]
    for layer in range(net.L):
        model = MilpModel("tighten", sense="max")
        box = Polytope.from_bounds(bounds.input_lo, bounds.input_hi)
        x = add_domain(model, box)
        partial = ActivationBounds(lowers, uppers, bounds.input_lo,
                                   bounds.input_hi, method=bounds.method)
        sub = ReluNetwork(net.weights[:layer + 2], net.biases[:layer + 2])
        enc = encode_nn(model, sub,  x, _slice_bounds(partial, layer + 1),
                        mode="output")
        pre_exprs = []
        W, b = net.weights[layer], net.biases[layer]
        prev = x.exprs() if layer == 0 else enc.q[layer - 1]
        for i in range(W.shape[0]):
            e = LinExpr(const=b[i])
            for k in range(W.shape[1]):
                if W[i, k] != 0.0:
                    e.add(prev[k], W[i, k])
            pre_exprs.append(e)
        ranges = tighten_bounds(model, pre_exprs)
        for i, (lo, hi) in enumerate(ranges):
            lowers[layer][i] = max(lowers[layer][i], lo - 1e-9)
            uppers[layer][i] = min(uppers[layer][i], hi + 1e-9)
    return ActivationBounds(lowers, uppers, bounds.input_lo, bounds.input_hi,
                            method="interval+lp")


def _slice_bounds(bounds: ActivationBounds, n_layers: int) -> ActivationBounds:
    return ActivationBounds(bounds.lower[:n_layers], bounds.upper[:n_layers],
                            bounds.input_lo, bounds.input_hi, bounds.method)


# ---------------------------------------------------------------------------
# norm maximization (binary dual selector + linearized products)

@dataclass
class NormMilp:
    lam0: List[int]
    lam1: List[Optional[int]]
    lam2: List[Optional[int]]
    y1: List[Optional[int]]
    y2: List[Optional[int]]
    columns: List[List[int]]        # entry indices per selector group
    entries: List[LinExpr]
    entry_bounds: List[Tuple[float, float]]
    objective: LinExpr


def encode_norm_max(model: MilpModel, entries, entry_bounds, alpha: float,
                    transpose: bool = False) -> NormMilp:
    """Maximize the alpha-norm of an affine matrix expression.

    `entries` is an (m, n) nested list of LinExpr; bounds must be valid
    ranges of each entry over the model's feasible set. The binary
    selector picks one column (alpha = 1) or row (alpha = inf); products
    between the selector and entries are linearized through y variables.
    """
    E = [list(row) for row in entries]
    B = [list(row) for row in entry_bounds]
    mrows = len(E)
    ncols = len(E[0])
    use_rows_of = (alpha == 1.0) == (not transpose)
    if not use_rows_of:
        E = [[E[i][j] for i in range(mrows)] for j in range(ncols)]
        B = [[B[i][j] for i in range(mrows)] for j in range(ncols)]
        mrows, ncols = ncols, mrows
    # canonical problem: max over columns j of sum_i |E[i][j]|
    lam0 = [model.add_bin(f"lam0_{j}") for j in range(ncols)]
    model.add_eq(LinExpr({l: 1.0 for l in lam0}), 1.0, name="one_group")
    lam1: List[Optional[int]] = []
    lam2: List[Optional[int]] = []
    y1: List[Optional[int]] = []
    y2: List[Optional[int]] = []
    entry_list: List[LinExpr] = []
    bound_list: List[Tuple[float, float]] = []
    columns: List[List[int]] = [[] for _ in range(ncols)]
    obj = LinExpr()
    idx = 0
    for j in range(ncols):
        for i in range(mrows):
            e = E[i][j]
            lo, hi = B[i][j]
            if hi < lo:
                raise EncodingError("entry bounds inverted")
            entry_list.append(e)
            bound_list.append((lo, hi))
            columns[j].append(idx)
            if hi - lo <= 1e-12:
                # constant entry contributes |c| when its group is chosen
                obj.add(LinExpr.of(lam0[j], abs(0.5 * (lo + hi))))
                lam1.append(None)
                lam2.append(None)
                y1.append(None)
                y2.append(None)
                idx += 1
                continue
            l1 = model.add_bin(f"lam1_{idx}")
            l2 = model.add_bin(f"lam2_{idx}")
            model.add_eq(LinExpr.of(l1) + LinExpr.of(l2) -
                         LinExpr.of(lam0[j]), 0.0)
            v1 = model.add_cont(f"y1_{idx}", min(lo, 0.0), max(hi, 0.0))
            v2 = model.add_cont(f"y2_{idx}", min(lo, 0.0), max(hi, 0.0))
            model.register_bigm(f"norm_entry[{idx}]", max(abs(lo), abs(hi)),
                                "lp-relaxation bound")
            for lam, v in ((l1, v1), (l2, v2)):
                model.add_le(LinExpr.of(v) - LinExpr.of(lam, hi), 0.0)
                model.add_ge(LinExpr.of(v) - LinExpr.of(lam, lo), 0.0)
                model.add_le(LinExpr.of(v) - e - LinExpr.of(lam, -lo), -lo)
                model.add_ge(LinExpr.of(v) - e - LinExpr.of(lam, -hi), -hi)
                model.link_bounds(lam, v, (0.0, 0.0), (lo, hi))
            obj.add(LinExpr.of(v1, -1.0)).add(LinExpr.of(v2, 1.0))
            lam1.append(l1)
            lam2.append(l2)
            y1.append(v1)
            y2.append(v2)
            idx += 1
    model.set_objective(obj, sense="max")
    return NormMilp(lam0=lam0, lam1=lam1, lam2=lam2, y1=y1, y2=y2,
                    columns=columns, entries=entry_list,
                    entry_bounds=bound_list, objective=obj)


def norm_warm_values(norm: NormMilp, assign: np.ndarray) -> None:
    """Complete a partial assignment with consistent selector/y values."""
    vals = [e.value(assign) for e in norm.entries]
    sums = [sum(abs(vals[k]) for k in col) for col in norm.columns]
    best = int(np.argmax(sums))
    for j, lam in enumerate(norm.lam0):
        assign[lam] = 1.0 if j == best else 0.0
    for j, col in enumerate(norm.columns):
        for k in col:
            if norm.lam1[k] is None:
                continue
            on = j == best
            pos = vals[k] >= 0.0
            assign[norm.lam1[k]] = 1.0 if (on and not pos) else 0.0
            assign[norm.lam2[k]] = 1.0 if (on and pos) else 0.0
            assign[norm.y1[k]] = vals[k] if (on and not pos) else 0.0
            assign[norm.y2[k]] = vals[k] if (on and pos) else 0.0


def norm_of_matrix(K: np.ndarray, alpha: float, transpose: bool) -> float:
    M = K.T if transpose else K
    if alpha == 1.0:
        return float(np.abs(M).sum(axis=0).max())
    return float(np.abs(M).sum(axis=1).max())


def vector_norm(v: np.ndarray, alpha: float) -> float:
    return float(np.abs(v).sum() if alpha == 1.0 else np.abs(v).max())


# ---------------------------------------------------------------------------
# top-level drivers

@dataclass
class CertifiedValue:
    value: float
    witness: Optional[np.ndarray]
    result: MilpResult
    model_hash: str
    extras: dict = field(default_factory=dict)


def _entry_ranges(model: MilpModel, exprs_flat, opts: EncodeOptions):
    try:
        return tighten_bounds(model, exprs_flat, opts.milp)
    except MilpError as exc:
        raise EncodingError(f"entry bound derivation failed: {exc}") from exc


def _kkt_assignment(model: MilpModel, kkt: KktEncoding, assign, x, sol):
    qp = kkt.qp
    assign[kkt.x.idx] = x
    for k, zi in enumerate(kkt.z):
        assign[zi] = sol.z[k]
    slack = qp.d + qp.S @ x - qp.N @ sol.z
    for i in range(qp.p):
        assign[kkt.mu[i]] = sol.mu[i]
        assign[kkt.r[i]] = max(slack[i], 0.0)
        assign[kkt.sigma[i]] = 1.0 if sol.mu[i] > 1e-9 else 0.0


def _gain_assignment(gain: GainEncoding, assign, x, sol) -> bool:
    qp = gain.kkt.qp
    act = [i for i in sol.active_set if sol.mu[i] > 1e-9]
    try:
        if act:
            _, mus, zs = _perturbed_solutions(qp, x, act)
        else:
            mus = [np.zeros(0)] * qp.n
            zs = [(np.zeros(qp.H.shape[0]), _basis_shift(x, i))
                  for i in range(qp.n)]
    except np.linalg.LinAlgError:
        return False
    bigm = gain.kkt.bigm
    for i in range(qp.n):
        z_i, x_i = zs[i]
        mu_full = np.zeros(qp.p)
        for k, row in enumerate(act):
            mu_full[row] = mus[i][k]
        if np.abs(mu_full).max(initial=0.0) > bigm.mu_bar:
            return False
        r_full = qp.d + qp.S @ x_i - qp.N @ z_i
        for row in act:
            r_full[row] = 0.0
        if np.any(np.abs(r_full) > bigm.r_bar):
            return False
        for k, v in enumerate(gain.z_i[i]):
            assign[v] = z_i[k]
        for k, v in enumerate(gain.mu_i[i]):
            assign[v] = mu_full[k]
        for k, v in enumerate(gain.r_i[i]):
            assign[v] = r_full[k]
    return True


def _basis_shift(x, i):
    xi = np.asarray(x, float).copy()
    xi[i] += 1.0
    return xi


def _nn_assignment(enc: NnEncoding, assign, x) -> None:
    a = np.asarray(x, float)
    for j, (W, b) in enumerate(zip(enc.net.weights[:-1],
                                   enc.net.biases[:-1])):
        pre = W @ a + b
        post = np.maximum(pre, 0.0)
        for i, d in enumerate(enc.delta[j]):
            if d is not None:
                assign[d] = 1.0 if pre[i] >= 0.0 else 0.0
                q_idx = next(iter(enc.q[j][i].terms))
                assign[q_idx] = post[i]
        a = post
    if enc.jac_expr is not None:
        _fill_jacobian_aux(enc, assign, x)


def _fill_jacobian_aux(enc: NnEncoding, assign, x) -> None:
    """Evaluate the product-chain auxiliaries g = delta * Y entry at x."""
    net = enc.net
    a = np.asarray(x, float)
    G_per_layer = []
    Y = net.weights[0].astype(float)
    for j in range(net.L):
        pre = net.weights[j] @ a + net.biases[j]
        delta = (pre >= 0.0).astype(float)
        G = delta[:, None] * Y
        G_per_layer.append(G)
        Y = net.weights[j + 1] @ G
        a = np.maximum(pre, 0.0)
    for var, (j, h, k) in zip(enc.aux, enc.aux_meta):
        assign[var] = G_per_layer[j][h, k]


def lipschitz_mpc(qp: CondensedQp, domain: Polytope,
                  opts: Optional[EncodeOptions] = None) -> CertifiedValue:
    """Exact alpha-Lipschitz constant of the receding-horizon law."""
    opts = opts or EncodeOptions()
    model = MilpModel("lipschitz_mpc", sense="max")
    x = add_domain(model, domain)
    bigm = derive_kkt_bigm(qp, domain)
    kkt = encode_mpc_kkt(model, qp, x, bigm)
    gain = encode_mpc_gain(model, kkt)
    flat = [gain.K_expr[i][j] for i in range(qp.m) for j in range(qp.n)]
    ranges = _entry_ranges(model, flat, opts)
    bmat = [[ranges[i * qp.n + j] for j in range(qp.n)] for i in range(qp.m)]
    norm = encode_norm_max(model, gain.K_expr, bmat, opts.alpha,
                           transpose=opts.gain_transpose)

    warm = _gain_warm_starts(model, qp, domain, kkt, gain, norm, opts)
    res = solve_milp(model, opts.milp, warm_starts=warm)
    if res.status not in ("Optimal", "TimedOut") or res.x is None:
        raise EncodingError(f"Lipschitz MILP ended with status {res.status}")
    witness = res.x[x.idx] if res.x is not None else None
    return CertifiedValue(value=float(res.objective), witness=witness,
                          result=res, model_hash=model.canonical_hash(),
                          extras={"alpha": opts.alpha,
                                  "transpose": opts.gain_transpose,
                                  "mu_bar": bigm.mu_bar,
                                  "bigm_unverified": bigm.unverified})


def _gain_warm_starts(model, qp, domain, kkt, gain, norm, opts,
                      extra_points=()):
    rng = np.random.default_rng(opts.seed)
    solver = lpqp.QpSolver(qp)
    pts = list(extra_points) + list(
        _domain_samples(domain, rng, opts.n_warm_samples))
    best = []
    for x in pts:
        x = np.asarray(x, float)
        try:
            sol = solver.solve(x, on_licq_violation="ignore")
        except (lpqp.InfeasibleParameter, lpqp.KernelError):
            continue
        assign = np.zeros(model.nvars)
        _kkt_assignment(model, kkt, assign, x, sol)
        if not _gain_assignment(gain, assign, x, sol):
            continue
        norm_warm_values(norm, assign)
        if model.violation(assign) <= 1e-6:
            best.append((model.objective_value(assign), len(best), assign))
    best.sort(key=lambda t: (-t[0], t[1]))
    return [a for _, _, a in best[:3]]


def worst_case_error(qp: CondensedQp, net: ReluNetwork, domain: Polytope,
                     opts: Optional[EncodeOptions] = None) -> CertifiedValue:
    """Exact worst-case approximation error over the domain."""
    opts = opts or EncodeOptions()
    if net.n_in != qp.n or net.n_out != qp.m:
        raise EncodingError("network dimensions do not match the design")
    model = MilpModel("worst_case_error", sense="max")
    x = add_domain(model, domain)
    bigm = derive_kkt_bigm(qp, domain)
    kkt = encode_mpc_kkt(model, qp, x, bigm)
    bounds = propagate_bounds(net, x.lo, x.hi, lp_tighten=opts.lp_tighten)
    nn = encode_nn(model, net, x, bounds, mode="output")
    err = [[nn.out_expr[i] - kkt.u_expr[i]] for i in range(qp.m)]
    flat = [err[i][0] for i in range(qp.m)]
    ranges = _entry_ranges(model, flat, opts)
    bmat = [[ranges[i]] for i in range(qp.m)]
    norm = encode_norm_max(model, err, bmat, opts.alpha, transpose=False)

    rng = np.random.default_rng(opts.seed)
    solver = lpqp.QpSolver(qp)
    warm = []
    scored = []
    for xc in _domain_samples(domain, rng, opts.n_warm_samples):
        try:
            sol = solver.solve(xc, on_licq_violation="ignore")
        except (lpqp.InfeasibleParameter, lpqp.KernelError):
            continue
        u = qp.C @ (sol.z - qp.HiD @ xc)
        e = forward(net, xc)[0] - u
        scored.append((vector_norm(e, opts.alpha), xc, sol))
    scored.sort(key=lambda t: -t[0])
    for _, xc, sol in scored[:5]:
        assign = np.zeros(model.nvars)
        _kkt_assignment(model, kkt, assign, xc, sol)
        _nn_assignment(nn, assign, xc)
        norm_warm_values(norm, assign)
        if model.violation(assign) <= 1e-6:
            warm.append(assign)
    res = solve_milp(model, opts.milp, warm_starts=warm)
    if res.status not in ("Optimal", "TimedOut") or res.x is None:
        raise EncodingError(f"error MILP ended with status {res.status}")
    return CertifiedValue(value=float(res.objective), witness=res.x[x.idx],
                          result=res, model_hash=model.canonical_hash(),
                          extras={"alpha": opts.alpha,
                                  "sampled_lower_bound":
                                      scored[0][0] if scored else 0.0,
                                  "bigm_unverified": bigm.unverified})


def lipschitz_error(qp: CondensedQp, net: ReluNetwork, domain: Polytope,
                    opts: Optional[EncodeOptions] = None,
                    constant_gain: Optional[np.ndarray] = None
                    ) -> CertifiedValue:
    """Exact Lipschitz constant of the approximation-error mapping.

    With `constant_gain` the controller gain is taken as that constant
    matrix over the whole domain (valid inside the admissible set where
    the law is linear), which removes the KKT block from the model.
    """
    opts = opts or EncodeOptions()
    model = MilpModel("lipschitz_error", sense="max")
    x = add_domain(model, domain)
    bounds = propagate_bounds(net, x.lo, x.hi, lp_tighten=opts.lp_tighten)
    nn = encode_nn(model, net, x, bounds, mode="jacobian")
    m, n = qp.m, qp.n
    gain = None
    bigm = None
    if constant_gain is None:
        bigm = derive_kkt_bigm(qp, domain)
        kkt = encode_mpc_kkt(model, qp, x, bigm)
        gain = encode_mpc_gain(model, kkt)
        K_exprs = [[nn.jac_expr[i][j] - gain.K_expr[i][j] for j in range(n)]
                   for i in range(m)]
    else:
        Kc = np.asarray(constant_gain, float)
        K_exprs = [[nn.jac_expr[i][j] - Kc[i, j] for j in range(n)]
                   for i in range(m)]
    flat = [K_exprs[i][j] for i in range(m) for j in range(n)]
    ranges = _entry_ranges(model, flat, opts)
    bmat = [[ranges[i * n + j] for j in range(n)] for i in range(m)]
    norm = encode_norm_max(model, K_exprs, bmat, opts.alpha,
                           transpose=opts.gain_transpose)

    rng = np.random.default_rng(opts.seed)
    solver = lpqp.QpSolver(qp)
    warm = []
    scored = []
    from .relunet import jacobian as nn_jacobian

    for xc in _domain_samples(domain, rng, opts.n_warm_samples):
        try:
            sol = solver.solve(xc, on_licq_violation="ignore")
        except (lpqp.InfeasibleParameter, lpqp.KernelError):
            continue
        Kn, _ = nn_jacobian(net, xc)
        if constant_gain is None:
            Km = _oracle_gain(qp, xc, sol)
            if Km is None:
                continue
        else:
            Km = np.asarray(constant_gain, float)
        scored.append((norm_of_matrix(Kn - Km, opts.alpha,
                                      opts.gain_transpose), xc, sol))
    scored.sort(key=lambda t: -t[0])
    for _, xc, sol in scored[:5]:
        assign = np.zeros(model.nvars)
        if gain is not None:
            _kkt_assignment(model, gain.kkt, assign, xc, sol)
            if not _gain_assignment(gain, assign, xc, sol):
                continue
        else:
            assign[x.idx] = xc
        _nn_assignment(nn, assign, xc)
        norm_warm_values(norm, assign)
        if model.violation(assign) <= 1e-6:
            warm.append(assign)
    res = solve_milp(model, opts.milp, warm_starts=warm)
    if res.status not in ("Optimal", "TimedOut") or res.x is None:
        raise EncodingError(f"error-Lipschitz MILP ended with {res.status}")
    return CertifiedValue(value=float(res.objective), witness=res.x[x.idx],
                          result=res, model_hash=model.canonical_hash(),
                          extras={"alpha": opts.alpha,
                                  "transpose": opts.gain_transpose,
                                  "constant_gain": constant_gain is not None,
                                  "bigm_unverified":
                                      bigm.unverified if bigm else False})


def _oracle_gain(qp: CondensedQp, x, sol) -> Optional[np.ndarray]:
    act = [i for i in sol.active_set if sol.mu[i] > 1e-9]
    if not act:
        return -qp.C @ qp.HiD
    try:
        NA = qp.N[act]
        HiNAt = np.linalg.solve(qp.H, NA.T)
        W = NA @ HiNAt
        Winv = np.linalg.inv(W)
        return qp.C @ (HiNAt @ Winv @ qp.S[act] - qp.HiD)
    except np.linalg.LinAlgError:
        return None


def nn_input_violations(net: ReluNetwork, domain: Polytope,
                        Upsilon: np.ndarray, rho: np.ndarray,
                        opts: Optional[EncodeOptions] = None) -> List[dict]:
    """MILP maxima of each input-constraint residual of the raw network."""
    opts = opts or EncodeOptions()
    out = []
    for row in range(Upsilon.shape[0]):
        model = MilpModel(f"input_gate_{row}", sense="max")
        x = add_domain(model, domain)
        bounds = propagate_bounds(net, x.lo, x.hi, lp_tighten=opts.lp_tighten)
        nn = encode_nn(model, net, x, bounds, mode="output")
        expr = LinExpr.combine(nn.out_expr, Upsilon[row]) - float(rho[row])
        model.set_objective(expr, sense="max")
        res = solve_milp(model, opts.milp)
        if res.status not in ("Optimal", "TimedOut") or res.x is None:
            raise EncodingError(f"input gate MILP status {res.status}")
        out.append({"row": row, "violation": float(res.objective),
                    "witness": res.x[x.idx].tolist(),
                    "status": res.status})
    return out
