"""Mixed-integer linear model container and branch-and-bound solver.

Models collect continuous/binary variables, linear <=/= constraints and
a linear objective. The solver is a deterministic best-bound branch and
bound: LP relaxations through a pluggable backend (scipy HiGHS by
default, the internal simplex as fallback), branching on the most
fractional binary with lowest-index tie-breaking. Every big-M constant
used by an encoder must be registered with its derivation so models
with unbounded activation constants are refused.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import os
import subprocess
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp


class MilpError(RuntimeError):
    pass


class LinExpr:
    """Sparse affine expression sum_i coef_i * var_i + const."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms: dict = dict(terms) if terms else {}
        self.const = float(const)

    @classmethod
    def of(cls, var: int, coef: float = 1.0) -> "LinExpr":
        return cls({int(var): float(coef)})

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def add(self, other, scale: float = 1.0) -> "LinExpr":
        if isinstance(other, LinExpr):
            for k, v in other.terms.items():
                self.terms[k] = self.terms.get(k, 0.0) + scale * v
            self.const += scale * other.const
        else:
            self.const += scale * float(other)
        return self

    def __add__(self, other):
        return self.copy().add(other)

    def __sub__(self, other):
        return self.copy().add(other, -1.0)

    def __mul__(self, scalar):
        return LinExpr({k: v * scalar for k, v in self.terms.items()},
                       self.const * scalar)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[k] for k, v in self.terms.items())

    @staticmethod
    def combine(exprs, coefs) -> "LinExpr":
        out = LinExpr()
        for e, c in zip(exprs, coefs):
            if c != 0.0:
                out.add(e if isinstance(e, LinExpr) else LinExpr(const=e), c)
        return out


def const_expr(value: float) -> LinExpr:
    return LinExpr(const=value)


@dataclass
class _Row:
    cols: np.ndarray
    vals: np.ndarray
    rhs: float
    name: str


class MilpModel:
    def __init__(self, name: str = "model", sense: str = "max"):
        if sense not in ("max", "min"):
            raise MilpError("sense must be 'max' or 'min'")
        self.name = name
        self.sense = sense
        self.var_names: list = []
        self.lo: list = []
        self.hi: list = []
        self.is_bin: list = []
        self.rows_le: list = []
        self.rows_eq: list = []
        self.obj = LinExpr()
        self.bigm_registry: list = []      # (name, value, provenance)
        self.bound_links: dict = {}        # bin idx -> [(var, (lo0,hi0), (lo1,hi1))]
        self._finalized = None

    # -- construction --------------------------------------------------------
    def add_cont(self, name: str, lo: float, hi: float) -> int:
        if not (np.isfinite(lo) or lo == -np.inf) or np.isnan(lo) or np.isnan(hi):
            raise MilpError(f"bad bounds for {name}")
        self.var_names.append(name)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.is_bin.append(False)
        self._finalized = None
        return len(self.var_names) - 1

    def add_bin(self, name: str) -> int:
        self.var_names.append(name)
        self.lo.append(0.0)
        self.hi.append(1.0)
        self.is_bin.append(True)
        self._finalized = None
        return len(self.var_names) - 1

    def fix(self, var: int, value: float) -> None:
        self.lo[var] = float(value)
        self.hi[var] = float(value)
        self._finalized = None

    def _row(self, expr: LinExpr, rhs: float, name: str) -> _Row:
        items = sorted((k, v) for k, v in expr.terms.items() if v != 0.0)
        cols = np.array([k for k, _ in items], dtype=np.int64)
        vals = np.array([v for _, v in items], dtype=float)
        return _Row(cols, vals, float(rhs) - expr.const, name)

    def add_le(self, expr: LinExpr, rhs: float = 0.0, name: str = "") -> None:
        self.rows_le.append(self._row(expr, rhs, name))
        self._finalized = None

    def add_ge(self, expr: LinExpr, rhs: float = 0.0, name: str = "") -> None:
        self.add_le(expr * -1.0, -float(rhs), name)

    def add_eq(self, expr: LinExpr, rhs: float = 0.0, name: str = "") -> None:
        self.rows_eq.append(self._row(expr, rhs, name))
        self._finalized = None

    def set_objective(self, expr: LinExpr, sense: Optional[str] = None) -> None:
        self.obj = expr.copy()
        if sense is not None:
            self.sense = sense
        self._finalized = None

    def register_bigm(self, name: str, value: float, provenance: str) -> None:
        if not np.isfinite(value):
            raise MilpError(f"big-M '{name}' is not finite")
        self.bigm_registry.append((name, float(value), provenance))

    def link_bounds(self, bin_var: int, var: int, when0, when1) -> None:
        """Bounds implied on `var` when `bin_var` is fixed (node propagation)."""
        self.bound_links.setdefault(bin_var, []).append(
            (var, (float(when0[0]), float(when0[1])),
             (float(when1[0]), float(when1[1]))))

    # -- assembled matrices ---------------------------------------------------
    @property
    def nvars(self) -> int:
        return len(self.var_names)

    def validate(self) -> None:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        isb = np.asarray(self.is_bin)
        if np.any(lo[isb] < -1e-12) or np.any(hi[isb] > 1.0 + 1e-12):
            raise MilpError("binary variable with bounds outside [0, 1]")
        for name, value, _ in self.bigm_registry:
            if not np.isfinite(value):
                raise MilpError(f"unbounded big-M {name}")

    def finalized(self):
        if self._finalized is None:
            nv = self.nvars

            def assemble(rows):
                data, indices, indptr, rhs = [], [], [0], []
                for r in rows:
                    data.extend(r.vals.tolist())
                    indices.extend(r.cols.tolist())
                    indptr.append(len(indices))
                    rhs.append(r.rhs)
                A = sp.csr_matrix((data, indices, indptr),
                                  shape=(len(rows), nv))
                return A, np.asarray(rhs, float)

            A_ub, b_ub = assemble(self.rows_le)
            A_eq, b_eq = assemble(self.rows_eq)
            c = np.zeros(nv)
            for k, v in self.obj.terms.items():
                c[k] += v
            self._finalized = (A_ub, b_ub, A_eq, b_eq, c, self.obj.const)
        return self._finalized

    def violation(self, x: np.ndarray) -> float:
        A_ub, b_ub, A_eq, b_eq, _, _ = self.finalized()
        v = 0.0
        if b_ub.size:
            v = max(v, float(np.max(A_ub @ x - b_ub, initial=0.0)))
        if b_eq.size:
            v = max(v, float(np.abs(A_eq @ x - b_eq).max(initial=0.0)))
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        v = max(v, float(np.max(lo - x, initial=0.0)),
                float(np.max(x - np.where(np.isfinite(hi), hi, np.inf),
                             initial=0.0)))
        return v

    def objective_value(self, x: np.ndarray) -> float:
        return self.obj.value(x)

    def canonical_hash(self) -> str:
        A_ub, b_ub, A_eq, b_eq, c, c0 = self.finalized()
        h = hashlib.sha256()
        h.update(self.sense.encode())
        for arr in (np.asarray(self.lo), np.asarray(self.hi),
                    np.asarray(self.is_bin, dtype=np.uint8), c,
                    np.array([c0]), b_ub, b_eq):
            h.update(arr.tobytes())
        for A in (A_ub, A_eq):
            h.update(A.indptr.tobytes())
            h.update(A.indices.tobytes())
            h.update(A.data.tobytes())
        return h.hexdigest()


@dataclass
class MilpOptions:
    gap_abs: float = 1e-6
    gap_rel: float = 1e-6
    time_limit: Optional[float] = None
    node_limit: Optional[int] = None
    workers: int = 1
    lp_backend: str = "highs"
    cache_dir: Optional[str] = None
    int_tol: float = 1e-6
    feas_tol: float = 1e-7
    log: bool = False


@dataclass
class MilpResult:
    status: str               # Optimal | Infeasible | Unbounded | TimedOut
    objective: Optional[float]
    bound: Optional[float]
    gap: Optional[float]
    x: Optional[np.ndarray]
    node_count: int
    wall_time: float

    def to_dict(self) -> dict:
        return {"status": self.status, "objective": self.objective,
                "bound": self.bound, "gap": self.gap,
                "x": None if self.x is None else self.x.tolist(),
                "node_count": self.node_count, "wall_time": self.wall_time}

    @classmethod
    def from_dict(cls, d: dict) -> "MilpResult":
        x = None if d["x"] is None else np.asarray(d["x"], float)
        return cls(status=d["status"], objective=d["objective"],
                   bound=d["bound"], gap=d["gap"], x=x,
                   node_count=d["node_count"], wall_time=d["wall_time"])


class _LpBackend:
    """Relaxation solver over the assembled matrices with mutable bounds."""

    def __init__(self, model: MilpModel, kind: str):
        self.A_ub, self.b_ub, self.A_eq, self.b_eq, c, self.c0 = \
            model.finalized()
        self.kind = kind
        self.sign = -1.0 if model.sense == "max" else 1.0
        self.c = self.sign * c

    def solve(self, lo: np.ndarray, hi: np.ndarray):
        """Returns (status, x, value) with value in the model's sense."""
        if self.kind == "highs":
            from scipy.optimize import linprog

            res = linprog(self.c,
                          A_ub=self.A_ub if self.b_ub.size else None,
                          b_ub=self.b_ub if self.b_ub.size else None,
                          A_eq=self.A_eq if self.b_eq.size else None,
                          b_eq=self.b_eq if self.b_eq.size else None,
                          bounds=np.column_stack([lo, hi]),
                          method="highs")
            if res.status == 0:
                return "optimal", res.x, self.sign * res.fun + self.c0
            if res.status == 2:
                return "infeasible", None, None
            if res.status == 3:
                return "unbounded", None, None
            return "failure", None, None
        from . import lpqp

        prob = lpqp.LpProblem(c=self.c,
                              A_ub=self.A_ub.toarray() if self.b_ub.size else None,
                              b_ub=self.b_ub if self.b_ub.size else None,
                              A_eq=self.A_eq.toarray() if self.b_eq.size else None,
                              b_eq=self.b_eq if self.b_eq.size else None,
                              lo=lo, hi=hi)
        res = lpqp.solve_lp(prob)
        if res.status == lpqp.LpStatus.OPTIMAL:
            return "optimal", res.x, self.sign * res.objective + self.c0
        if res.status == lpqp.LpStatus.INFEASIBLE:
            return "infeasible", None, None
        if res.status == lpqp.LpStatus.UNBOUNDED:
            return "unbounded", None, None
        return "failure", None, None


def _apply_links(model: MilpModel, lo, hi, var: int, value: int) -> bool:
    """Tighten linked bounds after fixing a binary; False on conflict."""
    for tgt, when0, when1 in model.bound_links.get(var, ()):  # noqa: B905
        blo, bhi = when1 if value == 1 else when0
        lo[tgt] = max(lo[tgt], blo)
        hi[tgt] = min(hi[tgt], bhi)
        if lo[tgt] > hi[tgt] + 1e-12:
            return False
    return True


def solve_milp(model: MilpModel, opts: Optional[MilpOptions] = None,
               warm_starts=()) -> MilpResult:
    """Deterministic best-bound branch and bound.

    Warm starts are candidate full assignments; each is verified against
    the model and, when feasible, seeds the incumbent. `TimedOut`
    results carry both the incumbent and the best bound so callers can
    still report one-sided certificates.
    """
    opts = opts or MilpOptions()
    model.validate()
    t0 = time.perf_counter()

    cache_path = None
    if opts.cache_dir:
        os.makedirs(opts.cache_dir, exist_ok=True)
        cache_path = os.path.join(opts.cache_dir,
                                  model.canonical_hash() + ".json")
        if os.path.exists(cache_path):
            with open(cache_path) as fh:
                return MilpResult.from_dict(json.load(fh))

    backend = _LpBackend(model, opts.lp_backend)
    maxim = model.sense == "max"
    better = (lambda a, b: a > b) if maxim else (lambda a, b: a < b)
    bin_idx = np.flatnonzero(np.asarray(model.is_bin))

    incumbent = None
    inc_val = -np.inf if maxim else np.inf
    for cand in warm_starts:
        cand = np.asarray(cand, float)
        if cand.shape != (model.nvars,):
            continue
        if model.violation(cand) > 1e-6:
            continue
        if np.any(np.abs(cand[bin_idx] - np.round(cand[bin_idx])) > 1e-9):
            continue
        val = model.objective_value(cand)
        if better(val, inc_val):
            incumbent, inc_val = cand.copy(), val

    lo0 = np.asarray(model.lo, float).copy()
    hi0 = np.asarray(model.hi, float).copy()
    status, x0, v0 = backend.solve(lo0, hi0)
    nodes = 1
    if status == "infeasible":
        res = MilpResult("Infeasible" if incumbent is None else "Optimal",
                         None if incumbent is None else inc_val,
                         None if incumbent is None else inc_val,
                         None if incumbent is None else 0.0,
                         incumbent, nodes, time.perf_counter() - t0)
        return _maybe_cache(res, cache_path)
    if status == "unbounded":
        return MilpResult("Unbounded", None, None, None, None, nodes,
                          time.perf_counter() - t0)
    if status == "failure":
        raise MilpError("root relaxation failed")

    counter = 0
    heap = []          # (-bound for max / bound for min, node_id, lo, hi, x)
    key = (lambda v: -v) if maxim else (lambda v: v)
    heapq.heappush(heap, (key(v0), counter, lo0, hi0, x0))
    best_bound = v0

    def gap_of(bound, inc):
        if inc is None or not np.isfinite(inc):
            return np.inf
        return abs(bound - inc)

    timed_out = False
    while heap:
        bound_key, node_id, lo, hi, xrel = heapq.heappop(heap)
        node_bound = -bound_key if maxim else bound_key
        best_bound = node_bound
        if incumbent is not None:
            if not better(node_bound, inc_val + (1e-12 if maxim else -1e-12)):
                best_bound = inc_val
                break
            g = gap_of(node_bound, inc_val)
            if g <= max(opts.gap_abs, opts.gap_rel * abs(inc_val)):
                best_bound = node_bound
                break
        if opts.time_limit is not None and \
                time.perf_counter() - t0 > opts.time_limit:
            timed_out = True
            break
        if opts.node_limit is not None and nodes >= opts.node_limit:
            timed_out = True
            break

        frac = np.abs(xrel[bin_idx] - np.round(xrel[bin_idx]))
        cand = np.flatnonzero(frac > opts.int_tol)
        if cand.size == 0:
            # integral relaxation: fix binaries, resolve for a clean point
            lo2, hi2 = lo.copy(), hi.copy()
            ok = True
            for b in bin_idx:
                v = int(round(xrel[b]))
                lo2[b] = hi2[b] = float(v)
                ok = ok and _apply_links(model, lo2, hi2, int(b), v)
            if ok:
                st, xf, vf = backend.solve(lo2, hi2)
                nodes += 1
                if st == "optimal" and model.violation(xf) <= 1e-6 and \
                        better(vf, inc_val):
                    incumbent, inc_val = xf.copy(), vf
            continue

        # most fractional binary, lowest index on ties
        scores = np.abs(xrel[bin_idx[cand]] - 0.5)
        pick = cand[np.lexsort((bin_idx[cand], np.round(scores, 12)))][0]
        bvar = int(bin_idx[pick])
        for value in (0, 1):
            lo2, hi2 = lo.copy(), hi.copy()
            lo2[bvar] = hi2[bvar] = float(value)
            if not _apply_links(model, lo2, hi2, bvar, value):
                continue
            st, xch, vch = backend.solve(lo2, hi2)
            nodes += 1
            if st == "infeasible":
                continue
            if st == "failure":
                raise MilpError("node relaxation failed")
            if incumbent is not None and not better(vch, inc_val):
                continue
            fr = np.abs(xch[bin_idx] - np.round(xch[bin_idx]))
            if np.all(fr <= opts.int_tol):
                lo3, hi3 = lo2.copy(), hi2.copy()
                ok = True
                for b in bin_idx:
                    v = int(round(xch[b]))
                    lo3[b] = hi3[b] = float(v)
                    ok = ok and _apply_links(model, lo3, hi3, int(b), v)
                if ok:
                    st3, x3, v3 = backend.solve(lo3, hi3)
                    nodes += 1
                    if st3 == "optimal" and model.violation(x3) <= 1e-6 \
                            and better(v3, inc_val):
                        incumbent, inc_val = x3.copy(), v3
                continue
            counter += 1
            heapq.heappush(heap, (key(vch), counter, lo2, hi2, xch))

    wall = time.perf_counter() - t0
    if not heap and not timed_out:
        best_bound = inc_val if incumbent is not None else best_bound
    if incumbent is None:
        if timed_out:
            res = MilpResult("TimedOut", None, best_bound, None, None,
                             nodes, wall)
        else:
            res = MilpResult("Infeasible", None, None, None, None,
                             nodes, wall)
        return _maybe_cache(res, cache_path)
    gap = abs(best_bound - inc_val)
    if timed_out and gap > max(opts.gap_abs, opts.gap_rel * abs(inc_val)):
        res = MilpResult("TimedOut", inc_val, best_bound, gap, incumbent,
                         nodes, wall)
    else:
        res = MilpResult("Optimal", inc_val,
                         inc_val if not timed_out else best_bound,
                         0.0 if not timed_out else gap, incumbent,
                         nodes, wall)
    return _maybe_cache(res, cache_path)


def _maybe_cache(res: MilpResult, cache_path):
    if cache_path:
        with open(cache_path, "w") as fh:
            json.dump(res.to_dict(), fh)
    return res


def tighten_bounds(model: MilpModel, exprs, opts: Optional[MilpOptions] = None):
    """Valid [lo, hi] ranges of affine expressions over the LP relaxation."""
    opts = opts or MilpOptions()
    backend = _LpBackend(model, opts.lp_backend)
    lo = np.asarray(model.lo, float)
    hi = np.asarray(model.hi, float)
    out = []
    for e in exprs:
        c = np.zeros(model.nvars)
        for k, v in e.terms.items():
            c[k] += v
        bounds = []
        for sgn in (1.0, -1.0):
            save = backend.c
            backend.c = sgn * c
            st, _, val = backend.solve(lo, hi)
            backend.c = save
            if st != "optimal":
                raise MilpError("bound-tightening LP failed "
                                f"(status {st})")
            # backend.solve reports in the model sense; undo that mapping
            raw = (val - backend.c0)
            raw = raw if backend.sign == 1.0 else -raw
            bounds.append(sgn * raw + e.const)
        out.append((min(bounds), max(bounds)))
    return out


# ---------------------------------------------------------------------------
# LP-format serialization and the external-backend contract

def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_lp(model: MilpModel, path) -> None:
    """CPLEX LP-format emission (subset: objective, <=/=, bounds, binaries)."""
    names = [f"v{i}" for i in range(model.nvars)]
    lines = [f"\\ {model.name}"]
    lines.append("Maximize" if model.sense == "max" else "Minimize")
    terms = [f"{'+' if v >= 0 else '-'} {_fmt(abs(v))} {names[k]}"
             for k, v in sorted(model.obj.terms.items()) if v != 0.0]
    lines.append(" obj: " + (" ".join(terms) if terms else "0 v0"))
    if model.obj.const:
        lines.append(f"\\ objective constant {_fmt(model.obj.const)}")
    lines.append("Subject To")

    def emit(rows, op):
        for i, r in enumerate(rows):
            parts = [f"{'+' if v >= 0 else '-'} {_fmt(abs(v))} {names[int(k)]}"
                     for k, v in zip(r.cols, r.vals)]
            if not parts:
                parts = ["0 " + names[0]]
            lines.append(f" {op}{i}: " + " ".join(parts) +
                         f" {'<=' if op == 'c' else '='} {_fmt(r.rhs)}")

    emit(model.rows_le, "c")
    emit(model.rows_eq, "e")
    lines.append("Bounds")
    for i in range(model.nvars):
        lo, hi = model.lo[i], model.hi[i]
        if model.is_bin[i] and lo == 0.0 and hi == 1.0:
            continue
        if lo == -np.inf and hi == np.inf:
            lines.append(f" {names[i]} free")
        elif hi == np.inf:
            lines.append(f" {names[i]} >= {_fmt(lo)}")
        elif lo == -np.inf:
            lines.append(f" {names[i]} <= {_fmt(hi)}")
        else:
            lines.append(f" {_fmt(lo)} <= {names[i]} <= {_fmt(hi)}")
    if any(model.is_bin):
        lines.append("Binaries")
        lines.append(" " + " ".join(names[i] for i in range(model.nvars)
                                    if model.is_bin[i]))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_lp(path) -> MilpModel:
    """Parse the LP subset emitted by `write_lp`."""
    with open(path) as fh:
        raw = fh.read()
    obj_const = 0.0
    for line in raw.splitlines():
        if line.startswith("\\ objective constant"):
            obj_const = float(line.split()[-1])
    lines = [ln for ln in raw.splitlines() if ln and not ln.startswith("\\")]
    section = None
    sense = "min"
    obj_terms: dict = {}
    rows = {"c": [], "e": []}
    bounds_raw = []
    binaries: set = set()
    for ln in lines:
        word = ln.strip().lower()
        if word in ("maximize", "minimize", "subject to", "bounds",
                    "binaries", "binary", "end"):
            section = word
            if word == "maximize":
                sense = "max"
            continue
        ln = ln.strip()
        if section in ("maximize", "minimize"):
            _, rhsnm = ln.split(":", 1)
            obj_terms = _parse_terms(rhsnm)[0]
        elif section == "subject to":
            label, body = ln.split(":", 1)
            op = "<=" if "<=" in body else "="
            lhs, rhs = body.rsplit(op, 1)
            terms, _ = _parse_terms(lhs)
            rows["c" if op == "<=" else "e"].append((terms, float(rhs)))
        elif section == "bounds":
            bounds_raw.append(ln)
        elif section in ("binaries", "binary"):
            binaries.update(ln.split())

    def var_id(tok: str) -> int:
        return int(tok[1:])

    nv = 0
    for terms in ([obj_terms] + [t for t, _ in rows["c"]] +
                  [t for t, _ in rows["e"]]):
        for t in terms:
            nv = max(nv, var_id(t) + 1)
    for b in binaries:
        nv = max(nv, var_id(b) + 1)
    model = MilpModel(name="parsed", sense=sense)
    for i in range(nv):
        if f"v{i}" in binaries:
            model.add_bin(f"v{i}")
        else:
            model.add_cont(f"v{i}", -np.inf, np.inf)
    for ln in bounds_raw:
        toks = ln.split()
        if toks[-1] == "free":
            i = var_id(toks[0])
            model.lo[i], model.hi[i] = -np.inf, np.inf
        elif len(toks) == 5:            # lo <= v <= hi
            i = var_id(toks[2])
            model.lo[i], model.hi[i] = float(toks[0]), float(toks[4])
        elif toks[1] == ">=":
            model.lo[var_id(toks[0])] = float(toks[2])
        elif toks[1] == "<=":
            model.hi[var_id(toks[0])] = float(toks[2])
    for terms, rhs in rows["c"]:
        model.add_le(LinExpr({var_id(t): v for t, v in terms.items()}), rhs)
    for terms, rhs in rows["e"]:
        model.add_eq(LinExpr({var_id(t): v for t, v in terms.items()}), rhs)
    model.set_objective(
        LinExpr({var_id(t): v for t, v in obj_terms.items()}, obj_const))
    model._finalized = None
    return model


def _parse_terms(text: str):
    toks = text.replace("+", " + ").replace("-", " - ").split()
    terms: dict = {}
    const = 0.0
    sign = 1.0
    coef = None
    for tok in toks:
        if tok == "+":
            sign = 1.0
        elif tok == "-":
            sign = -1.0
        elif tok[0].isdigit() or tok[0] == ".":
            coef = sign * float(tok)
        else:
            terms[tok] = terms.get(tok, 0.0) + (coef if coef is not None
                                                else sign)
            coef = None
            sign = 1.0
    return terms, const


def solve_with_backend(model: MilpModel, exe: str,
                       workdir: Optional[str] = None) -> MilpResult:
    """Write LP file, run `exe <model.lp> <out.sol>`, parse the solution.

    The solution file contract is one `<name> <value>` pair per line
    plus `=status=` and `=obj=` header lines (see README).
    """
    import tempfile

    if isinstance(exe, str) and not exe.strip():
        raise MilpError("external backend executable not configured")
    argv = exe if isinstance(exe, (list, tuple)) else exe.split()
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        lp_path = os.path.join(tmp, "model.lp")
        sol_path = os.path.join(tmp, "model.sol")
        write_lp(model, lp_path)
        try:
            proc = subprocess.run(list(argv) + [lp_path, sol_path],
                                  capture_output=True, text=True,
                                  timeout=3600)
        except FileNotFoundError as exc:
            raise MilpError(f"backend executable not found: {argv[0]}") from exc
        if proc.returncode != 0:
            raise MilpError(f"backend failed: {proc.stderr[-500:]}")
        if not os.path.exists(sol_path):
            raise MilpError("backend produced no solution file")
        status, obj, assign = None, None, {}
        with open(sol_path) as fh:
            for ln in fh:
                ln = ln.strip()
                if not ln:
                    continue
                if ln.startswith("=status="):
                    status = ln.split("=status=")[1].strip()
                elif ln.startswith("=obj="):
                    obj = float(ln.split("=obj=")[1])
                else:
                    name, val = ln.split()
                    assign[name] = float(val)
        if status is None:
            raise MilpError("backend solution file missing =status= line")
    if status != "Optimal":
        return MilpResult(status, None, None, None, None, 0, 0.0)
    x = np.zeros(model.nvars)
    for name, val in assign.items():
        x[int(name[1:])] = val
    return MilpResult("Optimal", obj, obj, 0.0, x, 0, 0.0)


def write_solution(result: MilpResult, model: MilpModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"=status= {result.status}\n")
        if result.status == "Optimal":
            fh.write(f"=obj= {_fmt(result.objective)}\n")
            for i, v in enumerate(result.x):
                fh.write(f"v{i} {_fmt(v)}\n")
