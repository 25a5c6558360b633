"""Benchmark problem catalog.

Seven constrained-regulation examples from the control literature (the
standard comparison set for maximum-gain computation) plus the chain of
coupled oscillating masses used for the end-to-end pipeline.
"""
from __future__ import annotations

from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .model import LtiSystem, MpcDesign, Polytope, make_design

# Ex -> (A, B, state box, input box, Q, R, T)
_TABLE: Dict[int, tuple] = {
    1: ([[1.1, 0.2], [-0.2, 1.1]], [[0.5, 0.0], [0.0, 0.4]],
        [5.0, 5.0], [1.0, 1.0], 1.0, 0.1, 3),
    2: ([[1.0, 0.5, 0.125], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]],
        [[0.02], [0.125], [0.5]], [20.0, 3.0, 1.0], [0.5], 1.0, 1.0, 3),
    3: ([[0.0, 1.0], [1.0, 0.0]], [[2.0], [4.0]],
        [5.0, 5.0], [1.0], 1.0, 4.5, 8),
    4: ([[1.0, 1.0], [0.0, 1.0]], [[0.5], [1.0]],
        [25.0, 5.0], [1.0], 1.0, 0.1, 10),
    5: ([[0.7969, -0.2247], [0.1798, 0.9767]], [[0.1271], [0.0132]],
        [4.0, 4.0], [1.0], 1.0, 0.1, 8),
    6: ([[1.0, 1.0], [0.0, 1.0]], [[0.42, 0.9], [0.38, 0.67]],
        [40.0, 10.0], [0.1, 0.1], 1.0, 30.0, 10),
    7: ([[1.5, 0.0], [1.0, -1.5]], [[1.0, 0.0], [0.0, 1.0]],
        [6.0, 6.0], [5.0, 5.0], 1.0, 1.0, 12),
}

# reference exact Lipschitz constants (L1, Linf) of the benchmark set
REFERENCE_LIPSCHITZ: Dict[int, Tuple[float, float]] = {
    1: (16.1, 11.7), 2: (12.00, 8.00), 3: (0.5, 0.5), 4: (1.88, 1.27),
    5: (3.1, 2.39), 6: (1.77, 1.53), 7: (1.66, 1.66),
}

EXAMPLE_IDS = tuple(sorted(_TABLE))


def literature_example(idx: int) -> MpcDesign:
    if idx not in _TABLE:
        raise KeyError(f"unknown example {idx}; available: {EXAMPLE_IDS}")
    A, B, xb, ub, q, r, T = _TABLE[idx]
    sys = LtiSystem(np.array(A, float), np.array(B, float))
    Q = q * np.eye(sys.n)
    R = r * np.eye(sys.m)
    return make_design(sys, Q, R, T, Polytope.box(xb), Polytope.box(ub))


def oscillating_masses(n_masses: int,
                       input_map: Sequence[Sequence[Tuple[int, float]]],
                       dt: float = 0.1, mass: float = 1.0,
                       spring: float = 1.0, damper: float = 0.5
                       ) -> LtiSystem:
    """Chain of unit masses between walls, springs and dampers on both
    sides of every mass; zero-order-hold discretization.

    State per mass is (position, velocity); `input_map[j]` lists the
    (mass, direction) pairs force j acts on.
    """
    n = 2 * n_masses
    Ac = np.zeros((n, n))
    for i in range(n_masses):
        pi, vi = 2 * i, 2 * i + 1
        Ac[pi, vi] = 1.0
        Ac[vi, pi] = -2.0 * spring / mass
        Ac[vi, vi] = -2.0 * damper / mass
        for other in (i - 1, i + 1):
            if 0 <= other < n_masses:
                Ac[vi, 2 * other] += spring / mass
                Ac[vi, 2 * other + 1] += damper / mass
    m = len(input_map)
    Bc = np.zeros((n, m))
    for j, targets in enumerate(input_map):
        for tgt, direction in targets:
            Bc[2 * tgt + 1, j] = direction / mass
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = Ac
    blk[:n, n:] = Bc
    disc = expm(blk * dt)
    return LtiSystem(disc[:n, :n], disc[:n, n:])


def masses_design(n_masses: int = 2,
                  input_map: Optional[Sequence] = None, T: int = 5,
                  pos_limit: float = 4.0, vel_limit: float = 10.0,
                  input_limit: float = 1.0) -> MpcDesign:
    """Regulation design for the mass chain: Q = R = I, horizon T,
    per-mass |position| <= 4, |velocity| <= 10, |u| <= 1."""
    if input_map is None:
        input_map = [[(0, 1.0)]]          # one force on the first mass
    sys = oscillating_masses(n_masses, input_map)
    bounds = np.tile([pos_limit, vel_limit], n_masses)
    X = Polytope.box(bounds)
    U = Polytope.box(np.full(len(input_map), input_limit))
    return make_design(sys, np.eye(sys.n), np.eye(sys.m), T, X, U)
