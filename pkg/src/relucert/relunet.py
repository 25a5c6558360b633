"""Feedforward ReLU networks: evaluation, Jacobians, activation bounds,
a Levenberg-Marquardt trainer, and a portable binary weight format.

Activation patterns use the tie rule delta = 1 at exactly zero
pre-activation, matching the mixed-integer encoding convention
"[delta = 1] iff [pre-activation >= 0]".
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np


class NetworkError(ValueError):
    pass


_MAGIC = b"RLNETv1\x00"
_F8 = np.dtype("<f8")


@dataclass(eq=False)
class ReluNetwork:
    """Weights W[j], biases b[j] for j = 0..L; layers 0..L-1 are ReLU."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise NetworkError("need at least one hidden layer (L >= 1)")
        self.weights = [np.ascontiguousarray(W, dtype=float)
                        for W in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=float).reshape(-1)
                       for b in self.biases]
        for j, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or W.shape[0] != b.size:
                raise NetworkError(f"layer {j} dimension mismatch")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NetworkError(f"layer {j} has non-finite entries")
            if j > 0 and W.shape[1] != self.weights[j - 1].shape[0]:
                raise NetworkError(f"layer {j} input size mismatch")

    @property
    def L(self) -> int:
        """Number of hidden (ReLU) layers."""
        return len(self.weights) - 1

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def hidden_sizes(self) -> List[int]:
        return [W.shape[0] for W in self.weights[:-1]]

    @property
    def neuron_count(self) -> int:
        return sum(self.hidden_sizes) + self.n_out


def forward(net: ReluNetwork, x) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Evaluate the network; returns (output, per-layer activation pattern)."""
    a = np.asarray(x, float).reshape(-1)
    if a.size != net.n_in:
        raise NetworkError("input dimension mismatch")
    pattern = []
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        pre = W @ a + b
        delta = pre >= 0.0
        pattern.append(delta)
        a = np.where(delta, pre, 0.0)
    out = net.weights[-1] @ a + net.biases[-1]
    return out, pattern


def forward_batch(net: ReluNetwork, X: np.ndarray) -> np.ndarray:
    """Vectorized evaluation of a (K, n) batch."""
    A = np.asarray(X, float)
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        A = np.maximum(A @ W.T + b, 0.0)
    return A @ net.weights[-1].T + net.biases[-1]


def jacobian(net: ReluNetwork, x, kernel_tol: float = 0.0):
    """Local gain W^L diag(d^{L-1}) W^{L-1} ... diag(d^0) W^0.

    At points lying on a ReLU kernel the tie-rule element of the
    generalized Jacobian is returned and `on_kernel` is set.
    """
    a = np.asarray(x, float).reshape(-1)
    J = None
    on_kernel = False
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        pre = W @ a + b
        if np.any(np.abs(pre) <= kernel_tol):
            on_kernel = True
        delta = (pre >= 0.0).astype(float)
        J = delta[:, None] * (W if J is None else W @ J)
        a = np.maximum(pre, 0.0)
    J = net.weights[-1] @ J
    return J, on_kernel


@dataclass(eq=False)
class ActivationBounds:
    """Pre-activation intervals per hidden neuron, valid over an input box."""

    lower: List[np.ndarray]
    upper: List[np.ndarray]
    input_lo: np.ndarray
    input_hi: np.ndarray
    method: str = "interval"

    def check(self, j: int, i: int) -> Tuple[float, float]:
        return float(self.lower[j][i]), float(self.upper[j][i])


def propagate_bounds(net: ReluNetwork, input_lo, input_hi,
                     lp_tighten: bool = False) -> ActivationBounds:
    """Layer-by-layer interval bounds on every pre-activation.

    With `lp_tighten`, each neuron's interval is tightened by two LPs
    over the relaxed encoding of the preceding layers.
    """
    lo = np.asarray(input_lo, float).reshape(-1)
    hi = np.asarray(input_hi, float).reshape(-1)
    if lo.size != net.n_in or np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
        raise NetworkError("input box must be finite")
    if np.any(lo > hi):
        raise NetworkError("empty input box")
    lowers, uppers = [], []
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        Wp = np.maximum(W, 0.0)
        Wm = np.minimum(W, 0.0)
        pre_lo = Wp @ lo + Wm @ hi + b
        pre_hi = Wp @ hi + Wm @ lo + b
        lowers.append(pre_lo)
        uppers.append(pre_hi)
        lo = np.maximum(pre_lo, 0.0)
        hi = np.maximum(pre_hi, 0.0)
    bounds = ActivationBounds(lowers, uppers,
                              np.asarray(input_lo, float).reshape(-1),
                              np.asarray(input_hi, float).reshape(-1))
    if lp_tighten:
        from .encodings import lp_tighten_bounds   # runtime import: no cycle

        bounds = lp_tighten_bounds(net, bounds)
        bounds.method = "interval+lp"
    return bounds


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainOptions:
    max_iters: int = 400
    goal_mse: float = 1e-10
    damping0: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    damping_max: float = 1e10
    grad_tol: float = 1e-9
    gd_fallback_iters: int = 200
    gd_learning_rate: float = 1e-3
    seed: int = 0
    verbose: bool = False


@dataclass
class TrainReport:
    mse: float
    iterations: int
    method: str
    history: List[float] = field(default_factory=list)


def _init_net(sizes: Sequence[int], rng: np.random.Generator) -> ReluNetwork:
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-bound, bound, size=(b, a)))
        biases.append(rng.uniform(-0.1, 0.1, size=b))
    return ReluNetwork(weights, biases)


def _pack(net: ReluNetwork) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b])
                           for W, b in zip(net.weights, net.biases)])


def _unpack(theta: np.ndarray, sizes: Sequence[int]) -> ReluNetwork:
    weights, biases = [], []
    pos = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(theta[pos:pos + a * b].reshape(b, a))
        pos += a * b
        biases.append(theta[pos:pos + b])
        pos += b
    return ReluNetwork(weights, biases)


def _residual_and_jacobian(theta, sizes, X, Y):
    """Residuals r = vec(F(x_k) - y_k)/sqrt(K) and d r / d theta."""
    net = _unpack(theta, sizes)
    K = X.shape[0]
    m = sizes[-1]
    acts = [X]
    pres = []
    A = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        pre = A @ W.T + b
        pres.append(pre)
        A = np.maximum(pre, 0.0)
        acts.append(A)
    out = A @ net.weights[-1].T + net.biases[-1]
    r = (out - Y) / np.sqrt(K)

    P = theta.size
    J = np.zeros((K, m, P))
    # output layer: dout_o/dW^L[o, c] = a^L_c ; dout_o/db^L[o] = 1
    pos = P
    nb = net.biases[-1].size
    nw = net.weights[-1].size
    pos_b = pos - nb
    pos_w = pos_b - nw
    nL = sizes[-2]
    for o in range(m):
        J[:, o, pos_w + o * nL: pos_w + (o + 1) * nL] = acts[-1]
        J[:, o, pos_b + o] = 1.0
    # backward through hidden layers
    M = np.broadcast_to(net.weights[-1], (K, m, nL)).copy()
    pos = pos_w
    for j in range(len(pres) - 1, -1, -1):
        D = (pres[j] >= 0.0).astype(float)
        G = M * D[:, None, :]                  # dout/dpre^j, (K, m, n_{j+1})
        nin = sizes[j]
        nout = sizes[j + 1]
        nb = nout
        nw = nout * nin
        pos_b = pos - nb
        pos_w = pos_b - nw
        Jw = np.einsum("kmo,ki->kmoi", G, acts[j]).reshape(K, m, nw)
        J[:, :, pos_w:pos_w + nw] = Jw
        J[:, :, pos_b:pos_b + nb] = G
        M = G @ net.weights[j]
        pos = pos_w
    return r.reshape(K * m) if m > 1 else r.ravel(), \
        (J.reshape(K * m, P) if m > 1 else J[:, 0, :]) / np.sqrt(K), out


def train(dataset: Tuple[np.ndarray, np.ndarray], hidden: Sequence[int],
          opts: Optional[TrainOptions] = None
          ) -> Tuple[ReluNetwork, TrainReport]:
    """Fit a ReLU network to (x, u) pairs with Levenberg-Marquardt.

    Inputs are standardized to zero mean and unit range computed from
    the dataset; the affine normalization is folded into the first and
    last layers on return so callers see one plain network. Falls back
    to plain gradient descent when the LM steps stall.
    """
    opts = opts or TrainOptions()
    X = np.atleast_2d(np.asarray(dataset[0], float))
    Y = np.atleast_2d(np.asarray(dataset[1], float))
    if Y.shape[0] != X.shape[0] or X.shape[0] == 0:
        raise NetworkError("dataset must be nonempty with matching rows")
    n, m = X.shape[1], Y.shape[1]
    sizes = [n] + list(hidden) + [m]

    x_mean = X.mean(axis=0)
    x_span = np.maximum(X.max(axis=0) - X.min(axis=0), 1e-9) / 2.0
    y_scale = np.maximum(np.abs(Y).max(axis=0), 1e-9)
    Xn = (X - x_mean) / x_span
    Yn = Y / y_scale

    rng = np.random.default_rng(opts.seed)
    net = _init_net(sizes, rng)
    theta = _pack(net)
    lam = opts.damping0
    r, J, _ = _residual_and_jacobian(theta, sizes, Xn, Yn)
    loss = float(r @ r)
    history = [loss]
    method = "levenberg-marquardt"
    it = 0
    for it in range(opts.max_iters):
        if loss <= opts.goal_mse:
            break
        g = J.T @ r
        if np.abs(g).max() < opts.grad_tol:
            break
        JtJ = J.T @ J
        stepped = False
        while lam <= opts.damping_max:
            try:
                delta = np.linalg.solve(
                    JtJ + lam * np.eye(theta.size), -g)
            except np.linalg.LinAlgError:
                lam *= opts.damping_up
                continue
            cand = theta + delta
            rc, Jc, _ = _residual_and_jacobian(cand, sizes, Xn, Yn)
            cand_loss = float(rc @ rc)
            if not np.isfinite(cand_loss):
                raise NetworkError(
                    f"training diverged at iteration {it} "
                    f"(loss became non-finite, damping {lam:g})")
            if cand_loss < loss:
                theta, r, J, loss = cand, rc, Jc, cand_loss
                lam = max(lam / opts.damping_down, 1e-12)
                stepped = True
                break
            lam *= opts.damping_up
        history.append(loss)
        if not stepped:
            method = "levenberg-marquardt+gd"
            lr = opts.gd_learning_rate
            for _ in range(opts.gd_fallback_iters):
                g = J.T @ r
                cand = theta - lr * g
                rc, Jc, _ = _residual_and_jacobian(cand, sizes, Xn, Yn)
                cand_loss = float(rc @ rc)
                if not np.isfinite(cand_loss):
                    raise NetworkError("gradient-descent fallback diverged")
                if cand_loss < loss:
                    theta, r, J, loss = cand, rc, Jc, cand_loss
                else:
                    lr *= 0.5
                    if lr < 1e-12:
                        break
            break

    net = _unpack(theta, sizes)
    # fold input standardization into layer 0 and output scale into layer L
    W0 = net.weights[0] / x_span
    b0 = net.biases[0] - W0 @ x_mean
    WL = net.weights[-1] * y_scale[:, None]
    bL = net.biases[-1] * y_scale
    weights = [W0] + [W.copy() for W in net.weights[1:-1]] + [WL]
    biases = [b0] + [b.copy() for b in net.biases[1:-1]] + [bL]
    folded = ReluNetwork(weights, biases)
    final_mse = float(np.mean((forward_batch(folded, X) - Y) ** 2))
    return folded, TrainReport(mse=final_mse, iterations=it + 1,
                               method=method, history=history)


# ---------------------------------------------------------------------------
# weight file and dataset formats

def save_weights(net: ReluNetwork, path) -> None:
    """Portable format: magic, layer sizes, little-endian float64 payload,
    sha256 checksum."""
    sizes = [net.n_in] + net.hidden_sizes + [net.n_out]
    payload = b"".join(
        np.ascontiguousarray(arr, dtype=_F8).tobytes()
        for W, b in zip(net.weights, net.biases) for arr in (W, b))
    header = _MAGIC + struct.pack("<I", len(sizes))
    header += struct.pack(f"<{len(sizes)}I", *sizes)
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(header + payload + digest)


def load_weights(path) -> ReluNetwork:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 4 or blob[:len(_MAGIC)] != _MAGIC:
        raise NetworkError("not a network weight file")
    off = len(_MAGIC)
    (nsizes,) = struct.unpack_from("<I", blob, off)
    off += 4
    if len(blob) < off + 4 * nsizes:
        raise NetworkError("truncated weight file header")
    sizes = struct.unpack_from(f"<{nsizes}I", blob, off)
    off += 4 * nsizes
    count = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
    need = off + 8 * count + 32
    if len(blob) != need:
        raise NetworkError(f"weight file size mismatch: {len(blob)} != {need}")
    payload = blob[off:off + 8 * count]
    if hashlib.sha256(payload).digest() != blob[-32:]:
        raise NetworkError("weight file checksum mismatch")
    flat = np.frombuffer(payload, dtype=_F8)
    weights, biases = [], []
    pos = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos:pos + a * b].reshape(b, a).copy())
        pos += a * b
        biases.append(flat[pos:pos + b].copy())
        pos += b
    return ReluNetwork(weights, biases)


def save_dataset(X: np.ndarray, Y: np.ndarray, path) -> None:
    """Delimited text rows (x, u) in full float64 precision."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    data = np.hstack([X, Y])
    header = f"n={X.shape[1]} m={Y.shape[1]}"
    np.savetxt(path, data, fmt="%.17e", header=header)


def load_dataset(path) -> Tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise NetworkError("dataset file missing header")
    fields = dict(tok.split("=") for tok in first[1:].split())
    n, m = int(fields["n"]), int(fields["m"])
    data = np.atleast_2d(np.loadtxt(path))
    if data.shape[1] != n + m:
        raise NetworkError("dataset column count mismatch")
    return data[:, :n], data[:, n:]
