"""Dense-network core: specs, flat weight vectors, derivatives, Adam.

Weight vectors use one canonical flat layout (per layer: row-major
[out x in] weight matrix, then the bias vector) so that the kernels, the
autodiff path, serialization, and the weight-predicting network all agree
bit-for-bit on what index means what.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, autodiff
from .errors import NumericalError, ValidationError

# cumulative count of optimizer steps taken, for asserting that inference
# paths never train
ADAM_STEP_COUNT = 0


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected net: tanh hidden layers, linear output."""

    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValidationError(f"need at least input and output sizes, got {sizes!r}")
        if any(s < 1 for s in sizes):
            raise ValidationError(f"layer sizes must be >= 1, got {sizes!r}")

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]


# the per-sector field net: (phi, z) -> (fluid, metal)
SECTOR_NET = MlpSpec((2, 16, 16, 2))


def param_count(spec: MlpSpec) -> int:
    """Number of weights+biases in the canonical flat layout."""
    s = spec.layer_sizes
    return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))


def init_weights(spec: MlpSpec, seed) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic in the seed."""
    rng = np.random.default_rng(seed)
    parts = []
    s = spec.layer_sizes
    for i in range(len(s) - 1):
        nin, nout = s[i], s[i + 1]
        lim = np.sqrt(6.0 / (nin + nout))
        parts.append(rng.uniform(-lim, lim, size=nin * nout))
        parts.append(np.zeros(nout))
    return np.concatenate(parts)


def _check_weights(spec, w):
    w = np.asarray(w, dtype=float)
    expected = param_count(spec)
    if w.shape != (expected,):
        raise ValidationError(
            f"weight vector for {spec.layer_sizes} must have shape ({expected},), got {w.shape}")
    return w


def forward(spec: MlpSpec, w, x) -> np.ndarray:
    """Evaluate the net at a single input point -> (n_outputs,)."""
    w = _check_weights(spec, w)
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n_inputs,):
        raise ValidationError(f"input must have shape ({spec.n_inputs},), got {x.shape}")
    return _kernels.mlp_forward(w, spec.layer_sizes, x[None, :])[0]


def forward_batch(spec: MlpSpec, w, X) -> np.ndarray:
    """Evaluate the net on rows of X -> (N, n_outputs)."""
    w = _check_weights(spec, w)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.n_inputs:
        raise ValidationError(f"batch must have shape (N, {spec.n_inputs}), got {X.shape}")
    return _kernels.mlp_forward(w, spec.layer_sizes, X)


def input_derivatives(spec: MlpSpec, w, x):
    """Value, jacobian, and diagonal second derivatives at one point.

    Returns (y (out,), J (out, d_in), H (out, d_in)) with
    J[o, d] = dy_o/dx_d and H[o, d] = d2y_o/dx_d2, computed exactly by
    forward derivative carries (no finite differencing).
    """
    w = _check_weights(spec, w)
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n_inputs,):
        raise ValidationError(f"input must have shape ({spec.n_inputs},), got {x.shape}")
    Y, J, H = _kernels.mlp_derivatives(w, spec.layer_sizes, x[None, :])
    return Y[0], J[0], H[0]


def forward_tape(spec: MlpSpec, w: "autodiff.Tensor", X) -> "autodiff.Tensor":
    """Tape-tracked batched forward pass for use inside loss closures.

    w is an autodiff Tensor holding the flat weight vector; X is a plain
    (N, n_inputs) array. Mirrors the kernel forward exactly.
    """
    X = np.asarray(X, dtype=float)
    s = spec.layer_sizes
    a = autodiff.Tensor(X)
    off = 0
    last = len(s) - 2
    for i in range(len(s) - 1):
        nin, nout = s[i], s[i + 1]
        W = w[off:off + nin * nout].reshape(nout, nin)
        off += nin * nout
        b = w[off:off + nout]
        off += nout
        s_lin = a @ W.T + b
        a = s_lin if i == last else s_lin.tanh()
    return a


def loss_gradient(loss_fn, w):
    """Gradient of a scalar tape loss with respect to flat weights.

    loss_fn: callable mapping an autodiff Tensor (flat weights) to a scalar
    Tensor. Returns (loss value, gradient array). Raises NumericalError on
    non-finite results.
    """
    return autodiff.gradient(loss_fn, np.asarray(w, dtype=float))


@dataclass(frozen=True)
class AdamState:
    """Adam moments; step counts optimizer updates applied so far."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m=np.zeros(n), v=np.zeros(n), step=0,
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, grad, w, lr):
    """One Adam update; returns (new state, new weights).

    Pure function of its inputs apart from the module-level step counter
    used to assert that inference never trains.
    """
    global ADAM_STEP_COUNT
    grad = np.asarray(grad, dtype=float)
    w = np.asarray(w, dtype=float)
    if grad.shape != w.shape or grad.shape != state.m.shape:
        raise ValidationError(
            f"shape mismatch: grad {grad.shape}, w {w.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("gradient is not finite")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    w_new = w - lr * mhat / (np.sqrt(vhat) + state.eps)
    ADAM_STEP_COUNT += 1
    return replace(state, m=m, v=v, step=t), w_new


# -- weight vector serialization ----------------------------------------

_MAGIC = b"MLPW"
_BIN_VERSION = 1


def save_weights_text(spec: MlpSpec, w, path):
    """Text format: 'mlp <sizes...>' header then one repr float per line."""
    w = _check_weights(spec, w)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mlp " + " ".join(str(s) for s in spec.layer_sizes) + "\n")
        for v in w:
            fh.write(repr(float(v)) + "\n")


def load_weights_text(path):
    """Returns (spec, w); validates the header and the value count."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) < 3 or header[0] != "mlp":
            raise ValidationError(f"{path}: not a text weight file")
        try:
            spec = MlpSpec(tuple(int(t) for t in header[1:]))
        except ValueError as exc:
            raise ValidationError(f"{path}: bad header sizes: {exc}") from exc
        try:
            vals = [float(line) for line in fh if line.strip()]
        except ValueError as exc:
            raise ValidationError(f"{path}: bad weight value: {exc}") from exc
    expected = param_count(spec)
    if len(vals) != expected:
        raise ValidationError(f"{path}: expected {expected} values, found {len(vals)}")
    return spec, np.array(vals, dtype=float)


def save_weights_binary(spec: MlpSpec, w, path):
    """Binary format: magic, version, layer count, sizes, little-endian f64."""
    w = _check_weights(spec, w)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _BIN_VERSION, len(spec.layer_sizes)))
        fh.write(struct.pack("<" + "I" * len(spec.layer_sizes), *spec.layer_sizes))
        fh.write(w.astype("<f8").tobytes())


def load_weights_binary(path):
    """Returns (spec, w); round-trips save_weights_binary bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise ValidationError(f"{path}: not a binary weight file")
    version, n_layers = struct.unpack("<II", buf.read(8))
    if version != _BIN_VERSION:
        raise ValidationError(f"{path}: unsupported format version {version}")
    sizes = struct.unpack("<" + "I" * n_layers, buf.read(4 * n_layers))
    spec = MlpSpec(sizes)
    expected = param_count(spec)
    payload = buf.read()
    if len(payload) != 8 * expected:
        raise ValidationError(
            f"{path}: expected {8 * expected} payload bytes, found {len(payload)}")
    return spec, np.frombuffer(payload, dtype="<f8").astype(float)
