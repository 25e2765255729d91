"""Minimal fully-connected network with hand-written reverse-mode gradients.

The network is a stack of affine layers with ELU (alpha = 1) between them
and no activation on the output.  Gradients with respect to parameters and
inputs are exact (no autodiff framework), which is what makes the exact
divergence computation in the flow module cheap: the trace of the input
Jacobian over the two data coordinates costs two extra backward passes.

Everything operates on float64.  Functions accept a single input vector
``(d,)`` or a batch ``(n, d)``; batch parameter gradients are summed over
the batch, matching the gradient of ``sum_i <upstream_i, f(x_i)>``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"PSM1"


@dataclass(frozen=True)
class MLPSpec:
    """Architecture description.

    ``layer_widths`` runs input -> hidden... -> output.  When
    ``time_conditioned`` the network input is [x1, x2, t, t] (the time
    appended twice), so the first width must be data_dim + 2.
    """

    layer_widths: tuple
    time_conditioned: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ValueError("need at least an input and an output width")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")

    @property
    def in_dim(self):
        return self.layer_widths[0]

    @property
    def out_dim(self):
        return self.layer_widths[-1]

    @property
    def data_dim(self):
        return self.in_dim - 2 if self.time_conditioned else self.in_dim


@dataclass
class MLPParams:
    """Per-layer weight matrices (out, in) and bias vectors (out,)."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def copy(self):
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return MLPParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def arrays(self):
        """Weights and biases interleaved in layer order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def all_finite(self):
        return all(np.isfinite(a).all() for a in self.arrays())


def init_params(spec: MLPSpec, seed) -> MLPParams:
    """Seeded uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = MLPParams()
    widths = spec.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(1.0 / fan_in)
        params.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        params.biases.append(np.zeros(fan_out))
    return params


def _elu(z):
    # expm1 evaluated only on the non-positive side to avoid overflow warnings
    return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_deriv(z):
    return np.where(z > 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


def _check_shapes(params: MLPParams, spec: MLPSpec):
    widths = spec.layer_widths
    if len(params.weights) != len(widths) - 1:
        raise ValueError("parameter/spec layer count mismatch")
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (widths[i + 1], widths[i]) or b.shape != (widths[i + 1],):
            raise ValueError(f"layer {i} shape mismatch: {w.shape} vs spec {widths[i+1], widths[i]}")


def _forward_cached(params, spec, x):
    """Returns (pre-activations per hidden layer, activations incl. input, output)."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if a.shape[-1] != spec.in_dim:
        raise ValueError(f"input width {a.shape[-1]} != spec input width {spec.in_dim}")
    pre, acts = [], [a]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w.T + b
        if i < last:
            pre.append(z)
            acts.append(_elu(z))
        else:
            out = z
    return pre, acts, out


def forward(params: MLPParams, spec: MLPSpec, x):
    """Evaluate the network; deterministic given (params, x)."""
    _check_shapes(params, spec)
    squeeze = np.asarray(x).ndim == 1
    _, _, out = _forward_cached(params, spec, x)
    return out[0] if squeeze else out


def backward(params: MLPParams, spec: MLPSpec, x, upstream):
    """Exact gradients of <upstream, forward(x)>.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is
    MLPParams-shaped.  Batched inputs yield batch-summed parameter
    gradients and per-example input gradients.
    """
    _check_shapes(params, spec)
    squeeze = np.asarray(x).ndim == 1
    u = np.atleast_2d(np.asarray(upstream, dtype=float))
    if u.shape[-1] != spec.out_dim:
        raise ValueError(f"upstream width {u.shape[-1]} != output width {spec.out_dim}")
    pre, acts, _ = _forward_cached(params, spec, x)
    if u.shape[0] != acts[0].shape[0]:
        raise ValueError("upstream/input batch size mismatch")

    grads = MLPParams()
    g = u
    for i in range(len(params.weights) - 1, -1, -1):
        grads.weights.insert(0, g.T @ acts[i])
        grads.biases.insert(0, g.sum(axis=0))
        g = g @ params.weights[i]
        if i > 0:
            g = g * _elu_deriv(pre[i - 1])
    input_grad = g[0] if squeeze else g
    return grads, input_grad


def _input_grad_only(params, pre, acts_unused, upstream):
    """Backward pass that skips parameter gradients (used by the trace)."""
    g = upstream
    for i in range(len(params.weights) - 1, -1, -1):
        g = g @ params.weights[i]
        if i > 0:
            g = g * _elu_deriv(pre[i - 1])
    return g


def input_jacobian_trace(params: MLPParams, spec: MLPSpec, x):
    """tr(d output / d x_data), exact, over the first ``data_dim`` coordinates.

    Requires output width == data width (2 here); time coordinates of a
    time-conditioned input are excluded from the trace.  Two reverse-mode
    passes with basis upstreams e_1, e_2.  Batched x gives a (n,) result.
    """
    _check_shapes(params, spec)
    if spec.out_dim != spec.data_dim:
        raise ValueError("trace requires output width == data width")
    squeeze = np.asarray(x).ndim == 1
    pre, acts, _ = _forward_cached(params, spec, x)
    n = acts[0].shape[0]
    tr = np.zeros(n)
    for k in range(spec.out_dim):
        basis = np.zeros((n, spec.out_dim))
        basis[:, k] = 1.0
        tr += _input_grad_only(params, pre, acts, basis)[:, k]
    return float(tr[0]) if squeeze else tr


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators, shape-matched to the parameters."""

    m: MLPParams
    v: MLPParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def for_params(cls, params: MLPParams, lr=1e-3, beta1=0.9, beta2=0.999, eps_hat=1e-8):
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        return cls(m=params.zeros_like(), v=params.zeros_like(),
                   lr=lr, beta1=beta1, beta2=beta2, eps_hat=eps_hat)


def adam_step(state: AdamState, params: MLPParams, grads: MLPParams):
    """One in-place bias-corrected Adam update; returns (params, state).

    Raises ``FloatingPointError`` on non-finite gradient entries so the
    training loop can abort with a diagnostic instead of poisoning the
    parameters.
    """
    if not grads.all_finite():
        raise FloatingPointError("non-finite gradient entries")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
    return params, state


def save_params(path, params: MLPParams, spec: MLPSpec):
    """Binary checkpoint: magic, widths, time flag, then per-layer W rows + bias.

    All floats are little-endian 64-bit; round-trips bit-exactly.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    widths = spec.layer_widths
    buf.write(struct.pack("<I", len(widths)))
    buf.write(struct.pack(f"<{len(widths)}I", *widths))
    buf.write(struct.pack("<B", 1 if spec.time_conditioned else 0))
    for w, b in zip(params.weights, params.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_params(path):
    """Inverse of :func:`save_params`; returns (params, spec)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    off = 4
    (n_widths,) = struct.unpack_from("<I", raw, off)
    off += 4
    widths = struct.unpack_from(f"<{n_widths}I", raw, off)
    off += 4 * n_widths
    (flag,) = struct.unpack_from("<B", raw, off)
    off += 1
    spec = MLPSpec(layer_widths=widths, time_conditioned=bool(flag))
    params = MLPParams()
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        nw = fan_out * fan_in
        w = np.frombuffer(raw, dtype="<f8", count=nw, offset=off).reshape(fan_out, fan_in)
        off += 8 * nw
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        params.weights.append(w.astype(float))
        params.biases.append(b.astype(float))
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return params, spec
