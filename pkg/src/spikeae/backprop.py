"""Membrane-potential backpropagation for two-layer spiking networks.

The loss at every time step compares the output layer's membrane
potential with a target potential (``v_th`` where the target spikes, zero
elsewhere), gated by an XOR mask so that only neurons whose output bit is
wrong contribute.  Gradients flow through per-sample eligibility traces
``dV_mem/dW`` and the hidden layer uses a sigmoid surrogate for the spike
nonlinearity.  Weights are updated every time step with an Adam variant
whose moments live only for the duration of one batch.

Shapes: deltas and potentials are ``[batch, n]``, traces
``[batch, n_out, n_in]``, gradients ``[n_out, n_in]``.
"""

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InputDomainError, NumericalInstabilityError, StructuralError
from .spike_core import surrogate_derivative


@dataclass
class StepLoss:
    error: np.ndarray
    loss: float
    mask_sparsity: float


@dataclass(frozen=True)
class Hyperparams:
    lr: float = 5e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise InputDomainError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise InputDomainError(f"weight_decay must be non-negative, got {self.weight_decay}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise InputDomainError(f"{name} must lie in (0, 1), got {b}")
        if not self.epsilon > 0:
            raise InputDomainError(f"epsilon must be positive, got {self.epsilon}")


class AdamTimeState:
    """Adam moments accumulated over the time steps of a single batch."""

    def __init__(self, shape, dtype=np.float32):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.step_count = 0

    def reset(self):
        """Start a new batch: zero both moments and the step counter."""
        self.m.fill(0)
        self.v.fill(0)
        self.step_count = 0


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise StructuralError(f"shape mismatch: {sorted(shapes)}")


def target_potential(target_spikes, v_th):
    return v_th * np.asarray(target_spikes, dtype=np.float64)


def compute_mask(target_spikes, output_spikes):
    """1 where target and output bits disagree (bitwise XOR)."""
    _same_shape(target_spikes, output_spikes)
    t = np.asarray(target_spikes).astype(bool)
    o = np.asarray(output_spikes).astype(bool)
    return (t ^ o).astype(np.uint8)


def masked_loss(target_spikes, output_spikes, v_mem_out, v_th, use_mask=True):
    """Masked potential error and its loss for one time step.

    ``v_mem_out`` is the output layer's pre-reset membrane potential.  With
    ``use_mask=False`` every neuron is driven towards its target potential
    (the ablation without masking).
    """
    _same_shape(target_spikes, output_spikes, v_mem_out)
    v = np.asarray(v_mem_out)
    dtype = v.dtype if v.dtype.kind == "f" else np.float64
    diff = target_potential(target_spikes, v_th).astype(dtype) - v
    if use_mask:
        error = compute_mask(target_spikes, output_spikes).astype(dtype) * diff
    else:
        error = diff
    batch = error.shape[0] if error.ndim > 1 else 1
    loss = 0.5 * float(np.square(error, dtype=np.float64).sum()) / batch
    sparsity = float(np.count_nonzero(error == 0)) / error.size if error.size else 1.0
    return StepLoss(error=error, loss=loss, mask_sparsity=sparsity)


def output_delta(step):
    """dL/dZ at the output layer, which equals -E."""
    return -step.error


def update_trace(trace, alpha, input_spikes, spiked):
    """One step of the eligibility-trace recursion, followed by the spike reset.

    ``trace[b, m, :] = (1 - alpha) * trace[b, m, :] + input_spikes[b, :]``;
    rows of neurons that spiked are then zeroed.  Returns a new array.
    """
    trace = np.asarray(trace)
    x = np.asarray(input_spikes)
    s = np.asarray(spiked).astype(bool)
    if trace.ndim != 3 or x.shape != (trace.shape[0], trace.shape[2]) or s.shape != trace.shape[:2]:
        raise StructuralError(
            f"update_trace shapes inconsistent: trace {trace.shape}, input {x.shape}, spiked {s.shape}"
        )
    out = (1.0 - alpha) * trace + x[:, None, :].astype(trace.dtype)
    out[s] = 0
    return out.astype(trace.dtype, copy=False)


def advance_trace(trace, alpha, input_spikes):
    """Trace recursion without the reset (used before gradient extraction)."""
    trace = np.asarray(trace)
    x = np.asarray(input_spikes)
    if trace.ndim != 3 or x.shape != (trace.shape[0], trace.shape[2]):
        raise StructuralError(f"advance_trace shapes inconsistent: trace {trace.shape}, input {x.shape}")
    return ((1.0 - alpha) * trace + x[:, None, :]).astype(trace.dtype, copy=False)


def _trace_gradient(delta, trace):
    delta = np.asarray(delta)
    trace = np.asarray(trace)
    if trace.ndim != 3 or delta.shape != trace.shape[:2]:
        raise StructuralError(f"delta {delta.shape} does not match trace {trace.shape}")
    return np.einsum("bm,bmj->mj", delta, trace) / delta.shape[0]


def output_layer_gradient(delta2, trace2):
    """Batch-mean of ``delta2[b, m] * trace2[b, m, :]`` (delta2 = -E)."""
    return _trace_gradient(delta2, trace2)


def hidden_delta(delta2, w2, v_mem_hidden, v_th):
    """Back-project the output delta through W2 and the surrogate derivative."""
    delta2 = np.asarray(delta2)
    w2 = np.asarray(w2)
    v = np.asarray(v_mem_hidden)
    if w2.ndim != 2 or delta2.shape[-1] != w2.shape[0] or v.shape != delta2.shape[:-1] + (w2.shape[1],):
        raise StructuralError(
            f"hidden_delta shapes inconsistent: delta2 {delta2.shape}, W2 {w2.shape}, v_mem {v.shape}"
        )
    return (delta2 @ w2) * surrogate_derivative(v, v_th)


def hidden_layer_gradient(delta_hidden, trace1):
    return _trace_gradient(delta_hidden, trace1)


def adam_timestep_update(weights, grad, state, hp, layer_id=None):
    """Apply one Adam step with decoupled weight decay, in place.

    ``state`` accumulates moments over the time steps of the current batch;
    the caller resets it at every batch boundary.
    """
    if grad.shape != weights.shape:
        raise StructuralError(f"gradient shape {grad.shape} does not match weights {weights.shape}")
    if not np.isfinite(grad).all():
        raise NumericalInstabilityError("non-finite gradient", layer=layer_id)
    dt = weights.dtype.type
    state.step_count += 1
    k = state.step_count
    state.m *= dt(hp.beta1)
    state.m += dt(1.0 - hp.beta1) * grad
    state.v *= dt(hp.beta2)
    state.v += dt(1.0 - hp.beta2) * np.square(grad)
    m_hat = state.m / dt(1.0 - hp.beta1**k)
    v_hat = state.v / dt(1.0 - hp.beta2**k)
    step = m_hat / (np.sqrt(v_hat) + dt(hp.epsilon))
    if hp.weight_decay:
        step += dt(hp.weight_decay) * weights
    step *= dt(hp.lr)
    weights -= step
    return weights, state


@numba.njit(cache=True, nogil=True)
def _fused_trace_kernel(trace, decay, x, delta, spiked, grad):
    n_batch, n_out, n_in = trace.shape
    for b in range(n_batch):
        xb = x[b]
        for m in range(n_out):
            row = trace[b, m]
            d = delta[b, m]
            g = grad[m]
            if spiked[b, m]:
                if d != 0.0:
                    for j in range(n_in):
                        g[j] += d * (decay * row[j] + xb[j])
                for j in range(n_in):
                    row[j] = 0.0
            elif d != 0.0:
                for j in range(n_in):
                    v = decay * row[j] + xb[j]
                    g[j] += d * v
                    row[j] = v
            else:
                for j in range(n_in):
                    row[j] = decay * row[j] + xb[j]


def trace_step_gradient(trace, alpha, input_spikes, delta, spiked):
    """Advance ``trace`` in place, return the batch-mean gradient, then reset spiked rows.

    Single-pass equivalent of ``advance_trace`` -> ``*_layer_gradient`` ->
    reset, which keeps one pass over the (large) trace tensor per step.
    """
    if trace.ndim != 3:
        raise StructuralError(f"trace must be 3-D, got shape {trace.shape}")
    n_batch, n_out, n_in = trace.shape
    dtype = trace.dtype
    x = np.ascontiguousarray(input_spikes, dtype=dtype)
    d = np.ascontiguousarray(delta, dtype=dtype)
    s = np.ascontiguousarray(spiked, dtype=np.bool_)
    if x.shape != (n_batch, n_in) or d.shape != (n_batch, n_out) or s.shape != (n_batch, n_out):
        raise StructuralError(
            f"trace_step_gradient shapes inconsistent: trace {trace.shape}, input {x.shape}, "
            f"delta {d.shape}, spiked {s.shape}"
        )
    if not trace.flags.c_contiguous:
        raise StructuralError("trace must be C-contiguous")
    grad = np.zeros((n_out, n_in), dtype=dtype)
    _fused_trace_kernel(trace, dtype.type(1.0 - alpha), x, d, s, grad)
    grad /= dtype.type(n_batch)
    return grad
