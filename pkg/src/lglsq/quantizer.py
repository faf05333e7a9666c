"""Linear symmetric fake quantization with a per-layer or per-channel scale.

A :class:`QuantizerState` owns the scale ``alpha`` and the integer code
range; the free functions map reals to codes, codes back to reals, and
build the differentiable training surrogate.
"""

import numpy as np

from . import tensor as T
from .errors import DomainError
from .estimators import EstimatorConfig, EstimatorKind, asr_forward, quant_backward, round_half_away

PER_LAYER = "per_layer"
PER_CHANNEL = "per_channel"
FLOAT_BITS = 32
ALPHA_FLOOR = 1e-8


def code_range(bits, signed):
    if signed:
        return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    return 0, 2 ** bits - 1


class QuantizerState:
    """Scale, bit width and estimator for one quantized tensor.

    ``bits == 32`` means pass-through: no rounding, no scale learning.
    ``alpha`` has one entry per output channel for per-channel states and a
    single entry otherwise; it stays ``None`` until :func:`init_scale` runs.
    """

    def __init__(self, bits, signed=True, granularity=PER_LAYER, channels=1,
                 estimator=None, ssg=None, name=""):
        if bits != FLOAT_BITS and bits < 2:
            raise DomainError(f"bit width must be >= 2, got {bits}")
        if granularity not in (PER_LAYER, PER_CHANNEL):
            raise DomainError(f"unknown granularity {granularity!r}")
        self.bits = int(bits)
        self.signed = bool(signed)
        self.granularity = granularity
        self.channels = channels if granularity == PER_CHANNEL else 1
        self.estimator = estimator if estimator is not None else EstimatorConfig()
        self.ssg = ssg
        self.name = name
        self.alpha = None
        self.q_min, self.q_max = code_range(self.bits, self.signed) if self.enabled else (None, None)
        self.last_input = None

    @property
    def enabled(self):
        return self.bits != FLOAT_BITS

    @property
    def initialized(self):
        return self.alpha is not None

    def alpha_view(self, ndim):
        """Alpha reshaped to broadcast against an ``ndim`` tensor."""
        if self.granularity == PER_CHANNEL:
            return self.alpha.reshape((-1,) + (1,) * (ndim - 1))
        return self.alpha.reshape(())

    def set_alpha(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float32).reshape(-1)
        if alpha.size != self.channels:
            raise DomainError(f"{self.name}: expected {self.channels} scales, got {alpha.size}")
        self.alpha = alpha

    def __repr__(self):
        return (f"QuantizerState({self.name!r}, bits={self.bits}, signed={self.signed}, "
                f"{self.granularity}, channels={self.channels})")


def _validate_alpha(state):
    if state.alpha is None:
        raise DomainError(f"{state.name or 'quantizer'}: scale not initialized")
    if not np.all(state.alpha > 0):
        raise DomainError(f"{state.name or 'quantizer'}: scale must be positive, got {state.alpha}")


def _slices(x, state):
    """View ``x`` as (groups, elements) following the state's granularity."""
    x = np.asarray(x)
    if state.granularity == PER_CHANNEL:
        return x.reshape(x.shape[0], -1)
    return x.reshape(1, -1)


def quantize_codes(x, state):
    """Integer codes ``clamp(round(x / alpha), q_min, q_max)``."""
    _validate_alpha(state)
    x = np.asarray(x, dtype=np.float32)
    if np.isnan(x).any():
        raise DomainError(f"{state.name or 'quantizer'}: NaN in input")
    s = x / state.alpha_view(x.ndim)
    return np.clip(round_half_away(s), state.q_min, state.q_max).astype(np.int32)


def dequantize(codes, state):
    """Real values ``codes * alpha``."""
    _validate_alpha(state)
    codes = np.asarray(codes)
    if codes.size and (codes.min() < state.q_min or codes.max() > state.q_max):
        raise DomainError(
            f"{state.name or 'quantizer'}: codes outside [{state.q_min}, {state.q_max}]")
    return codes.astype(np.float32) * state.alpha_view(codes.ndim)


def init_scale(x, state):
    """Max-abs initial scale per slice, floored at 1e-8."""
    sl = _slices(x, state)
    if sl.shape[1] == 0:
        raise DomainError(f"{state.name or 'quantizer'}: empty slice")
    alpha = np.abs(sl).max(axis=1).astype(np.float64) / state.q_max
    return np.maximum(alpha, ALPHA_FLOOR).astype(np.float32)


def fake_quantize(x, state, training=False):
    """Quantize-dequantize ``x`` (a :class:`Tensor`) with a custom backward.

    In training with a soft estimator the rounding is replaced by the
    arctangent soft round so forward and backward agree; evaluation always
    rounds exactly. The scale is a constant for autodiff.
    """
    if not state.enabled:
        return x
    if training:
        state.last_input = x.data
        if not state.initialized:
            state.set_alpha(init_scale(x.data, state))
    _validate_alpha(state)
    if np.isnan(x.data).any():
        raise DomainError(f"{state.name or 'quantizer'}: NaN in input")
    alpha = T.Tensor(state.alpha_view(x.ndim), dtype=x.dtype)
    est = state.estimator
    soft = training and est.soft
    lam = est.lam
    qmin, qmax = state.q_min, state.q_max

    def forward(s):
        r = asr_forward(s, lam) if soft else round_half_away(s)
        mask = (s >= qmin) & (s <= qmax)
        return np.clip(r, qmin, qmax), {"s": s, "mask": mask, "lam": lam}

    def backward(g, ctx):
        return quant_backward(g, ctx, est)

    s = T.div(x, alpha)
    q = T.custom_grad(forward, backward, (s,), name="round_" + EstimatorKind(est.kind).value)
    return T.mul(q, alpha)
