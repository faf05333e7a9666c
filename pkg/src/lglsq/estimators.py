"""Rounding estimators: straight-through, arctangent soft round, and the
discretization-error correction applied on top of it.

All functions here are pure numpy; :func:`quant_backward` is what the
fake-quantization node calls from its custom backward rule.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ContractError, DomainError, ShapeError


class EstimatorKind(str, Enum):
    STE = "ste"
    ASR = "asr"
    ASR_MDE = "asr_mde"


@dataclass
class LambdaSchedule:
    initial: float = 5.0
    growth: float = 1.0
    cap: float = 50.0

    def __post_init__(self):
        if self.initial <= 0:
            raise DomainError(f"lambda initial must be positive, got {self.initial}")
        if self.initial > self.cap:
            raise DomainError(f"lambda initial {self.initial} exceeds cap {self.cap}")


@dataclass
class EstimatorConfig:
    kind: EstimatorKind = EstimatorKind.ASR_MDE
    schedule: LambdaSchedule = field(default_factory=LambdaSchedule)
    lam: float = None

    def __post_init__(self):
        self.kind = EstimatorKind(self.kind)
        if self.lam is None:
            self.lam = self.schedule.initial
        if self.lam <= 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")

    @property
    def soft(self):
        return self.kind is not EstimatorKind.STE

    def set_epoch(self, epoch):
        self.lam = lambda_at(epoch, self.schedule)


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    x = np.asarray(x)
    a = np.abs(x)
    fl = np.floor(a)
    r = np.where(a - fl >= 0.5, fl + 1, fl)
    return np.copysign(r, x).astype(x.dtype, copy=False) if x.dtype.kind == "f" else r


def _check_lam(lam):
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")


def asr_forward(x, lam):
    """Arctangent soft round of ``x`` with slope ``lam``.

    Output lies in (floor(x), floor(x) + 1) and tends to round(x) as ``lam``
    grows; half-integers are fixed points.
    """
    _check_lam(lam)
    x = np.asarray(x)
    fl = np.floor(x)
    frac = x - fl - 0.5
    out = fl + (np.arctan(lam * frac) + np.pi / 2) / np.pi
    return out.astype(x.dtype, copy=False) if x.dtype.kind == "f" else out


def asr_backward(x, lam):
    """Elementwise derivative of :func:`asr_forward`; floor is held constant."""
    _check_lam(lam)
    x = np.asarray(x)
    m = lam * (x - np.floor(x) - 0.5)
    out = lam / (np.pi * (1.0 + m * m))
    return out.astype(x.dtype, copy=False) if x.dtype.kind == "f" else out


def mde_adjust(g_asr, x, x_asr):
    """Scale the soft-round gradient by ``1 + tanh(g) * (x - x_asr)``."""
    g_asr, x, x_asr = np.asarray(g_asr), np.asarray(x), np.asarray(x_asr)
    if not (g_asr.shape == x.shape == x_asr.shape):
        raise ShapeError(f"mde_adjust: shapes {g_asr.shape}, {x.shape}, {x_asr.shape} differ")
    return g_asr * (1 + np.tanh(g_asr) * (x - x_asr))


def lambda_at(epoch, schedule):
    """Linear growth from ``initial`` by ``growth`` per epoch, capped."""
    return min(schedule.initial + schedule.growth * epoch, schedule.cap)


def quant_backward(upstream, ctx, config):
    """Gradient of the rounding+clamp step w.r.t. its input ``s = x / alpha``.

    ``ctx`` must hold ``s`` (pre-round values), ``mask`` (inside clamp
    range) and ``lam``.
    """
    try:
        s, mask, lam = ctx["s"], ctx["mask"], ctx["lam"]
    except (KeyError, TypeError):
        raise ContractError("quant_backward: saved context needs 's', 'mask' and 'lam'") from None
    kind = EstimatorKind(config.kind)
    if kind is EstimatorKind.STE:
        return upstream * mask
    g = asr_backward(s, lam)
    if kind is EstimatorKind.ASR_MDE:
        g = mde_adjust(g, s, asr_forward(s, lam))
    return upstream * g * mask
