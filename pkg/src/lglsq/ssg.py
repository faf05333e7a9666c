"""Scale learning: the ternary simulated gradient for alpha.

Three candidate scales ``alpha*(0.5+z)``, ``alpha`` and ``2*alpha*(1-z)`` are
scored by squared reconstruction error; the winner decides whether alpha
shrinks, stays, or grows by ``alpha**2``. The search amplitude ``z`` widens
toward alpha whenever the same outer candidate keeps winning at periodic
checks. With ``z`` frozen at 0 this is the fixed-grid baseline.

States are vectorized: a per-channel quantizer keeps one ``z`` and one pair
of streak counters per channel.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .estimators import round_half_away
from .quantizer import ALPHA_FLOOR, PER_CHANNEL

LEFT, MIDDLE, RIGHT = 0, 1, 2
Z_MAX = 0.5

SSG = "ssg"
LLSQ_GRID = "llsq_grid"
FIXED = "fixed"
SCALE_LEARNING_KINDS = (SSG, LLSQ_GRID, FIXED)


@dataclass
class SsgState:
    channels: int = 1
    z_step: float = 0.03125
    iter_target: int = 1
    trigger_count: int = 4
    adapt: bool = True
    z: np.ndarray = None
    consecutive_left: np.ndarray = None
    consecutive_right: np.ndarray = None
    iters_since_check: int = 0
    last_argmin: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.iter_target < 1:
            raise DomainError(f"iter_target must be positive, got {self.iter_target}")
        if self.z is None:
            self.z = np.zeros(self.channels)
        if self.consecutive_left is None:
            self.consecutive_left = np.zeros(self.channels, dtype=np.int64)
        if self.consecutive_right is None:
            self.consecutive_right = np.zeros(self.channels, dtype=np.int64)


def default_iter_target(iters_per_epoch):
    return max(1, iters_per_epoch // 5)


def _quantize_dequantize(x, scale, q_min, q_max):
    return np.clip(round_half_away(x / scale), q_min, q_max) * scale


def candidate_errors(x, alpha, z, q_min, q_max):
    """Squared reconstruction errors at the left, middle and right scales.

    ``x`` is (groups, elements); ``alpha`` and ``z`` are per group. Returns
    an array of shape (3, groups). A 1-d ``x`` with scalar alpha/z is
    treated as a single group and returns shape (3,).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] == 0:
        raise DomainError("candidate_errors: empty slice")
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1, 1)
    z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
    if np.any(alpha <= 0):
        raise DomainError(f"candidate_errors: scale must be positive, got {alpha.ravel()}")
    if np.any((z < 0) | (z > Z_MAX)):
        raise DomainError(f"candidate_errors: z must lie in [0, 0.5], got {z.ravel()}")
    scales = (alpha * (0.5 + z), alpha, 2 * alpha * (1 - z))
    errs = np.stack([((x - _quantize_dequantize(x, s, q_min, q_max)) ** 2).sum(axis=1)
                     for s in scales])
    return errs[:, 0] if single else errs


def select(errors):
    """Argmin over candidates with ties going to the middle."""
    errors = np.asarray(errors)
    idx = np.argmin(errors, axis=0)
    return np.where(errors[MIDDLE] <= errors.min(axis=0), MIDDLE, idx)


def ssg_gradient(e_l, e_m, e_r, alpha):
    """``-alpha**2 * (argmin - 1)``; one of ``+alpha**2``, 0, ``-alpha**2``."""
    idx = select(np.stack([np.asarray(e_l), np.asarray(e_m), np.asarray(e_r)]))
    alpha = np.asarray(alpha)
    return -(alpha * alpha) * (idx - 1)


def ssg_observe_and_adapt(state, argmin_index):
    """Feed this iteration's winners; adapt ``z`` on check iterations.

    On every ``iter_target``-th call the winner is compared with the running
    streak. ``trigger_count`` consecutive left (or right) winners at checks
    advance ``z`` by ``z_step``, capped at 0.5, and restart that streak. A
    middle winner clears both streaks.
    """
    idx = np.broadcast_to(np.asarray(argmin_index), state.z.shape)
    state.last_argmin = np.array(idx)
    if not state.adapt:
        return
    state.iters_since_check += 1
    if state.iters_since_check < state.iter_target:
        return
    state.iters_since_check = 0
    left, right = idx == LEFT, idx == RIGHT
    state.consecutive_left = np.where(left, state.consecutive_left + 1, 0)
    state.consecutive_right = np.where(right, state.consecutive_right + 1, 0)
    fired = (state.consecutive_left >= state.trigger_count) | (
        state.consecutive_right >= state.trigger_count)
    state.z = np.where(fired, np.minimum(state.z + state.z_step, Z_MAX), state.z)
    state.consecutive_left = np.where(fired, 0, state.consecutive_left)
    state.consecutive_right = np.where(fired, 0, state.consecutive_right)


def llsq_grid_gradient(x, alpha, q_min, q_max):
    """Fixed-grid simulated gradient: candidates 0.5a, a, 2a."""
    e = candidate_errors(x, alpha, 0.0 * np.asarray(alpha, dtype=np.float64), q_min, q_max)
    return ssg_gradient(e[0], e[1], e[2], alpha)


def scale_step(quant, x, lr, kind=SSG):
    """One descent step on ``quant.alpha`` from the values ``x`` it just saw.

    Returns the gradient that was applied (one entry per scale), or None
    when the scale is not learned.
    """
    if kind == FIXED or not quant.enabled:
        return None
    x = np.asarray(x)
    groups = x.reshape(x.shape[0], -1) if quant.granularity == PER_CHANNEL else x.reshape(1, -1)
    alpha = quant.alpha.astype(np.float64)
    if kind == LLSQ_GRID:
        g = llsq_grid_gradient(groups, alpha, quant.q_min, quant.q_max)
    elif kind == SSG:
        st = quant.ssg
        e = candidate_errors(groups, alpha, st.z, quant.q_min, quant.q_max)
        g = ssg_gradient(e[0], e[1], e[2], alpha)
        ssg_observe_and_adapt(st, select(e))
    else:
        raise DomainError(f"unknown scale-learning kind {kind!r}")
    quant.alpha = np.maximum(alpha - lr * g, ALPHA_FLOOR).astype(np.float32)
    return g
