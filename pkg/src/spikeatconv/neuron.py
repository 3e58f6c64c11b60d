"""Discrete-time leaky integrate-and-fire neurons with surrogate gradients.

One Euler step (dt = 1) of the membrane equation, followed by threshold and
hard reset::

    H = v + (1/tau) * (-(v - v_rest) + r * x)
    S = heaviside(H - v_threshold)          # 0 where refractory
    v' = S * v_reset + (1 - S) * H

In the backward pass ``dS/dH`` is replaced by the configured surrogate, and the
reset path treats ``S`` as a constant unless ``detach_reset`` is off.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as tn
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

SURROGATES = ("atan", "sigmoid")
_KIND = {"atan": kernels.ATAN, "sigmoid": kernels.SIGMOID}

_smooth = False


@contextlib.contextmanager
def smooth_spikes():
    """Replace every Heaviside forward by the surrogate's primitive.

    The backward pass is unchanged, so inside this block the analytic gradient
    is the true derivative of the forward and finite differences apply.
    """
    global _smooth
    prev = _smooth
    _smooth = True
    try:
        yield
    finally:
        _smooth = prev


def is_smooth() -> bool:
    return _smooth


@dataclass(frozen=True)
class LIFParams:
    tau: float = 2.0
    v_threshold: float = 1.0
    v_reset: float = 0.0
    v_rest: float = 0.0
    r: float = 1.0
    surrogate: str = "atan"
    alpha: float = 2.0
    refractory_steps: int = 0
    detach_reset: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not self.v_threshold > self.v_reset:
            raise ConfigError(f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.surrogate not in SURROGATES:
            raise ConfigError(f"unknown surrogate {self.surrogate!r}; expected one of {SURROGATES}")
        if self.refractory_steps < 0:
            raise ConfigError(f"refractory_steps must be >= 0, got {self.refractory_steps}")


@dataclass
class LIFState:
    v: Tensor
    refractory_remaining: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.refractory_remaining is None:
            self.refractory_remaining = np.zeros(self.v.shape, dtype=np.int64)


def init_state(params: LIFParams, shape, dtype=np.float32) -> LIFState:
    return LIFState(Tensor(np.full(shape, params.v_rest, dtype=dtype)))


def _kind(name: str) -> int:
    try:
        return _KIND[name]
    except KeyError:
        raise ConfigError(f"unknown surrogate {name!r}; expected one of {SURROGATES}") from None


def surrogate_value(kind: str, alpha: float, x):
    """Surrogate derivative of the spike step at ``x = H - v_threshold``."""
    k = _kind(kind)
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    if k == kernels.ATAN:
        return alpha / (2 * (1 + (math.pi / 2 * alpha * np.asarray(x)) ** 2))
    s = 1 / (1 + np.exp(-alpha * np.asarray(x, dtype=np.float64)))
    return alpha * s * (1 - s)


def surrogate_primitive(kind: str, alpha: float, x):
    """Smooth function whose derivative is :func:`surrogate_value`."""
    k = _kind(kind)
    if k == kernels.ATAN:
        return np.arctan(math.pi / 2 * alpha * np.asarray(x)) / math.pi + 0.5
    return 1 / (1 + np.exp(-alpha * np.asarray(x, dtype=np.float64)))


def spike_fn(u: Tensor, kind: str = "atan", alpha: float = 2.0) -> Tensor:
    """Heaviside step of ``u`` with a surrogate backward."""
    ud = u.data
    d = np.asarray(surrogate_value(kind, alpha, ud), dtype=u.dtype)
    if _smooth:
        out = np.asarray(surrogate_primitive(kind, alpha, ud), dtype=u.dtype)
    else:
        out = (ud >= 0).astype(u.dtype)
    return tn.op_result(out, "spike", (u,), lambda g: (g * d,))


def lif_step(params: LIFParams, state: LIFState, x: Tensor) -> tuple[Tensor, LIFState]:
    """Advance one timestep. Built from tensor primitives, independent of the fused kernel."""
    if state.v.shape != x.shape:
        raise ShapeError(f"lif_step: state shape {state.v.shape} != input shape {x.shape}")
    v = state.v
    inv_tau = 1.0 / params.tau
    drive = tn.add(tn.neg(tn.add(v, -params.v_rest)), tn.scale(x, params.r))
    h = tn.add(v, tn.scale(drive, inv_tau))
    u = tn.add(h, -params.v_threshold)
    fired = u.data >= 0
    s = spike_fn(u, params.surrogate, params.alpha)
    ref = state.refractory_remaining
    if params.refractory_steps > 0:
        blocked = ref > 0
        s = tn.mul_const(s, (~blocked).astype(x.dtype))
        ref = np.where(fired & ~blocked, params.refractory_steps, np.maximum(ref - 1, 0))
    if params.detach_reset:
        sd = s.data
        v_new = tn.add(tn.mul_const(h, 1 - sd), Tensor(sd * x.dtype.type(params.v_reset)))
    else:
        v_new = tn.add(tn.scale(s, params.v_reset), tn.mul(tn.add(tn.neg(s), 1.0), h))
    return s, LIFState(v_new, ref)


def lif_sequence(params: LIFParams, x: Tensor) -> Tensor:
    """Run the neuron over the leading time axis of ``x[T, ...]`` from rest.

    Uses the fused kernel; state is not carried between calls.
    """
    if x.ndim < 1 or x.shape[0] < 1:
        raise ContractError(f"lif_sequence needs a leading time axis with T >= 1, got shape {x.shape}")
    T = x.shape[0]
    x2 = np.ascontiguousarray(x.data.reshape(T, -1))
    spikes, ds_dh, dv_dh = kernels.lif_forward(
        x2, params.tau, params.v_threshold, params.v_reset, params.v_rest, params.r,
        params.refractory_steps, _kind(params.surrogate), params.alpha, _smooth, params.detach_reset)
    shape = x.shape

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(T, -1), dtype=x2.dtype)
        return (kernels.lif_backward(g2, ds_dh, dv_dh, params.tau, params.r).reshape(shape),)

    return tn.op_result(spikes.reshape(shape), "lif_sequence", (x,), bwd)
