"""Leaky integrate-and-fire neurons with hard reset and a rectangular surrogate."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import kernels
from . import tensor as tt
from .errors import ConfigError, DimensionError
from .tensor import Tensor, apply_op


@dataclass(frozen=True)
class LIFParams:
    """Neuron constants.

    ``spike_fn="ramp"`` swaps the Heaviside step for the clipped ramp whose
    exact derivative is the rectangular surrogate. It exists so gradient
    checks by finite differences are meaningful end to end; training uses
    the default ``"heaviside"``.
    """

    tau: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    a: float = 1.0
    spike_fn: str = "heaviside"

    def __post_init__(self):
        if not self.tau >= 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if not self.a > 0:
            raise ConfigError(f"surrogate width a must be > 0, got {self.a}")
        if not self.v_th > self.v_reset:
            raise ConfigError(f"v_th ({self.v_th}) must exceed v_reset ({self.v_reset})")
        if self.spike_fn not in ("heaviside", "ramp"):
            raise ConfigError(f"unknown spike_fn {self.spike_fn!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LIFState:
    """Post-reset membrane potential carried from one timestep to the next."""

    h: np.ndarray

    @classmethod
    def initial(cls, shape, params: LIFParams, dtype=np.float32) -> "LIFState":
        return cls(np.full(shape, params.v_reset, dtype=dtype))


def _dt(x: Tensor):
    return x.dtype.type


def lif_charge(h_prev: Tensor, x: Tensor, params: LIFParams) -> Tensor:
    """Explicit-Euler membrane update ``V = h + (x - (h - v_reset)) / tau``.

    Evaluated as ``h * (1 - 1/tau) + (x + v_reset) / tau`` so the memoryless
    case ``tau = 1`` returns ``x + v_reset`` exactly.
    """
    if h_prev.shape != x.shape:
        raise DimensionError(f"lif_charge: membrane {h_prev.shape} vs input {x.shape}")
    dt = _dt(x)
    inv_tau = dt(1.0 / params.tau)
    keep = dt(1.0) - inv_tau
    return tt.add(tt.scale(h_prev, keep), tt.scale(tt.add_scalar(x, params.v_reset), inv_tau))


def surrogate_grad(v: np.ndarray, params: LIFParams) -> np.ndarray:
    """dS/dV = (1/a) where |V - v_th| < a/2 (strict), else 0."""
    v = np.asarray(v)
    dt = v.dtype.type if v.dtype in (np.float32, np.float64) else np.float32
    d = v.astype(dt) - dt(params.v_th)
    return np.where(np.abs(d) < dt(params.a) * dt(0.5), dt(1.0 / params.a), dt(0.0))


def _spike_values(v: np.ndarray, params: LIFParams) -> np.ndarray:
    dt = v.dtype.type
    d = v - dt(params.v_th)
    if params.spike_fn == "ramp":
        return np.minimum(np.maximum(d * dt(1.0 / params.a) + dt(0.5), dt(0)), dt(1))
    return (d >= dt(0)).astype(v.dtype)


def lif_fire(v: Tensor, params: LIFParams) -> Tensor:
    """Threshold the membrane; the boundary ``V == v_th`` fires."""
    sg = surrogate_grad(v.data, params)
    return apply_op("fire", (v,), _spike_values(v.data, params), lambda g: (g * sg,))


def lif_reset(v: Tensor, s: Tensor, params: LIFParams) -> Tensor:
    """Hard reset ``h = v_reset * S + V * (1 - S)``."""
    if v.shape != s.shape:
        raise DimensionError(f"lif_reset: membrane {v.shape} vs spikes {s.shape}")
    keep = tt.add_scalar(tt.scale(s, -1.0), 1.0)
    return tt.add(tt.scale(s, params.v_reset), tt.mul(v, keep))


def lif_layer_forward(x: Tensor, params: LIFParams = LIFParams(), fused: bool = True,
                      return_state: bool = False):
    """Iterate charge -> fire -> reset over the leading time axis of ``x``.

    With ``fused=True`` the whole sequence is one recorded operation backed by
    the compiled kernel, with the reverse-time recursion as its adjoint.
    With ``fused=False`` each timestep is built from primitive recorded
    operations, so the tape itself unrolls the recursion.

    Returns the spike tensor, or ``(spikes, LIFState)`` with the final
    post-reset membrane when ``return_state`` is set.
    """
    if x.ndim < 1 or x.shape[0] < 1:
        raise DimensionError("lif_layer_forward needs at least one timestep")
    if fused:
        T = x.shape[0]
        flat = np.ascontiguousarray(x.data.reshape(T, -1))
        s, v, sg = kernels.lif_forward(flat, params.tau, params.v_th, params.v_reset, params.a,
                                       params.spike_fn == "ramp")

        def adjoint(g):
            gx = kernels.lif_backward(np.ascontiguousarray(g.reshape(T, -1)), s, v, sg,
                                      params.tau, params.v_reset)
            return (gx.reshape(x.shape),)

        out = apply_op("lif", (x,), s.reshape(x.shape), adjoint)
        if not return_state:
            return out
        dt = x.dtype.type
        h_last = dt(params.v_reset) * s[-1] + v[-1] * (dt(1) - s[-1])
        return out, LIFState(h_last.reshape(x.shape[1:]))

    h = Tensor(np.full(x.shape[1:], params.v_reset, dtype=x.dtype), dtype=x.dtype)
    spikes = []
    for t in range(x.shape[0]):
        v = lif_charge(h, tt.index(x, t), params)
        s = lif_fire(v, params)
        h = lif_reset(v, s, params)
        spikes.append(s)
    out = tt.stack(spikes)
    return (out, LIFState(h.data)) if return_state else out
