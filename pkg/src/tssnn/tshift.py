"""Temporal shift of channel segments with a learnable residual recombination.

Channels are grouped into ``c_k`` contiguous blocks of ``C_fold`` channels.
Two split points ``0 < g1 < g2 < c_k`` cut the blocks into three segments;
each segment is moved one timestep toward the past ("left"), toward the
future ("right"), or left in place. Slots vacated at the edge timesteps are
zero and values pushed past the edge are dropped. The shifted tensor ``Z``
is recombined as ``alpha * Z + X``.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import kernels
from . import tensor as tt
from .errors import ConfigError, DimensionError
from .tensor import Tensor, apply_op

DIRECTIONS = ("left", "right", "none")
# +1 reads the next timestep (Z[t] = X[t+1]); -1 reads the previous one.
DIRECTION_CODES = {"left": 1, "right": -1, "none": 0}
_SHORT = {"L": "left", "R": "right", "0": "none"}
_LONG = {v: k for k, v in _SHORT.items()}


def parse_directions(text) -> tuple[str, str, str]:
    """Parse ``"L-R-0"`` or ``"left,right,none"`` into a direction triple."""
    if isinstance(text, (tuple, list)):
        parts = list(text)
    else:
        sep = "," if "," in text else "-"
        parts = [p.strip() for p in text.split(sep)]
    out = []
    for p in parts:
        p = _SHORT.get(p.upper(), p) if len(p) == 1 else p.lower()
        if p not in DIRECTIONS:
            raise ConfigError(f"unknown shift direction {p!r}; use L/R/0 or left/right/none")
        out.append(p)
    if len(out) != 3:
        raise ConfigError(f"need exactly three directions, got {len(out)}")
    return tuple(out)


def format_directions(directions) -> str:
    return "-".join(_LONG[d] for d in directions)


@dataclass(frozen=True)
class ShiftConfig:
    c_k: int = 32
    split_strategy: str = "random"
    directions: tuple = ("left", "right", "none")
    alpha_init: float = 0.5
    apply_at_inference: bool = True

    def __post_init__(self):
        if int(self.c_k) < 1:
            raise ConfigError(f"c_k must be >= 1, got {self.c_k}")
        if self.split_strategy not in ("random", "fixed"):
            raise ConfigError(f"split_strategy must be 'random' or 'fixed', got {self.split_strategy!r}")
        object.__setattr__(self, "directions", parse_directions(self.directions))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["directions"] = list(self.directions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown shift config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SplitPoints:
    g1: int
    g2: int
    c_k: int = field(default=0, compare=False)

    def __post_init__(self):
        upper = self.c_k if self.c_k else self.g2 + 1
        if not 0 < self.g1 < self.g2 < upper:
            raise ConfigError(
                f"split points must satisfy 0 < g1 < g2 < C_k (g1 != g2); got g1={self.g1}, g2={self.g2}, C_k={self.c_k}")


def effective_ck(C: int, c_k: int) -> int:
    return min(int(c_k), int(C))


def fold_size(C: int, c_k: int) -> int:
    """Channels per group; ``c_k`` is clamped to ``C`` when larger."""
    if C < 1 or c_k < 1:
        raise ConfigError(f"channel count and c_k must be >= 1, got C={C}, c_k={c_k}")
    eff = effective_ck(C, c_k)
    if C % eff:
        raise ConfigError(f"channel count C={C} is not divisible by c_k={eff}")
    return C // eff


def draw_split(c_k: int, strategy: str, rng: np.random.Generator | None = None) -> SplitPoints:
    if c_k < 3:
        raise ConfigError(f"c_k={c_k} leaves no room for two interior split points (need c_k >= 3)")
    if strategy == "fixed":
        return SplitPoints(c_k // 3, (2 * c_k) // 3, c_k)
    if strategy != "random":
        raise ConfigError(f"unknown split strategy {strategy!r}")
    if rng is None:
        raise ConfigError("random split strategy needs an explicit generator")
    a, b = rng.choice(np.arange(1, c_k), size=2, replace=False)
    return SplitPoints(int(min(a, b)), int(max(a, b)), c_k)


def _bands(x: Tensor, split: SplitPoints, cfg: ShiftConfig):
    if x.ndim not in (4, 5):
        raise DimensionError(f"temporal_shift expects [T,C,H,W] or [T,N,C,H,W], got shape {x.shape}")
    C = x.shape[-3]
    fold = fold_size(C, cfg.c_k)
    eff = C // fold
    if split.g2 >= eff:
        raise ConfigError(f"split point g2={split.g2} must be < C_k={eff}")
    return split.g1 * fold, split.g2 * fold


def _as_tpcm(data: np.ndarray) -> np.ndarray:
    T = data.shape[0]
    C = data.shape[-3]
    P = data.shape[1] if data.ndim == 5 else 1
    return np.ascontiguousarray(data.reshape(T, P, C, -1))


def temporal_shift(x: Tensor, split: SplitPoints, cfg: ShiftConfig = ShiftConfig()) -> Tensor:
    """Shift the three channel segments of ``x`` by one timestep each."""
    b1, b2 = _bands(x, split, cfg)
    codes = [DIRECTION_CODES[d] for d in cfg.directions]
    z = kernels.temporal_shift(_as_tpcm(x.data), b1, b2, *codes).reshape(x.shape)

    def adjoint(g):
        back = kernels.temporal_shift(_as_tpcm(g), b1, b2, *(-c for c in codes))
        return (back.reshape(x.shape),)

    return apply_op("temporal_shift", (x,), z, adjoint)


def temporal_shift_slices(x: Tensor, split: SplitPoints, cfg: ShiftConfig = ShiftConfig()) -> Tensor:
    """Same result as :func:`temporal_shift`, assembled from recorded slice assignments."""
    b1, b2 = _bands(x, split, cfg)
    C = x.shape[-3]
    lead = (slice(None),) * (x.ndim - 4)
    z = Tensor(np.zeros_like(x.data), dtype=x.dtype)
    for (lo, hi), d in zip(((0, b1), (b1, b2), (b2, C)), cfg.directions):
        if hi <= lo:
            continue
        band = lead + (slice(lo, hi),)
        if d == "none":
            dst, src = (slice(None),) + band, (slice(None),) + band
        elif d == "left":
            dst, src = (slice(None, -1),) + band, (slice(1, None),) + band
        else:
            dst, src = (slice(1, None),) + band, (slice(None, -1),) + band
        if x.shape[0] == 1 and d != "none":
            continue
        part = apply_op("slice", (x,), x.data[src].copy(), _slice_adjoint(x, src))
        z = tt.slice_assign(z, dst, part)
    return z


def _slice_adjoint(x: Tensor, key):
    def adjoint(g):
        full = np.zeros_like(x.data)
        full[key] = g
        return (full,)
    return adjoint


def residual_shift(x: Tensor, z: Tensor, alpha) -> Tensor:
    """``alpha * Z + X``; ``alpha`` may be a rank-0 tensor or a float."""
    if x.shape != z.shape:
        raise DimensionError(f"residual_shift: X {x.shape} vs Z {z.shape}")
    if not isinstance(alpha, Tensor):
        alpha = Tensor(np.asarray(alpha, dtype=x.dtype))
    if alpha.ndim != 0:
        raise DimensionError(f"alpha must be a scalar, got shape {alpha.shape}")
    return tt.add(tt.mul(alpha, z), x)


def ts_module_forward(x: Tensor, cfg: ShiftConfig, alpha, mode: str = "train",
                      rng: np.random.Generator | None = None, split: SplitPoints | None = None):
    """Full module: draw split points, shift, recombine.

    In ``infer`` mode with ``apply_at_inference`` off, ``x`` is returned as is.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" and not cfg.apply_at_inference:
        return x
    if split is None:
        C = x.shape[-3]
        eff = C // fold_size(C, cfg.c_k)
        split = draw_split(eff, cfg.split_strategy, rng)
    z = temporal_shift(x, split, cfg)
    return residual_shift(x, z, alpha)
