"""Declarative spiking CNNs with temporal-shift placement and checkpointing."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as tt
from .errors import ConfigError, DimensionError, FormatError
from .formats import read_tsck, write_tsck
from .lif import LIFParams, lif_layer_forward
from .tensor import Tensor
from .tshift import ShiftConfig, fold_size, ts_module_forward

LAYER_KINDS = ("conv", "linear", "avgpool", "lif", "tshift", "batchnorm", "residual_begin", "residual_end")
MAC_KINDS = ("conv", "linear")


@dataclass
class LayerSpec:
    """One layer. Only the fields relevant to ``kind`` are used.

    JSON field names match the attribute names; ``lif`` and ``shift`` are
    nested objects with the fields of :class:`LIFParams` / :class:`ShiftConfig`.
    """

    kind: str
    out_channels: int | None = None
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    bias: bool = False
    out_features: int | None = None
    pool_size: int | None = None
    lif: LIFParams | None = None
    shift: ShiftConfig | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if isinstance(self.lif, dict):
            self.lif = LIFParams(**self.lif)
        if isinstance(self.shift, dict):
            self.shift = ShiftConfig.from_dict(self.shift)
        if self.kind == "lif" and self.lif is None:
            self.lif = LIFParams()
        if self.kind == "tshift" and self.shift is None:
            self.shift = ShiftConfig()

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "conv":
            d.update(out_channels=self.out_channels, kernel_size=self.kernel_size, stride=self.stride,
                     padding=self.padding, bias=self.bias)
        elif self.kind == "linear":
            d.update(out_features=self.out_features, bias=self.bias)
        elif self.kind == "avgpool":
            d.update(pool_size=self.pool_size)
        elif self.kind == "lif":
            d["lif"] = self.lif.to_dict()
        elif self.kind == "tshift":
            d["shift"] = self.shift.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown layer fields {sorted(unknown)} in {d}")
        return cls(**d)


@dataclass
class NetworkSpec:
    input_shape: tuple
    layers: list
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 4 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be four positive ints (T,C,H,W), got {self.input_shape}")
        self.layers = [LayerSpec.from_dict(l) if isinstance(l, dict) else l for l in self.layers]

    @property
    def timesteps(self) -> int:
        return self.input_shape[0]

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "class_count": self.class_count,
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        unknown = set(d) - {"input_shape", "layers", "class_count"}
        if unknown:
            raise ConfigError(f"unknown network spec fields {sorted(unknown)}")
        return cls(input_shape=d["input_shape"], layers=d["layers"], class_count=int(d["class_count"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def infer_shapes(spec: NetworkSpec) -> list[tuple]:
    """Per-sample output shape of every layer (leading axis is time).

    Raises :class:`ConfigError` naming the first offending layer index.
    """
    if not spec.layers:
        raise ConfigError("network has no layers")
    shape = spec.input_shape
    shapes = []
    blocks = []  # stack of (begin index, shape at begin, lif seen in block)
    lif_seen_top = False
    for i, layer in enumerate(spec.layers):
        k = layer.kind
        try:
            if k == "conv":
                if len(shape) != 4:
                    raise ConfigError("conv needs a [T,C,H,W] input")
                if not layer.out_channels or layer.out_channels < 1:
                    raise ConfigError("conv needs out_channels >= 1")
                oh = tt.conv_output_size(shape[2], layer.kernel_size, layer.stride, layer.padding)
                ow = tt.conv_output_size(shape[3], layer.kernel_size, layer.stride, layer.padding)
                if oh < 1 or ow < 1:
                    raise ConfigError(f"kernel {layer.kernel_size} does not fit input {shape[2]}x{shape[3]}")
                shape = (shape[0], layer.out_channels, oh, ow)
            elif k == "linear":
                if not layer.out_features or layer.out_features < 1:
                    raise ConfigError("linear needs out_features >= 1")
                shape = (shape[0], layer.out_features)
            elif k == "avgpool":
                if len(shape) != 4:
                    raise ConfigError("avgpool needs a [T,C,H,W] input")
                size = layer.pool_size or shape[2]
                if layer.pool_size is None and shape[2] != shape[3]:
                    raise ConfigError("global avgpool needs a square input")
                if shape[2] % size or shape[3] % size:
                    raise ConfigError(f"pool size {size} does not divide {shape[2]}x{shape[3]}")
                shape = (shape[0], shape[1], shape[2] // size, shape[3] // size)
            elif k == "batchnorm":
                if len(shape) != 4:
                    raise ConfigError("batchnorm needs a [T,C,H,W] input")
            elif k == "lif":
                if blocks:
                    blocks[-1][2] = True
                lif_seen_top = True
            elif k == "tshift":
                if len(shape) != 4:
                    raise ConfigError("tshift needs a [T,C,H,W] input")
                in_block = blocks[-1][2] if blocks else lif_seen_top
                if not in_block:
                    raise ConfigError("tshift must follow a lif layer within its block")
                C = shape[1]
                fold = fold_size(C, layer.shift.c_k)
                if C // fold < 3:
                    raise ConfigError(f"{C} channels leave fewer than 3 shift groups")
            elif k == "residual_begin":
                blocks.append([i, shape, False])
            elif k == "residual_end":
                if not blocks:
                    raise ConfigError("residual_end without matching residual_begin")
                begin, skip_shape, _ = blocks.pop()
                if skip_shape != shape:
                    raise ConfigError(f"residual block from layer {begin} maps {skip_shape} to {shape}")
        except ConfigError as exc:
            raise ConfigError(f"layer {i} ({k}): {exc}") from None
        shapes.append(shape)
    if blocks:
        raise ConfigError(f"layer {blocks[-1][0]} (residual_begin): block is never closed")
    final = shape
    K = spec.class_count
    if final not in ((spec.timesteps, K), (spec.timesteps, K, 1, 1)):
        raise ConfigError(f"layer {len(spec.layers) - 1} ({spec.layers[-1].kind}): final output {final} "
                          f"is not (T, {K}) or (T, {K}, 1, 1)")
    return shapes


class Network:
    """A built network: parameters, batchnorm buffers and the forward pass."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        self.spec = spec
        self.shapes = infer_shapes(spec)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.last_stats: list[dict] = []
        self.last_outputs: list[np.ndarray] | None = None
        shape = spec.input_shape
        for i, layer in enumerate(spec.layers):
            k = layer.kind
            if k == "conv":
                fan_in = shape[1] * layer.kernel_size ** 2
                bound = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-bound, bound, (layer.out_channels, shape[1], layer.kernel_size, layer.kernel_size))
                self._param(f"{i}.weight", w)
                if layer.bias:
                    self._param(f"{i}.bias", np.zeros(layer.out_channels))
            elif k == "linear":
                fan_in = int(np.prod(shape[1:]))
                bound = np.sqrt(6.0 / fan_in)
                self._param(f"{i}.weight", rng.uniform(-bound, bound, (layer.out_features, fan_in)))
                if layer.bias:
                    self._param(f"{i}.bias", np.zeros(layer.out_features))
            elif k == "batchnorm":
                C = shape[1]
                self._param(f"{i}.gamma", np.ones(C))
                self._param(f"{i}.beta", np.zeros(C))
                self.buffers[f"{i}.running_mean"] = np.zeros(C, dtype=np.float32)
                self.buffers[f"{i}.running_var"] = np.ones(C, dtype=np.float32)
            elif k == "tshift":
                self._param(f"{i}.alpha", np.asarray(layer.shift.alpha_init))
            shape = self.shapes[i]

    def _param(self, name, value) -> None:
        self.params[name] = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True, name=name)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.buffers)
        return dict(sorted(out.items(), key=lambda kv: _name_key(kv[0])))

    def alphas(self) -> dict[str, float]:
        return {n: float(p.data) for n, p in self.params.items() if n.endswith(".alpha")}

    def forward(self, x, mode: str = "train", rng: np.random.Generator | None = None,
                bn_training: bool | None = None, keep_outputs: bool = False) -> Tensor:
        """Run the network on ``[T,C,H,W]`` or batched ``[T,N,C,H,W]`` input.

        Returns per-timestep logits ``[T, K]`` (or ``[T, N, K]``). Spike
        counts of every lif layer and input activity of every conv/linear
        layer are left in :attr:`last_stats`.
        """
        if mode not in ("train", "infer"):
            raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
        if not isinstance(x, Tensor):
            x = Tensor(x)
        batched = x.ndim == 5
        expected = self.spec.input_shape
        got = (x.shape[0],) + x.shape[2:] if batched else x.shape
        if got != expected:
            raise DimensionError(f"input shape {x.shape} does not match network input {expected}")
        if bn_training is None:
            bn_training = mode == "train"
        if not batched:
            x = tt.reshape(x, (x.shape[0], 1) + x.shape[1:])
        T, N = x.shape[:2]
        stats = []
        outputs = [] if keep_outputs else None
        skips = []
        h = x
        for i, layer in enumerate(self.spec.layers):
            k = layer.kind
            rec = {"index": i, "kind": k}
            if k in MAC_KINDS:
                rec["input_nonzero"] = int(np.count_nonzero(h.data))
                rec["input_numel"] = int(h.size)
            if k == "conv":
                h = tt.conv2d(h, self.params[f"{i}.weight"], self.params.get(f"{i}.bias"),
                              stride=layer.stride, padding=layer.padding)
            elif k == "linear":
                if h.ndim != 3:
                    h = tt.reshape(h, (T, N, -1))
                h = tt.linear(h, self.params[f"{i}.weight"], self.params.get(f"{i}.bias"))
            elif k == "avgpool":
                h = tt.avg_pool2d(h, layer.pool_size or h.shape[-1])
            elif k == "batchnorm":
                h = tt.batch_norm(h, self.params[f"{i}.gamma"], self.params[f"{i}.beta"],
                                  self.buffers[f"{i}.running_mean"], self.buffers[f"{i}.running_var"],
                                  training=bn_training)
            elif k == "lif":
                h = lif_layer_forward(h, layer.lif)
                rec["spikes"] = int(np.count_nonzero(h.data))
                rec["numel"] = int(h.size)
            elif k == "tshift":
                h = ts_module_forward(h, layer.shift, self.params[f"{i}.alpha"], mode=mode, rng=rng)
            elif k == "residual_begin":
                skips.append(h)
            elif k == "residual_end":
                h = tt.add(h, skips.pop())
            stats.append(rec)
            if keep_outputs:
                outputs.append(h.data if batched else h.data[:, 0])
        if h.ndim == 5:
            h = tt.reshape(h, (T, N, h.shape[2]))
        if not batched:
            h = tt.reshape(h, (T, h.shape[-1]))
        self.last_stats = stats
        self.last_outputs = outputs
        return h

    __call__ = forward


def _name_key(name: str):
    idx, _, rest = name.partition(".")
    return (int(idx), rest)


def build(spec: NetworkSpec, rng: np.random.Generator | int | None = 0) -> Network:
    """Validate ``spec`` and initialise parameters (He-uniform weights)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return Network(spec, rng)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _conv(c, stride=1, k=3):
    return LayerSpec("conv", out_channels=c, kernel_size=k, stride=stride, padding=k // 2)


def mini_plain(input_shape, class_count, shift: ShiftConfig | None = ShiftConfig(),
               lif: LIFParams = LIFParams(), widths=(16, 32, 64)) -> NetworkSpec:
    """Three conv-bn-lif(-tshift) blocks, global pooling and a linear readout."""
    layers = []
    for j, c in enumerate(widths):
        layers += [_conv(c, stride=1 if j == 0 else 2), LayerSpec("batchnorm"), LayerSpec("lif", lif=lif)]
        if shift is not None:
            layers.append(LayerSpec("tshift", shift=shift))
    layers += [LayerSpec("avgpool"), LayerSpec("linear", out_features=class_count, bias=True)]
    return NetworkSpec(input_shape, layers, class_count)


def resnet20_mini(input_shape, class_count, shift: ShiftConfig | None = ShiftConfig(),
                  lif: LIFParams = LIFParams(), widths=(16, 32, 64), blocks_per_stage: int = 1) -> NetworkSpec:
    """Reduced-depth spiking ResNet; the shift sits after each block's first lif."""
    layers = [_conv(widths[0]), LayerSpec("batchnorm"), LayerSpec("lif", lif=lif)]
    for j, c in enumerate(widths):
        if j:
            layers += [_conv(c, stride=2), LayerSpec("batchnorm"), LayerSpec("lif", lif=lif)]
        for _ in range(blocks_per_stage):
            layers += [LayerSpec("residual_begin"), _conv(c), LayerSpec("batchnorm"), LayerSpec("lif", lif=lif)]
            if shift is not None:
                layers.append(LayerSpec("tshift", shift=shift))
            layers += [_conv(c), LayerSpec("batchnorm"), LayerSpec("residual_end"), LayerSpec("lif", lif=lif)]
    layers += [LayerSpec("avgpool"), LayerSpec("linear", out_features=class_count, bias=True)]
    return NetworkSpec(input_shape, layers, class_count)


PRESETS = {"mini-plain": mini_plain, "resnet20-mini": resnet20_mini}


def preset(name: str, input_shape, class_count, **kwargs) -> NetworkSpec:
    try:
        fn = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown network preset {name!r}; choose from {sorted(PRESETS)}") from None
    return fn(input_shape, class_count, **kwargs)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(net: Network, path, metadata: dict | None = None) -> None:
    meta = dict(metadata or {})
    meta["network_spec"] = net.spec.to_dict()
    write_tsck(path, net.state_arrays(), meta)


def load_checkpoint(path) -> tuple[Network, dict]:
    """Rebuild the network stored at ``path``; returns ``(network, metadata)``."""
    arrays, meta = read_tsck(path)
    if "network_spec" not in meta:
        raise FormatError("checkpoint metadata lacks network_spec")
    try:
        spec = NetworkSpec.from_dict(meta["network_spec"])
    except (ConfigError, KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint network_spec invalid: {exc}") from exc
    net = build(spec, 0)
    expected = net.state_arrays()
    unknown = sorted(set(arrays) - set(expected))
    if unknown:
        raise FormatError(f"checkpoint has unknown arrays: {', '.join(unknown)}")
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise FormatError(f"checkpoint is missing arrays: {', '.join(missing)}")
    for name, arr in arrays.items():
        if arr.shape != expected[name].shape:
            raise FormatError(f"array {name} has dims {arr.shape}, network expects {expected[name].shape}")
    for name, arr in arrays.items():
        if name in net.params:
            net.params[name].data = arr.copy()
        else:
            net.buffers[name][...] = arr
    return net, meta
