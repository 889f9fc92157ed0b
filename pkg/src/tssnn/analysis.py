"""Operation counting, energy estimation and firing-rate statistics.

Energy follows the usual 45 nm accounting: the first (encoding) layer
performs real-valued multiply-accumulates, every later layer performs
spike-gated accumulates::

    #AC   = sum_{l >= 2} #MAC_l * a_l * T
    E_SNN = #MAC_1 * E_MAC + #AC * E_AC
    E_ANN = #MAC * E_MAC
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ContractError
from .network import MAC_KINDS, Network, NetworkSpec, infer_shapes

E_MAC = 4.6e-12
E_AC = 0.9e-12

# Reference per-sample operation counts; energy in millijoules.
REFERENCE_COUNTS = {
    "cifar100": {"dataset": "CIFAR-100", "timesteps": 4, "architecture": "ResNet20",
                 "acs": 141.2e6, "macs": 53.99e6, "flops": 868.36e6, "params": 11.3e6, "energy_mj": 0.375},
    "cifar10dvs": {"dataset": "CIFAR10-DVS", "timesteps": 10, "architecture": "ResNet20",
                   "acs": 1.23e9, "macs": 514.81e6, "flops": 8.65e9, "params": 11.2e6, "energy_mj": 3.475},
    "imagenet": {"dataset": "ImageNet", "timesteps": 4, "architecture": "SEW ResNet18",
                 "acs": 1.62e9, "macs": 956.4e6, "flops": 7.29e9, "params": 11.6e6, "energy_mj": 5.857},
}


@dataclass(frozen=True)
class EnergyModel:
    e_mac: float = E_MAC
    e_ac: float = E_AC

    def __post_init__(self):
        if self.e_mac <= 0 or self.e_ac <= 0:
            raise ContractError("per-operation energies must be positive")


def count_macs(spec: NetworkSpec) -> list[int]:
    """Per-layer MACs for one sample at one timestep (zero for non-MAC layers)."""
    shapes = infer_shapes(spec)
    prev = spec.input_shape
    out = []
    for layer, shape in zip(spec.layers, shapes):
        if layer.kind == "conv":
            out.append(int(np.prod(shape[1:])) * layer.kernel_size ** 2 * prev[1])
        elif layer.kind == "linear":
            out.append(int(np.prod(prev[1:])) * layer.out_features)
        else:
            out.append(0)
        prev = shape
    return out


def count_acs(mac_per_layer, rates, T: int) -> float:
    """Spike-gated accumulates; the first entry (encoding layer) is excluded."""
    if len(mac_per_layer) != len(rates):
        raise ContractError(f"{len(mac_per_layer)} MAC counts but {len(rates)} rates")
    total = 0.0
    for macs, a in list(zip(mac_per_layer, rates))[1:]:
        if not 0.0 <= a <= 1.0:
            raise ContractError(f"firing rate {a} outside [0, 1]")
        total += macs * a
    return total * T


def energy(macs: float, acs: float, model: EnergyModel = EnergyModel()) -> float:
    """Joules for ``macs`` multiply-accumulates and ``acs`` accumulates."""
    if macs < 0 or acs < 0:
        raise ContractError("operation counts must be non-negative")
    return macs * model.e_mac + acs * model.e_ac


def firing_rate(spikes) -> float:
    s = np.asarray(getattr(spikes, "data", spikes))
    if s.size == 0:
        raise ContractError("firing_rate of an empty tensor")
    if not np.all((s == 0) | (s == 1)):
        raise ContractError("firing_rate needs a spike tensor with values in {0, 1}")
    return float(np.count_nonzero(s)) / s.size


def accumulate_stats(totals: dict, stats: list) -> None:
    """Fold one forward pass's ``Network.last_stats`` into running totals."""
    lif = [(r["spikes"], r["numel"]) for r in stats if r["kind"] == "lif"]
    mac = [(r["input_nonzero"], r["input_numel"]) for r in stats if "input_nonzero" in r]
    if not totals:
        totals["lif"] = lif
        totals["mac"] = mac
        totals["lif_index"] = [r["index"] for r in stats if r["kind"] == "lif"]
        totals["mac_index"] = [r["index"] for r in stats if "input_nonzero" in r]
        return
    totals["lif"] = [(a + c, b + d) for (a, b), (c, d) in zip(totals["lif"], lif)]
    totals["mac"] = [(a + c, b + d) for (a, b), (c, d) in zip(totals["mac"], mac)]


def summarize_stats(totals: dict) -> tuple[list, list, float]:
    """Per-lif-layer firing rates, per-MAC-layer input activity, overall rate.

    The overall rate is total spikes over total neuron-timesteps, i.e. the
    neuron-count-weighted mean of the layer rates.
    """
    if not totals:
        return [], [], 0.0
    rates = [s / n for s, n in totals["lif"]]
    activity = [s / n for s, n in totals["mac"]]
    spikes = sum(s for s, _ in totals["lif"])
    numel = sum(n for _, n in totals["lif"])
    return rates, activity, (spikes / numel if numel else 0.0)


@dataclass
class LayerEnergy:
    index: int
    kind: str
    macs: int
    rate: float


@dataclass
class EnergyReport:
    timesteps: int
    layers: list = field(default_factory=list)
    total_mac: float = 0.0
    first_layer_mac: float = 0.0
    total_ac: float = 0.0
    energy_j: float = 0.0
    ann_energy_j: float = 0.0
    params: int = 0
    firing_rates: list = field(default_factory=list)
    overall_rate: float = 0.0
    flops_convention: str = "FLOPs = 2*MACs + ACs"

    @property
    def flops(self) -> float:
        return 2 * self.total_mac + self.total_ac

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flops"] = self.flops
        d["energy_mj"] = self.energy_j * 1e3
        return d


def report_from_rates(spec: NetworkSpec, mac_rates, params: int = 0, model: EnergyModel = EnergyModel(),
                      firing_rates=(), overall_rate: float = 0.0) -> EnergyReport:
    """Energy report from explicit per-MAC-layer input rates ``a_l``."""
    macs = count_macs(spec)
    idx = [i for i, l in enumerate(spec.layers) if l.kind in MAC_KINDS]
    mac_rates = [float(r) for r in mac_rates]
    if len(mac_rates) != len(idx):
        raise ContractError(f"network has {len(idx)} conv/linear layers but {len(mac_rates)} rates were given")
    per = [macs[i] for i in idx]
    T = spec.timesteps
    acs = count_acs(per, mac_rates, T)
    first = float(per[0]) if per else 0.0
    return EnergyReport(
        timesteps=T,
        layers=[LayerEnergy(i, spec.layers[i].kind, m, r) for i, m, r in zip(idx, per, mac_rates)],
        total_mac=float(sum(per)), first_layer_mac=first, total_ac=acs,
        energy_j=energy(first, acs, model), ann_energy_j=energy(float(sum(per)), 0.0, model),
        params=int(params), firing_rates=list(firing_rates), overall_rate=overall_rate)


def network_energy_report(net: Network, stream, model: EnergyModel = EnergyModel(), mode: str = "infer",
                          seed: int = 0, batch_size: int = 50) -> EnergyReport:
    """Average spike activity over ``stream`` and turn it into an energy report.

    ``stream`` yields ``[T,C,H,W]`` arrays or ``(array, label)`` pairs.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    totals: dict = {}
    buf = []
    seen = 0

    def flush():
        X = np.stack(buf).transpose(1, 0, 2, 3, 4)
        net.forward(np.ascontiguousarray(X), mode=mode, rng=rng, bn_training=False)
        accumulate_stats(totals, net.last_stats)
        buf.clear()

    for item in stream:
        x = item[0] if isinstance(item, tuple) else item
        buf.append(np.asarray(getattr(x, "data", x), dtype=np.float32))
        seen += 1
        if len(buf) == batch_size:
            flush()
    if buf:
        flush()
    if not seen:
        raise ContractError("energy report needs at least one sample")
    rates, activity, overall = summarize_stats(totals)
    return report_from_rates(net.spec, activity, net.param_count(), model, rates, overall)


def paper_check(name: str, model: EnergyModel = EnergyModel()) -> dict:
    """Recompute a published energy figure from its AC and MAC counts."""
    try:
        row = REFERENCE_COUNTS[name]
    except KeyError:
        raise ContractError(f"unknown reference column {name!r}; choose from {sorted(REFERENCE_COUNTS)}") from None
    mj = energy(row["macs"], row["acs"], model) * 1e3
    return {"name": name, **row, "computed_mj": mj,
            "relative_error": abs(mj - row["energy_mj"]) / row["energy_mj"]}


def _si(x: float) -> str:
    for unit, div in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if abs(x) >= div:
            return f"{x / div:.2f}{unit}"
    return f"{x:.2f}"


def render_table(columns: list[tuple[str, dict]]) -> str:
    """Fixed-width table with rows ACs, MACs, FLOPs, Param, Energy.

    Each column is ``(title, {"acs", "macs", "flops", "params", "energy_mj"})``.
    """
    rows = [("ACs", "acs", _si), ("MACs", "macs", _si), ("FLOPs", "flops", _si),
            ("Param", "params", _si), ("Energy", "energy_mj", lambda v: f"{v:.3f}mJ" if v >= 0.01 else f"{v:.3g}mJ")]
    width = max(14, *(len(t) + 2 for t, _ in columns))
    lines = ["Dataset".ljust(10) + "".join(t.rjust(width) for t, _ in columns)]
    for label, key, fmt in rows:
        lines.append(label.ljust(10) + "".join(fmt(c[key]).rjust(width) for _, c in columns))
    return "\n".join(lines)
