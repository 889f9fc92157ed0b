"""Run configuration: JSON config -> network, datasets, training run on disk.

A run config is a JSON object with these keys (all optional except
``network`` and ``dataset``)::

    network          preset name ("mini-plain", "resnet20-mini"), a NetworkSpec
                     object, or a path to a NetworkSpec JSON file
    network_options  keyword arguments for the preset (widths, blocks_per_stage)
    lif              LIFParams fields used by presets
    shift            ShiftConfig fields; for presets they configure every
                     tshift layer, for explicit specs they override them
    train            TrainConfig fields
    dataset          SyntheticTaskSpec fields plus optional
                     test_samples_per_class, or {"train_dir", "test_dir"}
    seed             run seed (overridden by TSSNN_SEED, then by --seed)
    out              output directory
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from pathlib import Path

from .data import Dataset, SyntheticTaskSpec, generate, load_tensor_dataset
from .errors import ConfigError
from .lif import LIFParams
from .network import NetworkSpec, build, infer_shapes, preset, save_checkpoint
from .trainer import TrainConfig, metrics_line, train
from .tshift import ShiftConfig

RUN_KEYS = {"network", "network_options", "lif", "shift", "train", "dataset", "seed", "out"}
SPLIT_REDRAW = "split points redrawn on every forward call from the run generator (training and inference)"


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    base = path.parent
    if isinstance(cfg.get("network"), str) and cfg["network"].endswith(".json"):
        spec_path = (base / cfg["network"]).resolve()
        if not spec_path.is_file():
            raise ConfigError(f"network spec file not found: {spec_path}")
        cfg["network"] = json.loads(spec_path.read_text())
    return cfg


def resolve(cfg: dict, seed: int | None = None, out: str | None = None) -> dict:
    """Validate ``cfg`` and fill in defaults; returns a fully explicit copy."""
    unknown = set(cfg) - RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "network" not in cfg or "dataset" not in cfg:
        raise ConfigError("config needs 'network' and 'dataset'")
    run_seed = cfg.get("seed", 0)
    if os.environ.get("TSSNN_SEED"):
        try:
            run_seed = int(os.environ["TSSNN_SEED"])
        except ValueError:
            raise ConfigError(f"TSSNN_SEED={os.environ['TSSNN_SEED']!r} is not an integer") from None
    if seed is not None:
        run_seed = seed
    train_cfg = TrainConfig.from_dict({**cfg.get("train", {}), "seed": int(run_seed)})
    shift = ShiftConfig.from_dict(cfg.get("shift", {}))
    lif = LIFParams(**cfg.get("lif", {}))
    ds = dict(cfg["dataset"])
    if "train_dir" not in ds:
        test_spc = ds.pop("test_samples_per_class", None)
        synth = SyntheticTaskSpec.from_dict(ds)
        ds = synth.to_dict()
        ds["test_samples_per_class"] = synth.samples_per_class if test_spc is None else int(test_spc)
    elif set(ds) - {"train_dir", "test_dir", "class_count"}:
        raise ConfigError(f"unknown tensor-dataset keys {sorted(set(ds) - {'train_dir', 'test_dir', 'class_count'})}")
    resolved = {
        "network": cfg["network"],
        "network_options": dict(cfg.get("network_options", {})),
        "lif": lif.to_dict(),
        "shift": shift.to_dict(),
        "train": train_cfg.to_dict(),
        "dataset": ds,
        "seed": int(run_seed),
        "out": out if out is not None else cfg.get("out", "runs/default"),
    }
    infer_shapes(network_spec(resolved))  # fail early on bad network settings
    return resolved


def config_hash(resolved: dict) -> str:
    body = {k: v for k, v in resolved.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def load_datasets(resolved: dict) -> tuple[Dataset, Dataset]:
    ds = dict(resolved["dataset"])
    if "train_dir" in ds:
        k = ds.get("class_count")
        train_set = load_tensor_dataset(ds["train_dir"], "train", k)
        test_set = load_tensor_dataset(ds["test_dir"], "test", k) if ds.get("test_dir") else Dataset([], "test", k)
        return train_set, test_set
    test_spc = ds.pop("test_samples_per_class")
    spec = SyntheticTaskSpec.from_dict(ds)
    test_spec = dataclasses.replace(spec, samples_per_class=test_spc)
    return generate(spec, "train"), generate(test_spec, "test")


def _input_shape(resolved: dict) -> tuple:
    ds = resolved["dataset"]
    if "train_dir" in ds:
        train_set = load_tensor_dataset(ds["train_dir"], "train", ds.get("class_count"))
        if not len(train_set):
            raise ConfigError("training directory is empty")
        return train_set.sample_shape, ds.get("class_count") or train_set.class_count
    return (ds["T"], ds["C"], ds["H"], ds["W"]), ds["class_count"]


def network_spec(resolved: dict) -> NetworkSpec:
    net = resolved["network"]
    shift = ShiftConfig.from_dict(resolved["shift"])
    if isinstance(net, dict):
        spec = NetworkSpec.from_dict(net)
        for layer in spec.layers:
            if layer.kind == "tshift":
                layer.shift = shift
        return spec
    if not isinstance(net, str):
        raise ConfigError("network must be a preset name, a spec object or a spec path")
    shape, classes = _input_shape(resolved)
    opts = dict(resolved.get("network_options", {}))
    if "widths" in opts:
        opts["widths"] = tuple(opts["widths"])
    return preset(net, shape, classes, shift=shift, lif=LIFParams(**resolved["lif"]), **opts)


def run(resolved: dict, log=None) -> dict:
    """Train per ``resolved`` and write the run directory. Returns a summary."""
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    spec = network_spec(resolved)
    train_set, test_set = load_datasets(resolved)
    cfg = TrainConfig.from_dict(resolved["train"])
    net = build(spec, resolved["seed"])
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    metrics_path = out / "metrics.jsonl"
    timing_path = out / "timing.jsonl"
    metrics_path.write_text("")
    timing_path.write_text("")
    t_start = time.perf_counter()

    def on_epoch(m, seconds):
        with metrics_path.open("a") as fh:
            fh.write(metrics_line(m) + "\n")
        with timing_path.open("a") as fh:
            fh.write(json.dumps({"epoch": m["epoch"], "seconds": seconds}) + "\n")
        if log is not None:
            log(f"epoch {m['epoch']:3d}  lr {m['lr']:.4f}  loss {m['loss']:.4f}  "
                f"train {m['train_acc']:.3f}  test {m['test_acc']}")

    history = train(net, train_set, cfg, test_set, on_epoch=on_epoch)
    # the output directory is left out so reruns elsewhere give identical bytes
    portable = {k: v for k, v in resolved.items() if k != "out"}
    meta = {"epoch": cfg.epochs, "seed": resolved["seed"], "config_hash": config_hash(resolved),
            "run_config": portable, "split_redraw": SPLIT_REDRAW}
    save_checkpoint(net, out / "checkpoint.tsck", meta)
    final = history[-1] if history else {}
    return {"out": str(out), "epochs": len(history), "final_test_acc": final.get("test_acc"),
            "final_train_acc": final.get("train_acc"), "seconds": time.perf_counter() - t_start}


ABLATION_AXES = ("ck", "split", "directions", "apply_mode")


def ablation_point(base: dict, axis: str, value: str) -> dict:
    """Return a copy of ``base`` with one ablation axis set to ``value``."""
    cfg = json.loads(json.dumps(base))
    shift = dict(cfg.get("shift", {}))
    if axis == "ck":
        try:
            shift["c_k"] = int(value)
        except ValueError:
            raise ConfigError(f"c_k value {value!r} is not an integer") from None
    elif axis == "split":
        if value not in ("random", "fixed"):
            raise ConfigError(f"split value must be random or fixed, got {value!r}")
        shift["split_strategy"] = value
    elif axis == "directions":
        from .tshift import parse_directions
        shift["directions"] = list(parse_directions(value))
    elif axis == "apply_mode":
        modes = {"train_only": False, "consistent": True}
        if value not in modes:
            raise ConfigError(f"apply_mode value must be train_only or consistent, got {value!r}")
        shift["apply_at_inference"] = modes[value]
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")
    cfg["shift"] = shift
    return cfg
