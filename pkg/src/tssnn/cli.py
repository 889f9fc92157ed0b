"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, runner
from .data import SyntheticTaskSpec, generate, load_tensor_dataset, save_tensor_dataset
from .errors import (ConfigError, ContractError, DimensionError, FormatError, IngestionError, TrainingError)
from .formats import read_tstn, write_tstn
from .network import NetworkSpec, load_checkpoint
from .tensor import Tensor
from .trainer import evaluate
from .tshift import ShiftConfig, SplitPoints, fold_size, format_directions, parse_directions, residual_shift, temporal_shift

USAGE_ERRORS = (ConfigError, ContractError, DimensionError, FormatError, IngestionError, FileNotFoundError)
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _err(msg: str) -> None:
    print(f"tssnn: error: {msg}", file=sys.stderr)


def cmd_train(args) -> int:
    cfg = runner.load_config(args.config)
    resolved = runner.resolve(cfg, seed=args.seed, out=args.out)
    summary = runner.run(resolved, log=None if args.quiet else print)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _load_eval_dataset(arg, meta: dict, class_count: int):
    if arg is None:
        rc = meta.get("run_config")
        if not rc:
            raise ConfigError("checkpoint carries no run config; pass --dataset")
        return runner.load_datasets(rc)[1]
    path = Path(arg)
    if path.is_dir():
        return load_tensor_dataset(path, "test", class_count)
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path}")
    d = json.loads(path.read_text())
    split = d.pop("split", "test")
    d.pop("test_samples_per_class", None)
    return generate(SyntheticTaskSpec.from_dict(d), split)


def cmd_eval(args) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    if args.apply_at_inference is not None:
        flag = args.apply_at_inference == "true"
        for layer in net.spec.layers:
            if layer.kind == "tshift":
                layer.shift = ShiftConfig.from_dict({**layer.shift.to_dict(), "apply_at_inference": flag})
    dataset = _load_eval_dataset(args.dataset, meta, net.spec.class_count)
    if len(dataset) and dataset.sample_shape != net.spec.input_shape:
        raise DimensionError(f"dataset samples {dataset.sample_shape} do not match checkpoint input "
                             f"{net.spec.input_shape}")
    seed = args.seed if args.seed is not None else int(meta.get("seed", 0))
    result = evaluate(net, dataset, mode=args.mode, seed=seed)
    result["mode"] = args.mode
    result["apply_at_inference"] = [l.shift.apply_at_inference for l in net.spec.layers if l.kind == "tshift"]
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"eval_{args.mode}.json")
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(f"accuracy {result['accuracy']:.4f} ({result['count']} samples, mode {args.mode})")
    for idx, rate in zip(result.get("lif_layers", []), result["firing_rates"]):
        print(f"  layer {idx:3d} lif  firing rate {rate:.4f}")
    print(f"  overall firing rate {result['overall_rate']:.4f}")
    return EXIT_OK


def cmd_shift(args) -> int:
    x = read_tstn(args.input)
    cfg = ShiftConfig(c_k=args.ck, split_strategy="fixed", directions=parse_directions(args.directions))
    try:
        C = x.shape[1]
        split = SplitPoints(args.g1, args.g2, C // fold_size(C, args.ck))
    except ConfigError as exc:
        msg = str(exc)
        if "0 < g1 < g2 < C_k" not in msg:
            msg += " (required: 0 < g1 < g2 < C_k and C divisible by C_k)"
        raise ConfigError(msg) from None
    z = temporal_shift(Tensor(x), split, cfg)
    if args.alpha is not None:
        z = residual_shift(Tensor(x), z, np.float32(args.alpha))
    write_tstn(args.output, z.data)
    return EXIT_OK


def _spec_and_params(path: Path):
    if path.suffix == ".tsck":
        net, _ = load_checkpoint(path)
        return net.spec, net.param_count()
    d = json.loads(path.read_text())
    if "network" in d and "dataset" in d:
        spec = runner.network_spec(runner.resolve(d))
    else:
        spec = NetworkSpec.from_dict(d)
    from .network import build
    return spec, build(spec, 0).param_count()


def _read_rates(path: Path) -> dict:
    d = json.loads(path.read_text())
    if isinstance(d, list):
        return {"layer_activity": d}
    if "layer_activity" in d:
        return d
    if "rates" in d:
        return {"layer_activity": d["rates"]}
    raise ConfigError(f"{path}: expected a list of rates or an object with 'layer_activity' or 'rates'")


def cmd_energy(args) -> int:
    if args.paper_check:
        names = sorted(analysis.REFERENCE_COUNTS) if args.paper_check == "all" else [args.paper_check]
        checks = [analysis.paper_check(n) for n in names]
        cols = [(c["dataset"], {**c, "energy_mj": c["computed_mj"]}) for c in checks]
        print(analysis.render_table(cols))
        ok = True
        for c in checks:
            good = c["relative_error"] <= 0.005
            ok &= good
            print(f"{c['name']}: computed {c['computed_mj']:.3f} mJ, published {c['energy_mj']:.3f} mJ, "
                  f"relative error {c['relative_error']:.2e} {'PASS' if good else 'FAIL'}")
        if args.json:
            Path(args.json).write_text(json.dumps(checks, indent=2, sort_keys=True) + "\n")
        return EXIT_OK if ok else EXIT_RUNTIME
    if not args.network:
        raise ConfigError("pass a network spec or checkpoint, or --paper-check")
    if not args.rates:
        raise ConfigError("missing --rates (a JSON list of per-layer a_l or an eval result)")
    spec, params = _spec_and_params(Path(args.network))
    rates = _read_rates(Path(args.rates))
    report = analysis.report_from_rates(spec, rates["layer_activity"], params,
                                        firing_rates=rates.get("firing_rates", []),
                                        overall_rate=rates.get("overall_rate", 0.0))
    d = report.to_dict()
    print(analysis.render_table([("network", {"acs": d["total_ac"], "macs": d["total_mac"], "flops": d["flops"],
                                              "params": d["params"], "energy_mj": d["energy_mj"]})]))
    print(f"({report.flops_convention}; ANN-equivalent energy {report.ann_energy_j * 1e3:.6f} mJ)")
    text = json.dumps(d, indent=2, sort_keys=True)
    if args.json:
        Path(args.json).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _run_point(payload):
    resolved = payload
    return runner.run(resolved)


def cmd_ablate(args) -> int:
    base = runner.load_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    root = Path(args.out or base.get("out", "runs/ablate"))
    points = []
    for v in values:
        cfg = runner.ablation_point(base, args.axis, v)
        label = format_directions(parse_directions(v)) if args.axis == "directions" else v
        points.append((v, runner.resolve(cfg, seed=args.seed, out=str(root / f"{args.axis}={label}"))))
    if args.parallel > 1:
        with ProcessPoolExecutor(args.parallel) as pool:
            summaries = list(pool.map(_run_point, [p for _, p in points]))
    else:
        summaries = []
        for v, p in points:
            print(f"[{args.axis}={v}] -> {p['out']}")
            summaries.append(runner.run(p))
    root.mkdir(parents=True, exist_ok=True)
    with (root / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "final_accuracy"])
        for (v, _), s in zip(points, summaries):
            w.writerow([v, s["final_test_acc"]])
    print((root / "summary.csv").read_text(), end="")
    return EXIT_OK


def cmd_export_data(args) -> int:
    d = json.loads(Path(args.spec).read_text())
    split = d.pop("split", "train")
    d.pop("test_samples_per_class", None)
    save_tensor_dataset(generate(SyntheticTaskSpec.from_dict(d), split), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tssnn", description="Temporal-shift spiking networks")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--dataset", help="synthetic dataset JSON or a TSTN directory (default: run's test split)")
    e.add_argument("--mode", choices=("train", "infer"), default="infer")
    e.add_argument("--apply-at-inference", choices=("true", "false"))
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("shift", help="apply the temporal shift to a TSTN tensor")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--ck", type=int, default=32)
    s.add_argument("--g1", type=int, required=True)
    s.add_argument("--g2", type=int, required=True)
    s.add_argument("--directions", default="left,right,none")
    s.add_argument("--alpha", type=float)
    s.set_defaults(func=cmd_shift)

    g = sub.add_parser("energy", help="MAC/AC energy report")
    g.add_argument("network", nargs="?", help="NetworkSpec JSON, run config or .tsck checkpoint")
    g.add_argument("--rates", help="JSON list of per conv/linear layer a_l, or an eval result file")
    g.add_argument("--paper-check", choices=sorted(analysis.REFERENCE_COUNTS) + ["all"])
    g.add_argument("--json", help="write the report JSON here")
    g.set_defaults(func=cmd_energy)

    a = sub.add_parser("ablate", help="sweep one shift setting")
    a.add_argument("config")
    a.add_argument("--axis", required=True, choices=runner.ABLATION_AXES)
    a.add_argument("--values", required=True)
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    a.add_argument("--parallel", type=int, default=1)
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-data", help="write a synthetic dataset as TSTN files")
    x.add_argument("spec")
    x.add_argument("out")
    x.set_defaults(func=cmd_export_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        _err(str(exc))
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        _err(f"invalid JSON: {exc}")
        return EXIT_USAGE
    except TrainingError as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
