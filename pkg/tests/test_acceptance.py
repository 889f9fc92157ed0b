"""Acceptance criteria, one test per criterion.

Each test records a short detail string; the conftest hook prints one
PASS/FAIL line per criterion at the end of the run. The desk-scale learning
run takes a couple of minutes on one core.
"""
import json
import struct
import time

import numpy as np
import pytest

from oracles import ALL_TRIPLES, central_difference, lif_forward_mode, shift_oracle, truncated_count
from tssnn import tensor as tt
from tssnn.analysis import REFERENCE_COUNTS
from tssnn.cli import main
from tssnn.data import SyntheticTaskSpec, generate, load_tensor_dataset, save_tensor_dataset
from tssnn.errors import FormatError, IngestionError
from tssnn.formats import decode_tsck, decode_tstn, encode_tsck, encode_tstn, read_tstn, write_tstn
from tssnn.lif import LIFParams, lif_charge, lif_fire, lif_layer_forward, lif_reset, surrogate_grad
from tssnn.network import build, load_checkpoint, preset, save_checkpoint
from tssnn.tensor import GradTape, Tensor
from tssnn.trainer import TrainConfig, decode_logits, evaluate, train
from tssnn.tshift import (ShiftConfig, SplitPoints, draw_split, residual_shift, temporal_shift,
                          temporal_shift_slices, ts_module_forward)


def note(request, text):
    request.node.user_properties.append(("detail", text))


def shift_cases(n=1000, seed=2024):
    """Randomized cases covering every direction triple and both split strategies."""
    rng = np.random.default_rng(seed)
    for i in range(n):
        T = int(rng.integers(1, 6))
        C = int(rng.choice([3, 4, 6, 8, 9, 12, 15, 16]))
        ck = int(rng.choice([k for k in (3, 4, 5, 6, 8, 16, 32) if C % min(k, C) == 0]))
        dirs = ALL_TRIPLES[i % 27]
        strategy = ("fixed", "random")[(i // 27) % 2]
        eff = min(ck, C)
        split = draw_split(eff, strategy, rng)
        H, W = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        size = T * C * H * W
        # distinct nonzero values with some zeros, so every output value identifies its source
        x = rng.permutation(np.arange(1, size + 1)).astype(np.float32)
        x[rng.random(size) < 0.3] = 0
        yield x.reshape(T, C, H, W), split, ShiftConfig(c_k=ck, split_strategy=strategy, directions=dirs)


@pytest.mark.criterion(1, "energy table closure within 0.5%")
def test_energy_table_closure(request, capsys):
    t0 = time.perf_counter()
    code = main(["energy", "--paper-check", "all"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    errors = {}
    for name, row in REFERENCE_COUNTS.items():
        line = next(l for l in out.splitlines() if l.startswith(name + ":"))
        computed = float(line.split("computed ")[1].split(" mJ")[0])
        errors[name] = abs(computed - row["energy_mj"]) / row["energy_mj"]
    note(request, ", ".join(f"{k} {REFERENCE_COUNTS[k]['energy_mj']} mJ err {v:.1e}" for k, v in errors.items())
         + f"; {elapsed:.2f}s")
    assert code == 0
    assert all(e <= 0.005 for e in errors.values())
    assert elapsed < 1.0


@pytest.mark.criterion(2, "shift matches per-coordinate oracle bitwise on 1000 cases")
def test_shift_oracle_equivalence(request):
    t0 = time.perf_counter()
    seen, strategies, mismatches = set(), set(), 0
    for x, split, cfg in shift_cases():
        seen.add(cfg.directions)
        strategies.add(cfg.split_strategy)
        expected = shift_oracle(x, split.g1, split.g2, cfg.c_k, cfg.directions)
        for route in (temporal_shift, temporal_shift_slices):
            if route(Tensor(x), split, cfg).data.tobytes() != expected.tobytes():
                mismatches += 1
    elapsed = time.perf_counter() - t0
    note(request, f"{mismatches} mismatches, {len(seen)} triples, strategies {sorted(strategies)}; {elapsed:.1f}s")
    assert mismatches == 0 and len(seen) == 27 and strategies == {"fixed", "random"}
    assert elapsed < 10.0


@pytest.mark.criterion(3, "shift is a partial permutation with exact nonzero bookkeeping")
def test_shift_conservation(request):
    bad = 0
    for x, split, cfg in shift_cases():
        z = temporal_shift(Tensor(x), split, cfg).data
        nz = z[z != 0]
        values, counts = np.unique(x[x != 0], return_counts=True)
        assert counts.max(initial=1) == 1
        # every nonzero output is one input element, used at most once
        ok = np.isin(nz, values).all() and len(np.unique(nz)) == len(nz)
        lost = truncated_count(x, split.g1, split.g2, cfg.c_k, cfg.directions)
        ok &= np.count_nonzero(z) == np.count_nonzero(x) - lost
        bad += not ok
    note(request, f"{bad} violations over 1000 cases")
    assert bad == 0


@pytest.mark.criterion(4, "gradient checks: shift and alpha, two-neuron LIF oracle, end-to-end network")
def test_gradient_checks(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)

    # (a) shift plus residual recombination, including the alpha gradient
    worst_a = 0.0
    for dirs in ALL_TRIPLES[::3]:
        cfg = ShiftConfig(c_k=4, directions=dirs)
        x = Tensor(rng.normal(size=(4, 2, 8, 2, 2)), requires_grad=True)
        alpha = Tensor(np.asarray(rng.uniform(0.1, 0.9)), requires_grad=True)
        proj = rng.normal(size=x.shape)
        split = SplitPoints(1, 3, 4)

        def value():
            return float(np.sum(residual_shift(x, temporal_shift(x, split, cfg), alpha).data * proj))

        with GradTape():
            loss = tt.sum(tt.mul(residual_shift(x, temporal_shift(x, split, cfg), alpha), Tensor(proj)))
        tt.backward(loss)
        checks = [(alpha, 0)] + [(x, int(i)) for i in rng.choice(x.size, 20, replace=False)]
        for t, i in checks:
            num = central_difference(value, t.data, i, 1e-6)
            ana = float(t.grad.reshape(-1)[i])
            worst_a = max(worst_a, abs(ana - num) / max(abs(num), abs(ana), 1e-12))

    # (b) two LIF neurons over three timesteps against forward-mode tangents
    w = np.array([[0.9, 0.7], [1.1, -0.3]])
    u = np.array([[1.4, 0.2], [0.3, 0.9], [0.8, 1.1]])
    coef = np.array([[1.0, -0.5], [0.3, 2.0], [-1.2, 0.7]])
    worst_b = 0.0
    for fused in (True, False):
        W = Tensor(w.copy(), requires_grad=True)
        with GradTape():
            loss = tt.sum(tt.mul(lif_layer_forward(tt.linear(Tensor(u), W), LIFParams(), fused=fused),
                                 Tensor(coef)))
        tt.backward(loss)
        worst_b = max(worst_b, float(np.abs(W.grad - lif_forward_mode(w, u, coef)).max()))

    # (c) whole mini network with the ramp spike function, 50 random parameters
    spec = preset("mini-plain", (3, 1, 6, 6), 3, widths=(4, 4, 4),
                  shift=ShiftConfig(c_k=4, split_strategy="fixed"), lif=LIFParams(spike_fn="ramp", a=2.0))
    net = build(spec, 1)
    for p in net.parameters():
        p.data = p.data.astype(np.float64)
    xb = rng.uniform(0, 2, (3, 2, 1, 6, 6))
    yb = np.array([0, 2])

    def loss_fn():
        return tt.cross_entropy(decode_logits(net.forward(xb, mode="train", bn_training=True)), yb)

    with GradTape():
        loss = loss_fn()
    tt.backward(loss)
    params = net.parameters()
    offsets = np.cumsum([0] + [p.size for p in params])
    worst_c = 0.0
    for flat in rng.choice(offsets[-1], 50, replace=False):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        p, i = params[k], int(flat - offsets[k])
        num = central_difference(lambda: float(loss_fn().data), p.data, i, 1e-6)
        ana = float(p.grad.reshape(-1)[i])
        worst_c = max(worst_c, abs(ana - num) / max(abs(num), abs(ana), 1e-12))
    elapsed = time.perf_counter() - t0
    note(request, f"(a) {worst_a:.1e} rel, (b) {worst_b:.1e} abs, (c) {worst_c:.1e} rel; {elapsed:.1f}s")
    assert worst_a <= 1e-5 and worst_b <= 1e-6 and worst_c <= 1e-4
    assert elapsed < 30.0


@pytest.mark.criterion(5, "LIF worked examples and binary/reset invariants")
def test_lif_suite(request):
    def one(v):
        return Tensor(np.array([v]))

    p = LIFParams()
    examples = [
        lif_charge(one(0.0), one(0.0), p).data[0] == 0.0,
        lif_charge(one(0.6), one(1.8), LIFParams(tau=2.0)).data[0] == 1.2,
        lif_charge(one(3.3), one(0.7), LIFParams(tau=1.0)).data[0] == 0.7,
        lif_fire(one(1.2), p).data[0] == 1, lif_fire(one(1.0), p).data[0] == 1, lif_fire(one(0.5), p).data[0] == 0,
        np.array_equal(lif_reset(Tensor(np.array([1.2, 3.0])), Tensor(np.ones(2)), p).data, [0, 0]),
        np.array_equal(lif_reset(Tensor(np.array([1.2, 0.3])), Tensor(np.zeros(2)), p).data, [1.2, 0.3]),
        list(surrogate_grad(np.array([1.2, 2.0, 1.5]), p)) == [1.0, 0.0, 0.0],
    ]
    s, state = lif_layer_forward(Tensor(np.array([[2.2]])), p, return_state=True)
    examples.append(s.data[0, 0] == 1 and state.h[0] == 0)
    s, state = lif_layer_forward(Tensor(np.zeros((3, 2, 2, 2))), p, return_state=True)
    examples.append(not s.data.any() and not state.h.any())

    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(100):
        T = int(rng.integers(1, 6))
        x = rng.uniform(-2, 4, (T, 3, 4, 4)).astype(np.float32)
        q = LIFParams(v_reset=float(rng.choice([0.0, -0.5])), tau=float(rng.choice([1.0, 2.0, 4.0])))
        spikes = lif_layer_forward(Tensor(x), q).data
        violations += not set(np.unique(spikes)) <= {0.0, 1.0}
        h = np.full(x.shape[1:], q.v_reset, np.float32)
        for t in range(T):
            v = lif_charge(Tensor(h), Tensor(x[t]), q).data
            h = lif_reset(Tensor(v), Tensor(spikes[t]), q).data
            violations += not np.all(h[spikes[t] == 1] == np.float32(q.v_reset))
            violations += not np.array_equal(spikes[t], (v >= q.v_th).astype(np.float32))
    note(request, f"{sum(examples)}/{len(examples)} examples, {violations} invariant violations")
    assert all(examples) and violations == 0


@pytest.mark.slow
@pytest.mark.criterion(6, "desk-scale learning: resnet20-mini with shift reaches >= 90% test accuracy")
def test_desk_scale_learning(request):
    t0 = time.perf_counter()
    data = SyntheticTaskSpec(task="pulse_position", T=8, C=1, H=8, W=8, class_count=10, noise_std=0.3,
                             samples_per_class=20, seed=0)
    train_set, test_set = generate(data, "train"), generate(data, "test")
    cfg = TrainConfig(epochs=50, seed=0)
    results = {}
    for name, shift in (("shift", ShiftConfig()),
                        ("control", ShiftConfig(directions=("none",) * 3, alpha_init=0.0))):
        net = build(preset("resnet20-mini", (8, 1, 8, 8), 10, shift=shift), cfg.seed)
        hist = train(net, train_set, cfg, test_set)
        results[name] = hist[-1]["test_acc"]
    elapsed = time.perf_counter() - t0
    note(request, f"shift {results['shift']:.3f}, control {results['control']:.3f} (informational); "
                  f"{len(train_set)}/{len(test_set)} samples, {elapsed:.0f}s")
    assert len(train_set) == 200 and len(test_set) == 200
    assert results["shift"] >= 0.90
    assert elapsed < 15 * 60


@pytest.mark.criterion(7, "single-timestep shift scales the unshifted segment by (1 + alpha)")
def test_single_timestep_scaling(request):
    rng = np.random.default_rng(7)
    checked = 0
    for alpha in (0.0, 0.2, 0.5):
        for dirs in ALL_TRIPLES:
            if "none" not in dirs:
                continue
            cfg = ShiftConfig(c_k=4, directions=dirs)
            x = (rng.random((1, 8, 3, 3)) < 0.4).astype(np.float32)
            a = np.float32(alpha)
            out = ts_module_forward(Tensor(x), cfg, a, mode="train", split=SplitPoints(1, 3, 4)).data
            bands = [(0, 2), (2, 6), (6, 8)]
            for (lo, hi), d in zip(bands, dirs):
                want = (np.float32(1) + a) * x[:, lo:hi] if d == "none" else x[:, lo:hi]
                assert out[:, lo:hi].tobytes() == want.tobytes()
                checked += 1
    note(request, f"{checked} segments bit-exact for alpha in (0, 0.2, 0.5)")


@pytest.mark.criterion(8, "determinism: repeated training runs give identical metrics and checkpoints")
def test_training_determinism(request, tmp_path):
    cfg = {
        "network": "resnet20-mini",
        "network_options": {"widths": [8, 16, 16]},
        "dataset": {"task": "pulse_position", "T": 4, "class_count": 4, "samples_per_class": 3, "noise_std": 0.3},
        "train": {"epochs": 3, "batch_size": 4},
        "shift": {"c_k": 8},
        "seed": 3,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert main(["train", str(path), "--out", str(d), "--quiet"]) == 0
    same = {n: (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in ("metrics.jsonl", "checkpoint.tsck")}
    note(request, ", ".join(f"{n} {'identical' if v else 'differs'}" for n, v in same.items()))
    assert all(same.values())


@pytest.mark.criterion(9, "format round trips are byte-stable and corruption is rejected")
def test_format_round_trips(request, tmp_path):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 4, 5, 6)).astype(np.float32)
    write_tstn(tmp_path / "a.tstn", x)
    write_tstn(tmp_path / "b.tstn", read_tstn(tmp_path / "a.tstn"))
    tstn_ok = (tmp_path / "a.tstn").read_bytes() == (tmp_path / "b.tstn").read_bytes()

    net = build(preset("resnet20-mini", (4, 1, 8, 8), 4, widths=(8, 16, 16)), 0)
    save_checkpoint(net, tmp_path / "a.tsck", {"epoch": 2})
    back, _ = load_checkpoint(tmp_path / "a.tsck")
    save_checkpoint(back, tmp_path / "b.tsck", {"epoch": 2})
    tsck_ok = (tmp_path / "a.tsck").read_bytes() == (tmp_path / "b.tsck").read_bytes()

    rejected = 0
    good_tstn, good_tsck = encode_tstn(x), encode_tsck({"w": x}, {"k": 1})
    corrupt_tstn = [b"XXXX" + good_tstn[4:], good_tstn[:4] + struct.pack("<I", 7) + good_tstn[8:],
                    good_tstn[:12] + struct.pack("<I", 99) + good_tstn[16:], good_tstn[:30]]
    corrupt_tsck = [b"XXXX" + good_tsck[4:], good_tsck[:8] + struct.pack("<I", 3) + good_tsck[12:],
                    good_tsck[:-5], good_tsck + b"\x00"]
    for buf in corrupt_tstn:
        with pytest.raises(FormatError):
            decode_tstn(buf)
        rejected += 1
    for buf in corrupt_tsck:
        with pytest.raises(FormatError):
            decode_tsck(buf)
        rejected += 1
    (tmp_path / "bad.tsck").write_bytes(good_tsck[:-5])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.tsck")
    ds = generate(SyntheticTaskSpec(T=2, class_count=2, samples_per_class=2))
    save_tensor_dataset(ds, tmp_path / "ds")
    victim = sorted((tmp_path / "ds").glob("*.tstn"))[-1]
    victim.write_bytes(victim.read_bytes()[:-4])
    with pytest.raises(IngestionError, match=victim.name):
        load_tensor_dataset(tmp_path / "ds")
    note(request, f"TSTN {'stable' if tstn_ok else 'unstable'}, TSCK {'stable' if tsck_ok else 'unstable'}, "
                  f"{rejected + 2} corruptions rejected")
    assert tstn_ok and tsck_ok


@pytest.mark.criterion(10, "firing rates equal independent recounts; overall rate is count-weighted")
def test_firing_rate_accounting(request):
    spec = preset("resnet20-mini", (4, 1, 8, 8), 4, widths=(8, 16, 16))
    net = build(spec, 0)
    data = SyntheticTaskSpec(T=4, class_count=4, samples_per_class=15, noise_std=0.3)
    train(net, generate(data, "train"), TrainConfig(epochs=2, seed=0))
    test_set = generate(data, "test")
    result = evaluate(net, test_set, mode="infer", seed=4, batch_size=50)

    X, _ = test_set.arrays()
    rng = np.random.default_rng(np.random.SeedSequence([4, 7]))
    spikes, numel = {}, {}
    for start in range(0, len(X), 50):
        batch = np.ascontiguousarray(X[start:start + 50].transpose(1, 0, 2, 3, 4))
        net.forward(batch, mode="infer", rng=rng, bn_training=False, keep_outputs=True)
        for i, out in enumerate(net.last_outputs):
            if spec.layers[i].kind == "lif":
                spikes[i] = spikes.get(i, 0) + int(np.sum(out == 1))
                numel[i] = numel.get(i, 0) + int(out.size)
    layers = sorted(spikes)
    recount = [spikes[i] / numel[i] for i in layers]
    weighted = sum(r * numel[i] for r, i in zip(result["firing_rates"], layers)) / sum(numel.values())
    note(request, f"{len(layers)} lif layers, overall rate {result['overall_rate']:.4f}")
    assert result["lif_layers"] == layers
    assert result["firing_rates"] == recount
    assert result["overall_rate"] == pytest.approx(weighted, rel=1e-12, abs=0)
    assert result["overall_rate"] == sum(spikes.values()) / sum(numel.values())
