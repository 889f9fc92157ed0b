import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ALL_TRIPLES, central_difference, shift_oracle
from tssnn import tensor as tt
from tssnn.errors import ConfigError, DimensionError
from tssnn.tensor import GradTape, Tensor
from tssnn.tshift import (ShiftConfig, SplitPoints, draw_split, fold_size, format_directions, parse_directions,
                          residual_shift, temporal_shift, temporal_shift_slices, ts_module_forward)


def test_fold_size_cases():
    assert fold_size(128, 32) == 4
    assert fold_size(16, 32) == 1
    with pytest.raises(ConfigError, match="100.*32"):
        fold_size(100, 32)


def test_fixed_split():
    assert draw_split(32, "fixed") == SplitPoints(10, 21, 32)


def test_random_split_on_three_groups():
    rng = np.random.default_rng(0)
    assert all(draw_split(3, "random", rng) == SplitPoints(1, 2, 3) for _ in range(50))


def test_random_split_always_admissible():
    rng = np.random.default_rng(1)
    pairs = [draw_split(32, "random", rng) for _ in range(10000)]
    assert all(0 < p.g1 < p.g2 < 32 for p in pairs)
    assert len({(p.g1, p.g2) for p in pairs}) > 400


@pytest.mark.parametrize("g1,g2,ck", [(0, 1, 3), (2, 2, 4), (2, 1, 4), (1, 4, 4)])
def test_split_points_reject_bad_order(g1, g2, ck):
    with pytest.raises(ConfigError):
        SplitPoints(g1, g2, ck)


def test_draw_split_needs_three_groups():
    with pytest.raises(ConfigError):
        draw_split(2, "fixed")


def test_worked_example():
    x = np.array([[10 * t + c for c in range(3)] for t in range(3)], dtype=np.float32).reshape(3, 3, 1, 1)
    z = temporal_shift(Tensor(x), SplitPoints(1, 2, 3), ShiftConfig(c_k=3))
    assert list(z.data[:, 0, 0, 0]) == [10, 20, 0]
    assert list(z.data[:, 1, 0, 0]) == [0, 1, 11]
    assert list(z.data[:, 2, 0, 0]) == [2, 12, 22]


def test_single_timestep_keeps_only_unshifted_segment():
    x = np.random.default_rng(0).normal(size=(1, 6, 2, 2)).astype(np.float32)
    z = temporal_shift(Tensor(x), SplitPoints(1, 2, 3), ShiftConfig(c_k=3)).data
    assert not z[:, :4].any() and np.array_equal(z[:, 4:], x[:, 4:])


def test_identity_directions():
    x = np.random.default_rng(0).normal(size=(4, 6, 2, 2)).astype(np.float32)
    z = temporal_shift(Tensor(x), SplitPoints(1, 2, 3), ShiftConfig(c_k=3, directions=("none",) * 3))
    assert np.array_equal(z.data, x)


@given(st.integers(1, 5), st.integers(1, 3), st.sampled_from([3, 4, 6, 8, 12, 16]), st.data())
@settings(max_examples=200, deadline=None)
def test_kernel_and_slice_routes_match_oracle(T, N, C, data):
    ck = data.draw(st.sampled_from([k for k in (3, 4, 6, 8, 16, 32) if C % min(k, C) == 0]))
    eff = min(ck, C)
    g1 = data.draw(st.integers(1, eff - 2))
    g2 = data.draw(st.integers(g1 + 1, eff - 1))
    dirs = data.draw(st.sampled_from(ALL_TRIPLES))
    cfg = ShiftConfig(c_k=ck, directions=dirs)
    x = np.random.default_rng(T * 31 + C).normal(size=(T, N, C, 2, 2)).astype(np.float32)
    z = temporal_shift(Tensor(x), SplitPoints(g1, g2, eff), cfg).data
    z2 = temporal_shift_slices(Tensor(x), SplitPoints(g1, g2, eff), cfg).data
    expected = np.stack([shift_oracle(x[:, n], g1, g2, ck, dirs) for n in range(N)], axis=1)
    assert z.tobytes() == expected.tobytes()
    assert z2.tobytes() == expected.tobytes()


@pytest.mark.parametrize("dirs", ALL_TRIPLES[::4])
def test_shift_adjoint_is_transpose(dirs):
    rng = np.random.default_rng(3)
    cfg = ShiftConfig(c_k=4, directions=dirs)
    x = rng.normal(size=(4, 8, 2, 2))
    y = rng.normal(size=(4, 8, 2, 2))
    xt = Tensor(x, requires_grad=True)
    with GradTape():
        loss = tt.sum(tt.mul(temporal_shift(xt, SplitPoints(1, 3, 4), cfg), Tensor(y)))
    tt.backward(loss)
    # <S x, y> = <x, S^T y>
    assert np.isclose(float(loss.data), float(np.sum(x * xt.grad)))


def test_residual_shift_cases():
    x = Tensor(np.ones((2, 3, 1, 1), np.float32))
    assert np.array_equal(residual_shift(x, Tensor(np.full((2, 3, 1, 1), 7.0, np.float32)), 0.0).data, x.data)
    assert np.all(residual_shift(x, x, 0.5).data == 1.5)
    with pytest.raises(DimensionError):
        residual_shift(x, Tensor(np.ones((2, 4, 1, 1), np.float32)), 0.5)


def test_module_infer_identity_when_disabled():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 6, 2, 2)).astype(np.float32))
    out = ts_module_forward(x, ShiftConfig(c_k=3, apply_at_inference=False), 0.5, mode="infer")
    assert out is x


def test_module_no_shift_scales_input():
    x = np.random.default_rng(0).normal(size=(3, 6, 2, 2)).astype(np.float32)
    cfg = ShiftConfig(c_k=3, directions=("none",) * 3)
    out = ts_module_forward(Tensor(x), cfg, np.float32(0.5), mode="train", rng=np.random.default_rng(0))
    assert np.array_equal(out.data, np.float32(0.5) * x + x)
    assert np.allclose(out.data, 1.5 * x)


def test_module_zero_input_gives_zero():
    out = ts_module_forward(Tensor(np.zeros((3, 6, 2, 2), np.float32)), ShiftConfig(c_k=3), 0.5,
                            rng=np.random.default_rng(0))
    assert not out.data.any()


def test_module_random_strategy_needs_generator():
    with pytest.raises(ConfigError):
        ts_module_forward(Tensor(np.zeros((3, 6, 1, 1))), ShiftConfig(c_k=3), 0.5)


def test_direction_parsing_round_trip():
    assert parse_directions("L-R-0") == ("left", "right", "none")
    assert parse_directions("0-L-R") == ("none", "left", "right")
    assert parse_directions("left,none,right") == ("left", "none", "right")
    for dirs in ALL_TRIPLES:
        assert parse_directions(format_directions(dirs)) == dirs
    with pytest.raises(ConfigError):
        parse_directions("L-R")


def test_config_dict_round_trip_and_unknown_keys():
    cfg = ShiftConfig(c_k=8, split_strategy="fixed", directions=("right", "left", "none"), alpha_init=0.2)
    assert ShiftConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ShiftConfig.from_dict({"ck": 8})


def test_alpha_gradient_matches_finite_difference():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(3, 6, 2, 2)), requires_grad=True)
    alpha = Tensor(np.asarray(0.3), requires_grad=True)
    proj = rng.normal(size=x.shape)
    split, cfg = SplitPoints(1, 2, 3), ShiftConfig(c_k=3)

    def value():
        return float(np.sum(residual_shift(x, temporal_shift(x, split, cfg), alpha).data * proj))

    with GradTape():
        loss = tt.sum(tt.mul(residual_shift(x, temporal_shift(x, split, cfg), alpha), Tensor(proj)))
    tt.backward(loss)
    num = central_difference(value, alpha.data, 0, 1e-6)
    assert abs(float(alpha.grad) - num) <= 1e-8 * max(1, abs(num))
