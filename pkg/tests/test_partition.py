import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partialnet.nn import ArchitectureSpec, ParamInfo, build_model, param_layout
from partialnet.optim import OptimConfig, OptimState, train_epoch
from partialnet.partition import (MaskSet, PartitionSpec, apply_fixed_mode, build_masks, count_params,
                                  learned_count, match_fraction, param_mask, slice_count)
from partialnet.tensor import Rng

W16 = ParamInfo("c.weight", (16, 8, 3, 3), "block1", "conv_weight")
W8 = ParamInfo("c.weight", (8, 3, 3, 3), "block1", "conv_weight")
B8 = ParamInfo("c.bias", (8,), "block1", "conv_bias")


def test_filter_floor():
    assert param_mask(W16, PartitionSpec.fractional(0.07)).reshape(16, -1).all(1).sum() == 1
    assert not param_mask(W16, PartitionSpec.fractional(0.06)).any()


def test_hand_count_with_bias():
    spec = PartitionSpec.fractional(0.5)
    assert learned_count(W8, spec) + learned_count(B8, spec) == 4 * 3 * 3 * 3 + 4 == 112
    m = build_masks([W8, B8], spec)
    assert m.effective == 112
    assert m["c.weight"][:4].all() and not m["c.weight"][4:].any()


def test_slice_count_exact_products():
    assert slice_count(0.1, 10) == 1
    assert slice_count(1 - 0.9, 10) == 1
    assert slice_count(0.3, 10) == 3


def test_integer_k():
    spec = ArchitectureSpec("simple-cnn", 3, 1, 4, (3, 8, 8))
    masks = build_masks(build_model(spec, Rng(0)), PartitionSpec.integer_k(1))
    for info in param_layout(spec):
        m = masks[info.name]
        if info.role == "conv_weight":
            assert m[0].all() and not m[1:].any()
        elif not info.is_conv:
            assert m.all()


@pytest.mark.parametrize("d", [2, 3, 4])
def test_dim_slices(d):
    m = param_mask(W16, PartitionSpec.fractional(0.5, d))
    n = W16.shape[d - 1]
    idx = [slice(None)] * 4
    idx[d - 1] = slice(0, slice_count(0.5, n, 1 if d >= 3 else 0))
    expect = np.zeros(W16.shape, bool)
    expect[tuple(idx)] = True
    np.testing.assert_array_equal(m, expect)
    assert param_mask(B8, PartitionSpec.fractional(0.5, d)).all()


def test_full_mask_all_true():
    m = build_masks(param_layout(ArchitectureSpec("wide-resnet", 10, 1)), PartitionSpec.full())
    assert m.effective == m.total


def test_mask_set_read_only():
    m = build_masks([W8], PartitionSpec.fractional(0.5))
    with pytest.raises(ValueError):
        m["c.weight"][0] = False
    with pytest.raises(TypeError):
        m["x"] = np.ones(1, bool)


@pytest.mark.parametrize("kw", [dict(kind="fractional", p=1.5), dict(kind="fractional", p=0.5, dim_slice=5),
                                dict(kind="integer_k", k=0), dict(kind="blocks"), dict(kind="nope"),
                                dict(kind="blocks", blocks={"block9"}), dict(fixed_mode="ones")])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        PartitionSpec(**kw)


def test_published_counts():
    wrn4 = ArchitectureSpec("wide-resnet", 28, 4)
    dn = ArchitectureSpec("densenet-bc", 100, 12)
    assert count_params(dn, PartitionSpec.of_blocks("fc"), 100)[1] == pytest.approx(58.3e3, rel=0.02)
    assert count_params(wrn4, PartitionSpec.of_blocks("conv1"))[1] == pytest.approx(7.63e3, rel=0.02)
    assert count_params(wrn4, PartitionSpec.of_blocks("fc"))[1] == pytest.approx(9.77e3, rel=0.02)
    assert count_params(wrn4, PartitionSpec.of_blocks("block2"))[1] == pytest.approx(1.12e6, rel=0.02)
    wrn10 = ArchitectureSpec("wide-resnet", 28, 10)
    assert count_params(wrn10, PartitionSpec.fractional(0.1))[1] == pytest.approx(3.66e6, rel=0.02)


SMALL = [ArchitectureSpec("simple-cnn", 4, 1, 10, (3, 16, 16)), ArchitectureSpec("wide-resnet", 10, 2),
         ArchitectureSpec("densenet-bc", 16, 6, 7)]

partitions = st.one_of(
    st.builds(PartitionSpec.fractional, st.floats(0, 1), st.integers(1, 4)),
    st.builds(PartitionSpec.integer_k, st.integers(1, 80)),
    st.builds(lambda b: PartitionSpec.of_blocks(*b),
              st.sets(st.sampled_from(["conv1", "block1", "block2", "block3", "fc"]), min_size=1)),
    st.just(PartitionSpec.bn_only()), st.just(PartitionSpec.full()))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(SMALL), partitions)
def test_arithmetic_count_matches_masks(arch, spec):
    masks = build_masks(param_layout(arch), spec)
    assert count_params(arch, spec) == (masks.total, masks.effective)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SMALL), st.integers(1, 4), st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_fraction(arch, d, p, q):
    lo, hi = sorted((p, q))
    assert count_params(arch, PartitionSpec.fractional(lo, d))[1] <= count_params(arch, PartitionSpec.fractional(hi, d))[1]


def test_blocks_union():
    arch = ArchitectureSpec("wide-resnet", 16, 2)
    layout = param_layout(arch)
    a = build_masks(layout, PartitionSpec.of_blocks("block1"))
    b = build_masks(layout, PartitionSpec.of_blocks("fc"))
    ab = build_masks(layout, PartitionSpec.of_blocks("block1", "fc"))
    for k in ab:
        np.testing.assert_array_equal(ab[k], a[k] | b[k])


def test_match_fraction_closest():
    arch = SMALL[0]
    target = count_params(arch, PartitionSpec.fractional(0.25, 1))[1]
    q = match_fraction(arch, target, 2)
    gap = abs(count_params(arch, PartitionSpec.fractional(q, 2))[1] - target)
    for p in np.linspace(0, 1, 201):
        assert gap <= abs(count_params(arch, PartitionSpec.fractional(p, 2))[1] - target)


def test_zero_mode_layer_example():
    arch = ArchitectureSpec("simple-cnn", 2, 1, 3, (3, 8, 8))
    model = build_model(arch, Rng(0))
    # first conv: O=16; a width-8 layer is checked by shape arithmetic in test_hand_count_with_bias
    masks = build_masks(model, PartitionSpec.fractional(0.5))
    apply_fixed_mode(model, masks, "zero")
    w = model.params["conv1.conv.weight"].data
    assert np.all(w[8:] == 0) and np.any(w[:8] != 0)


def test_random_mode_leaves_values():
    model = build_model(ArchitectureSpec("simple-cnn", 2, 1, 3, (3, 8, 8)), Rng(0))
    before, _ = model.state()
    apply_fixed_mode(model, build_masks(model, PartitionSpec.fractional(0.3)), "random")
    for k, v in before.items():
        assert v.tobytes() == model.params[k].data.tobytes()


def test_fixed_bn_held_at_identity():
    model = build_model(ArchitectureSpec("simple-cnn", 2, 1, 3, (3, 8, 8)), Rng(0))
    model.params["conv1.bn.weight"].data[...] = 3.0
    masks = build_masks(model, PartitionSpec.of_blocks("fc"))
    # blocks mode learns BN, so use a hand mask that fixes it
    masks = MaskSet({k: (np.zeros_like(m) if k.startswith("conv1.bn") else m) for k, m in masks.items()})
    apply_fixed_mode(model, masks, "random")
    assert np.all(model.params["conv1.bn.weight"].data == 1)
    assert np.all(model.params["conv1.bn.bias"].data == 0)


@pytest.mark.parametrize("spec", [PartitionSpec.fractional(0.3), PartitionSpec.fractional(0.5, 2),
                                  PartitionSpec.integer_k(2), PartitionSpec.of_blocks("block1"),
                                  PartitionSpec.bn_only()])
def test_zero_mode_survives_training(spec, tiny_arch, tiny_task):
    model = build_model(tiny_arch, Rng(0))
    masks = build_masks(model, spec)
    apply_fixed_mode(model, masks, "zero")
    cfg = OptimConfig(lr=0.1, epochs=1, batch_size=8)
    state = OptimState()
    for epoch in range(3):
        train_epoch(model, tiny_task[0], masks, state, cfg, Rng(epoch), epoch)
    for info in model.infos:
        fixed = model.params[info.name].data[~masks[info.name]]
        if info.role == "bn_weight":
            assert np.all(fixed == 1)
        else:
            assert np.all(fixed == 0)
