import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partialnet.data import synth_splits
from partialnet.ensemble import (EnsembleConfig, average_probs, ensemble_report, load_ensemble, member_masks,
                                 member_probs, save_ensemble, train_ensemble)
from partialnet.nn import ArchitectureSpec, build_model
from partialnet.optim import OptimConfig
from partialnet.tensor import Rng

MINI_DENSE = ArchitectureSpec("densenet-bc", 10, 4, 4, (3, 8, 8))


@pytest.fixture(scope="module")
def task():
    return synth_splits(4, 6, 5, (3, 8, 8), 0.1, 0)


@pytest.fixture(scope="module")
def share_ens(task):
    spec = ArchitectureSpec("simple-cnn", 2, 1, 4, (3, 8, 8))
    cfg = EnsembleConfig(3, "share_conv", 0.9, 1, 1)
    return train_ensemble(spec, task[0], cfg, OptimConfig(batch_size=8))


def test_average_example():
    avg = average_probs([[[0.8, 0.2]], [[0.4, 0.6]]])
    np.testing.assert_allclose(avg, [[0.6, 0.4]])
    assert avg.argmax(1).tolist() == [0]


@settings(max_examples=30)
@given(st.integers(2, 6), st.randoms(use_true_random=False))
def test_average_permutation_invariant(m, rnd):
    probs = np.random.default_rng(rnd.randint(0, 2 ** 31)).dirichlet(np.ones(3), size=(m, 4))
    order = list(range(m))
    rnd.shuffle(order)
    np.testing.assert_allclose(average_probs(probs), average_probs(probs[order]), rtol=1e-12)


def test_identical_members_average_to_member():
    p = np.random.default_rng(0).dirichlet(np.ones(5), size=7)
    np.testing.assert_allclose(average_probs([p, p, p]), p)


def test_share_conv_filter_count():
    from partialnet.nn import ParamInfo

    class Fake:
        infos = [ParamInfo("c.weight", (10, 3, 3, 3), "block1", "conv_weight"),
                 ParamInfo("c.bias", (10,), "block1", "conv_bias"),
                 ParamInfo("bn.weight", (10,), "block1", "bn_weight"),
                 ParamInfo("fc.weight", (2, 10), "fc", "fc_weight")]

    m = member_masks(Fake, EnsembleConfig(2, "share_conv", 0.9))
    assert m["c.weight"].reshape(10, -1).all(1).sum() == 1 and m["c.weight"].sum() == 27
    assert m["c.bias"].sum() == 1 and not m["bn.weight"].any() and m["fc.weight"].all()


@pytest.mark.parametrize("kw", [dict(size=1), dict(member_kind="half"), dict(member_kind="share_conv"),
                                dict(size=2, seeds=[1, 1])])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        EnsembleConfig(**kw)


def test_fc_only_delta_is_fc(task):
    model = build_model(MINI_DENSE, Rng(0))
    fc = sum(i.size for i in model.infos if i.is_fc)
    ens = train_ensemble(MINI_DENSE, task[0], EnsembleConfig(2, "fc_only", None, 0, 1), OptimConfig(batch_size=8))
    assert all(m.size == fc for m in ens.members)
    assert ens.stored_params == model.num_params + 2 * fc


def test_full_members_store_everything(task):
    spec = ArchitectureSpec("simple-cnn", 1, 1, 4, (3, 8, 8))
    ens = train_ensemble(spec, task[0], EnsembleConfig(2, "full", None, 0, 1), OptimConfig(batch_size=8))
    n = build_model(spec, Rng(0)).num_params
    assert [m.size for m in ens.members] == [n, n]
    assert ens.stored_params == 3 * n


def test_accounting_identity(share_ens):
    assert share_ens.stored_params == share_ens.backbone_size + sum(m.size for m in share_ens.members)
    assert all(m.size == share_ens.masks.effective for m in share_ens.members)


def test_backbone_shared_bitwise(share_ens):
    params = [share_ens.member_params(i) for i in range(len(share_ens.members))]
    for name, base in share_ens.backbone.items():
        fixed = ~share_ens.masks[name]
        for p in params:
            assert p[name][fixed].tobytes() == base[fixed].tobytes()
    # members differ on their relearned entries
    assert not np.array_equal(params[0]["fc.weight"], params[1]["fc.weight"])


def test_report(share_ens, task):
    rep = ensemble_report(share_ens, task[1])
    assert len(rep.member_accuracies) == 3
    assert rep.mean_accuracy == pytest.approx(np.mean(rep.member_accuracies))
    probs = member_probs(share_ens, task[1].images)
    assert probs.shape == (3, len(task[1]), 4)
    np.testing.assert_allclose(probs.sum(-1), 1.0)


def test_save_load_round_trip(share_ens, task, tmp_path):
    save_ensemble(share_ens, tmp_path)
    loaded = load_ensemble(tmp_path)
    assert loaded.stored_params == share_ens.stored_params
    assert [m.seed for m in loaded.members] == [m.seed for m in share_ens.members]
    for i in range(3):
        a, b = share_ens.member_params(i), loaded.member_params(i)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    np.testing.assert_array_equal(member_probs(loaded, task[1].images), member_probs(share_ens, task[1].images))
