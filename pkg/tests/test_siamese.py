import numpy as np
import pytest

from conftest import fd_gradient, rel_err
from privsplit.data import Dataset, SynthConfig, generate, split_train_test
from privsplit.errors import PairSamplingError
from privsplit.nn import Dense, TrainConfig, backward, accuracy, init_network, train_classifier
from privsplit.siamese import (SiameseConfig, clustering_ratio, contrastive_loss, finetune_siamese,
                               mean_pair_distance, pair_loss_and_grads, sample_pairs)


def test_identical_similar_pair_is_zero():
    loss, g1, g2 = contrastive_loss([1.0, 2.0], [1.0, 2.0], True, 1.0)
    assert loss == 0.0
    assert not g1.any() and not g2.any()


def test_three_four_five():
    assert contrastive_loss([0, 0], [3, 4], True, 1.0)[0] == 25.0
    assert contrastive_loss([0, 0], [3, 4], False, 6.0)[0] == 1.0
    assert contrastive_loss([0, 0], [3, 4], False, 5.0)[0] == 0.0


def test_coincident_dissimilar_pair_has_zero_subgradient():
    loss, g1, _ = contrastive_loss([1.0, 1.0], [1.0, 1.0], False, 2.0)
    assert loss == 4.0
    assert not g1.any()


@pytest.mark.parametrize("similar", [True, False])
def test_contrastive_gradient_finite_difference(similar):
    rng = np.random.default_rng(3)
    f1 = rng.standard_normal((6, 4)) * 0.3
    f2 = rng.standard_normal((6, 4)) * 0.3
    sim = np.full(6, similar)
    _, g1, g2 = contrastive_loss(f1, f2, sim, 2.0)
    total = lambda: float(np.sum(contrastive_loss(f1, f2, sim, 2.0)[0]))
    assert rel_err(g1, fd_gradient(total, f1)).max() <= 1e-4
    assert rel_err(g2, fd_gradient(total, f2)).max() <= 1e-4


def test_symmetric_pair_branches_receive_equal_gradients():
    f = np.array([0.3, -1.2, 0.5])
    _, g1, g2 = contrastive_loss(f, f.copy(), True, 1.0)
    np.testing.assert_array_equal(g1, g2)

    # same row in both branches: the shared parameters receive the
    # classification gradient of that row twice and nothing else
    net = init_network([3, 5, 4, 2], seed=0)
    x = np.array([[0.2, -0.4, 1.0]])
    _, g_pair = pair_loss_and_grads(net, x, x, [1], [1], [True], SiameseConfig(split_layer=1))
    g_row = backward(net, x, [1])
    for a, b in zip(g_pair, g_row):
        if a is not None:
            np.testing.assert_allclose(a[0], 2 * b[0], rtol=1e-12, atol=1e-15)
            np.testing.assert_allclose(a[1], 2 * b[1], rtol=1e-12, atol=1e-15)


def test_joint_loss_gradient_finite_difference():
    rng = np.random.default_rng(5)
    net = init_network([4, 6, 5, 2], seed=2)
    xa, xb = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    ya, yb = np.array([0, 1, 0, 1, 1]), np.array([0, 0, 1, 1, 0])
    sim = ya == yb
    cfg = SiameseConfig(split_layer=2, margin=1.5, lambda_contrastive=0.7)
    _, grads = pair_loss_and_grads(net, xa, xb, ya, yb, sim, cfg, scale=1.3)
    f = lambda: pair_loss_and_grads(net, xa, xb, ya, yb, sim, cfg, scale=1.3)[0]
    checked = 0
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            for arr, g in ((layer.weight, grads[i][0]), (layer.bias, grads[i][1])):
                assert rel_err(g, fd_gradient(f, arr)).max() <= 1e-4
                checked += arr.size
    assert checked >= 50


def test_two_identities_in_distinct_classes_admit_no_similar_pairs():
    d = generate(SynthConfig(n_identities=2, samples_per_identity=4, dim=2))
    pairs = sample_pairs(d, 10, seed=0, similar_fraction=0.0)
    assert not any(p.similar for p in pairs)
    with pytest.raises(PairSamplingError):
        sample_pairs(d, 10, seed=0)


def test_four_identity_similar_pairs_enumerated():
    d = generate(SynthConfig(n_identities=4, samples_per_identity=3, dim=2))
    pairs = sample_pairs(d, 400, seed=1)
    sim = {frozenset((int(d.ct2[p.index_a]), int(d.ct2[p.index_b]))) for p in pairs if p.similar}
    assert sim == {frozenset({0, 2}), frozenset({1, 3})}
    for p in pairs:
        assert d.ct2[p.index_a] != d.ct2[p.index_b]
        assert p.similar == (d.ct1[p.index_a] == d.ct1[p.index_b])


def test_similar_fraction_exact():
    d = generate(SynthConfig(n_identities=6, samples_per_identity=4, dim=2))
    assert sum(p.similar for p in sample_pairs(d, 1000, seed=2)) == 500
    assert sum(p.similar for p in sample_pairs(d, 7, seed=2, similar_fraction=0.3)) == 2


def test_single_class_has_no_dissimilar_pairs():
    d = Dataset(np.arange(4.0)[:, None], [0, 0, 0, 0], [0, 0, 1, 1], 1, 2)
    with pytest.raises(PairSamplingError):
        sample_pairs(d, 4, seed=0)


@pytest.fixture(scope="module")
def trained():
    d = generate(SynthConfig(n_identities=12, samples_per_identity=20, dim=6, seed=4))
    train, test = split_train_test(d, 0.7, seed=4)
    net = train_classifier(train.x, train.ct1, init_network([6, 16, 8, 2], seed=4),
                           TrainConfig(0.1, 40, 16, 4))
    return train, test, net


def test_lambda_zero_never_touches_contrastive(trained, monkeypatch):
    train, _, net = trained
    import privsplit.siamese as sm

    def boom(*a, **k):
        raise AssertionError("contrastive loss evaluated")
    monkeypatch.setattr(sm, "contrastive_loss", boom)
    out = finetune_siamese(net, train, SiameseConfig(split_layer=3, lambda_contrastive=0.0,
                                                     pairs_per_epoch=64, epochs=2))
    assert len(out.train_losses) == 2


def test_finetuning_pulls_same_class_identities_together(trained):
    train, test, net = trained
    cfg = SiameseConfig(split_layer=3, pairs_per_epoch=500, epochs=15, seed=1)
    tuned = finetune_siamese(net, train, cfg)
    held_out = [p for p in sample_pairs(test, 400, seed=9) if p.similar]
    before = mean_pair_distance(net, test, held_out, 3) / mean_pair_distance(
        net, test, [p for p in sample_pairs(test, 400, seed=9) if not p.similar], 3)
    after = mean_pair_distance(tuned, test, held_out, 3) / mean_pair_distance(
        tuned, test, [p for p in sample_pairs(test, 400, seed=9) if not p.similar], 3)
    assert after < before
    assert clustering_ratio(tuned, test, 3) < clustering_ratio(net, test, 3)
    assert accuracy(tuned, test.x, test.ct1) >= accuracy(net, test.x, test.ct1) - 0.05


def test_finetuning_is_deterministic(trained):
    train, _, net = trained
    cfg = SiameseConfig(split_layer=1, pairs_per_epoch=64, epochs=2, seed=3)
    assert finetune_siamese(net, train, cfg).params_equal(finetune_siamese(net, train, cfg))


def test_split_layer_must_precede_head(trained):
    train, _, net = trained
    with pytest.raises(ValueError):
        finetune_siamese(net, train, SiameseConfig(split_layer=len(net.layers) - 1))
