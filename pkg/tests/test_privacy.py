import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privsplit.data import Dataset, SynthConfig, generate, split_train_test
from privsplit.embedding import EmbeddingModels
from privsplit.errors import DegenerateKernelError, UndefinedClassError
from privsplit.nn import Network, TrainConfig, init_network, predict_proba, train_classifier
from privsplit.privacy import (accuracy_privacy_curve, dominance_fraction, frontier, frontier_at,
                               likelihood, log_likelihood, privacy_of_point, privacy_ranks,
                               privacy_total, transfer_attack)
from privsplit.siamese import SiameseConfig, finetune_siamese


# ---------------------------------------------------------------------------
# independent oracles


def mp_class_likelihoods(z, feats, labels, sigma):
    """High-precision kernel likelihood per class, by explicit loops."""
    mpmath.mp.dps = 60
    k = len(z)
    norm = (2 * mpmath.pi * mpmath.mpf(sigma) ** 2) ** (-mpmath.mpf(k) / 2)
    out = {}
    for c in sorted(set(labels)):
        terms = []
        for x, lab in zip(feats, labels):
            if lab == c:
                d2 = sum((mpmath.mpf(float(a)) - mpmath.mpf(float(b))) ** 2 for a, b in zip(z, x))
                terms.append(norm * mpmath.exp(-d2 / (2 * mpmath.mpf(sigma) ** 2)))
        out[c] = sum(terms) / len(terms)
    return out


def brute_rank(z, correct, feats, labels, sigma):
    lk = mp_class_likelihoods(z, feats, labels, sigma)
    return sum(1 for c, v in lk.items() if v > lk[correct])


def linear_rank(z, correct, feats, labels, sigma):
    """Plain float64 densities; returns None when any class underflows to zero."""
    k = feats.shape[1]
    dens = {}
    for c in np.unique(labels):
        d2 = np.sum((feats[labels == c] - z) ** 2, axis=1)
        dens[c] = np.mean(np.exp(-d2 / (2 * sigma ** 2))) * (2 * np.pi * sigma ** 2) ** (-k / 2)
    if min(dens.values()) == 0.0:
        return None
    return sum(1 for v in dens.values() if v > dens[correct])


# ---------------------------------------------------------------------------
# likelihood


def test_density_at_single_member_mode():
    for k, sigma in ((1, 0.5), (3, 2.0)):
        z = np.arange(k, dtype=float)
        assert math.isclose(likelihood(z, 0, z[None], [0], sigma),
                            (2 * math.pi * sigma ** 2) ** (-k / 2), rel_tol=1e-14)


def test_equidistant_members_average_to_single_value():
    z = np.zeros(2)
    one = likelihood(z, 0, [[3.0, 4.0]], [0], 1.5)
    two = likelihood(z, 0, [[3.0, 4.0], [-5.0, 0.0]], [0, 0], 1.5)
    assert math.isclose(one, two, rel_tol=1e-14)


def test_five_point_toy_set_by_hand():
    feats = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0], [2.0, 2.0]])
    labels = np.array([0, 0, 1, 1, 1])
    z = np.array([0.5, 0.5])
    s = 0.8
    g = lambda d2: math.exp(-d2 / (2 * s * s)) / (2 * math.pi * s * s)
    # squared distances from z: 0.5, 0.5 | 2.5, 6.5, 4.5
    assert abs(likelihood(z, 0, feats, labels, s) - (g(0.5) + g(0.5)) / 2) <= 1e-12
    assert abs(likelihood(z, 1, feats, labels, s) - (g(2.5) + g(6.5) + g(4.5)) / 3) <= 1e-12


def test_kernel_integrates_to_one():
    rng = np.random.default_rng(0)
    feats = np.array([[0.0, 0.0], [1.0, -1.0], [-0.5, 2.0]])
    labels = np.zeros(3, int)
    sigma = 0.7
    # importance sampling with a broad Gaussian proposal
    s_prop = 3.0
    z = rng.normal(0.3, s_prop, size=(20000, 2))
    q = np.exp(-np.sum((z - 0.3) ** 2, axis=1) / (2 * s_prop ** 2)) / (2 * np.pi * s_prop ** 2)
    p = np.array([likelihood(v, 0, feats, labels, sigma) for v in z])
    w = p / q
    est, se = w.mean(), w.std() / np.sqrt(w.size)
    assert abs(est - 1.0) <= 0.02 and abs(est - 1.0) <= 4 * se


def test_log_likelihood_survives_underflow():
    ll = log_likelihood(np.array([100.0]), 0, [[0.0]], [0], 0.1)
    assert np.isfinite(ll) and ll < -4e5
    assert likelihood(np.array([100.0]), 0, [[0.0]], [0], 0.1) == 0.0


def test_likelihood_errors():
    with pytest.raises(DegenerateKernelError):
        likelihood([0.0], 0, [[0.0]], [0], 0.0)
    with pytest.raises(UndefinedClassError):
        likelihood([0.0], 3, [[0.0]], [0], 1.0)


# ---------------------------------------------------------------------------
# rank privacy


def test_on_top_of_isolated_correct_point():
    feats = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    assert privacy_of_point(feats[0], 0, feats, [0, 1, 2], 0.01, 3) == 0.0


def test_single_class_is_never_private():
    feats = np.random.default_rng(0).standard_normal((5, 2))
    assert privacy_of_point([3.0, 3.0], 0, feats, [0] * 5, 1.0, 1) == 0.0


def _six_on_a_circle():
    # 20 points, one identity each; two approved classes alternate.
    # Six of them lie at distance exactly 5 from the origin, the rest
    # at least 8 away.
    ring = [(3, 4), (4, 3), (-3, 4), (5, 0), (0, -5), (-4, -3)]
    far = [(8, 0), (0, 9), (-9, 1), (7, 7), (-7, 7), (-8, -6), (6, -8), (10, 3),
           (-10, -2), (2, 11), (-3, -10), (11, -4), (9, 9), (-12, 5)]
    return np.array(ring + far, dtype=float), np.arange(20)


def test_equidistant_ambiguity_scenario():
    feats, ids = _six_on_a_circle()
    z = np.zeros(2)
    assert np.sum(np.isclose(np.linalg.norm(feats, axis=1), 5.0)) / len(feats) == 0.3
    for sigma in (1.0, 3.0):
        for src in range(6):
            # exact ties: under strict ranking nothing beats the true source
            assert privacy_of_point(z, src, feats, ids, sigma, 20) == brute_rank(z, src, feats, ids, sigma) / 20 == 0.0
    # move the true source slightly outward, keeping it integer: (5, 1) is at sqrt(26)
    feats2 = feats.copy()
    feats2[3] = (5, 1)
    for sigma in (1.0, 3.0):
        p = privacy_of_point(z, 3, feats2, ids, sigma, 20)
        assert p == brute_rank(z, 3, feats2, ids, sigma) / 20 == 5 / 20


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 50), st.integers(1, 6), st.integers(1, 3),
       st.floats(0.05, 3.0))
def test_matches_exhaustive_ranking(seed, n, n_classes, k, sigma):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, max(n - n_classes, 0))])[:n]
    feats = rng.standard_normal((len(labels), k))
    z = rng.standard_normal(k) * 1.5
    present = np.unique(labels)
    correct = int(rng.choice(present))
    want = brute_rank(z, correct, feats, labels, sigma)
    assert privacy_of_point(z, correct, feats, labels, sigma, len(present)) == want / len(present)
    lin = linear_rank(z, correct, feats, labels, sigma)
    if lin is not None:
        assert lin == want


def test_batched_ranks_match_single_calls():
    rng = np.random.default_rng(7)
    feats = rng.standard_normal((40, 3))
    labels = rng.integers(0, 8, 40)
    z = rng.standard_normal((600, 3))
    correct = rng.choice(np.unique(labels), 600)
    batched = privacy_ranks(z, correct, feats, labels, 0.5, chunk=64)
    single = [privacy_ranks(z[i], [correct[i]], feats, labels, 0.5)[0] for i in range(0, 600, 37)]
    np.testing.assert_array_equal(batched[::37], single)


def test_total_is_mean_of_points():
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((30, 2))
    labels = np.repeat(np.arange(6), 5)
    z = feats + rng.normal(0, 0.8, feats.shape)
    rep = privacy_total(z, labels, feats, labels, 0.8, 6)
    direct = [privacy_of_point(z[i], labels[i], feats, labels, 0.8, 6) for i in range(30)]
    assert rep.privacy_total == pytest.approx(sum(direct) / 30, abs=1e-15)
    np.testing.assert_array_equal(rep.per_point, direct)


def test_all_points_identified_gives_zero():
    feats = np.array([[0.0], [10.0], [20.0]])
    rep = privacy_total(feats, [0, 1, 2], feats, [0, 1, 2], 0.1, 3)
    assert rep.privacy_total == 0.0 and not rep.sigma_zero


def test_sigma_zero_convention():
    feats = np.array([[0.0], [1.0]])
    rep = privacy_total(feats, [0, 1], feats, [0, 1], 0.0, 2)
    assert rep.sigma_zero and rep.privacy_total == 0.0
    with pytest.raises(DegenerateKernelError):
        privacy_ranks(feats, [0, 1], feats, [0, 1], 0.0)


# ---------------------------------------------------------------------------
# transfer attack


@pytest.fixture(scope="module")
def bench():
    d = generate(SynthConfig(n_identities=16, samples_per_identity=30, dim=8, seed=11))
    train, test = split_train_test(d, 0.7, seed=11)
    net = train_classifier(train.x, train.ct1, init_network([8, 24, 12, 2], seed=11),
                           TrainConfig(0.1, 60, 32, 11))
    tuned = finetune_siamese(net, train, SiameseConfig(split_layer=3, pairs_per_epoch=1000,
                                                       epochs=30, seed=11))
    return train, test, net, tuned


def test_identity_front_equals_head_on_raw_features(bench):
    train, test, _, _ = bench
    cfg = TrainConfig(0.1, 10, 32, 3)
    res = transfer_attack(Network((), 8), train, test, (16,), cfg)
    head = train_classifier(train.x, train.ct2, init_network([8, 16, 16], seed=3), cfg)
    direct = float(np.mean(predict_proba(head, test.x).argmax(axis=1) == test.ct2))
    assert res.ct2_accuracy == direct
    assert res.frozen_layers == 0 and res.chance_level == 1 / 16


def test_siamese_front_leaks_less_identity(bench):
    train, test, net, tuned = bench
    cfg = TrainConfig(0.1, 30, 32, 5)
    simple = transfer_attack(Network(net.layers[:4], 8), train, test, (64,), cfg)
    siamese = transfer_attack(Network(tuned.layers[:4], 8), train, test, (64,), cfg)
    assert siamese.ct2_accuracy < simple.ct2_accuracy


def test_shuffled_labels_give_chance(bench):
    train, test, net, _ = bench
    rng = np.random.default_rng(0)
    shuffled = Dataset(train.x, train.ct1, rng.permutation(train.ct2), 2, 16)
    test_sh = Dataset(test.x, test.ct1, rng.permutation(test.ct2), 2, 16)
    res = transfer_attack(Network(net.layers[:2], 8), shuffled, test_sh, (64,), TrainConfig(0.1, 30, 32, 0))
    assert abs(res.ct2_accuracy - 1 / 16) <= 3 * math.sqrt(1 / (4 * len(test)))


# ---------------------------------------------------------------------------
# curves


def test_privacy_non_decreasing_in_sigma(bench):
    train, test, net, tuned = bench
    models = EmbeddingModels.build(net, tuned, 4, train.x, [2])
    rows = accuracy_privacy_curve(models, "advanced", 2, np.logspace(-2, 0.5, 10), test, 10, seed=0)
    priv = [r.privacy_total for r in rows]
    assert sum(b < a for a, b in zip(priv, priv[1:])) <= 1
    assert priv[-1] > priv[0]
    assert all(0.0 <= r.ct1_accuracy <= 1.0 and 0.0 <= r.privacy_total <= 1.0 for r in rows)


def test_sigma_zero_row_is_flagged(bench):
    train, test, net, tuned = bench
    models = EmbeddingModels.build(net, tuned, 4, train.x, [2])
    rows = accuracy_privacy_curve(models, "noisy_reduced_simple", 2, [0.0, 0.1], test, 2)
    assert rows[0].sigma_zero and rows[0].privacy_total == 0.0
    assert not rows[1].sigma_zero
    with pytest.raises(ValueError):
        accuracy_privacy_curve(models, "simple", 2, [0.1], test)
    with pytest.raises(ValueError):
        accuracy_privacy_curve(models, "advanced", 2, [], test)


def test_frontier_is_best_at_or_beyond():
    fx, fy = frontier([0.1, 0.3, 0.2, 0.5], [0.9, 0.6, 0.95, 0.2])
    np.testing.assert_array_equal(fx, [0.1, 0.2, 0.3, 0.5])
    np.testing.assert_array_equal(fy, [0.95, 0.95, 0.6, 0.2])
    np.testing.assert_allclose(frontier_at([0.1, 0.3, 0.2, 0.5], [0.9, 0.6, 0.95, 0.2], [0.4, 0.6]),
                               [0.4, -np.inf])


def test_dominance_identity_and_strict_cases():
    x, y = [0.1, 0.2, 0.4], [0.9, 0.8, 0.5]
    assert dominance_fraction(x, y, x, y) == 1.0
    assert dominance_fraction(x, [0.8, 0.7, 0.4], x, y) == 0.0
    assert dominance_fraction(x, [0.95, 0.7, 0.5], x, y) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        dominance_fraction([], [], x, y)
