"""Privacy instruments for transmitted features.

Two measurements:

* a transfer-learning attack that freezes the client layers and trains a
  fresh head on identities, and
* the likelihood-rank measure.  For a noisy feature ``z`` the likelihood of
  identity ``c`` is estimated by averaging the noise density
  ``N(z; x_j, sigma^2 I)`` over the clean features ``x_j`` of that identity.
  The privacy of ``z`` is the number of identities strictly more likely than
  the true one, divided by the number of identities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset
from .errors import DegenerateKernelError, DimensionError, EmptyInputError, UndefinedClassError
from .nn import Network, TrainConfig, forward, init_network, train_classifier


@dataclass(frozen=True)
class TransferResult:
    ct2_accuracy: float
    chance_level: float
    frozen_layers: int


@dataclass(frozen=True, eq=False)
class PrivacyReport:
    per_point: np.ndarray
    privacy_total: float
    sigma: float
    n_classes: int
    ct1_accuracy: Optional[float] = None
    sigma_zero: bool = False


def transfer_attack(front: Network, train: Dataset, test: Dataset,
                    hidden: Sequence[int] = (64,), cfg: TrainConfig = TrainConfig(),
                    features=None) -> TransferResult:
    """Train a randomly initialised head on ct2 over frozen ``front`` outputs.

    Because the front is frozen its outputs are computed once and the head is
    trained on them directly, which is the same optimisation as training the
    stacked network with the prefix frozen.  ``features``, when given, maps
    the front output to what the head sees (e.g. PCA projection).
    """
    def feats(x):
        f = forward(front, x)[-1] if front.layers else np.asarray(x, dtype=np.float64)
        return features(f) if features is not None else f

    ftr, fte = feats(train.x), feats(test.x)
    head = init_network([ftr.shape[1], *hidden, train.n_ct2], seed=cfg.seed)
    head = train_classifier(ftr, train.ct2, head, cfg)
    pred = forward(head, fte)[-1].argmax(axis=1)
    return TransferResult(float(np.mean(pred == test.ct2)), 1.0 / train.n_ct2, len(front.layers))


# ---------------------------------------------------------------------------
# likelihood rank


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise DegenerateKernelError(f"sigma must be positive for a density kernel, got {sigma}")


def log_likelihood(z, c: int, features, ct2_labels, sigma: float) -> float:
    """Log of the kernel estimate of ``P(z | c)``."""
    _check_sigma(sigma)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64)
    members = features[np.asarray(ct2_labels) == c]
    if members.shape[0] == 0:
        raise UndefinedClassError(f"class {c} has no members")
    if z.shape != (features.shape[1],):
        raise DimensionError(f"z has shape {z.shape}, features are {features.shape[1]}-wide")
    k = features.shape[1]
    d2 = np.sum((members - z) ** 2, axis=1)
    e = -d2 / (2.0 * sigma * sigma)
    m = e.max()
    return float(m + np.log(np.exp(e - m).sum()) - math.log(members.shape[0])
                 - 0.5 * k * math.log(2.0 * math.pi * sigma * sigma))


def likelihood(z, c: int, features, ct2_labels, sigma: float) -> float:
    """Kernel estimate of ``P(z | c)``: mean Gaussian density over members of ``c``."""
    return math.exp(log_likelihood(z, c, features, ct2_labels, sigma))


class _ClassIndex:
    """Columns of the reference features grouped contiguously by class."""

    def __init__(self, features, ct2_labels, n_classes: Optional[int]):
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        labels = np.asarray(ct2_labels, dtype=np.int64)
        if labels.shape != (features.shape[0],):
            raise DimensionError("one label per reference feature is required")
        order = np.argsort(labels, kind="stable")
        self.features = features[order]
        self.labels = labels[order]
        self.classes, self.starts, counts = np.unique(
            self.labels, return_index=True, return_counts=True)
        self.log_counts = np.log(counts)
        self.n_classes = int(n_classes) if n_classes is not None else int(self.classes.size)
        self.pos = {int(c): i for i, c in enumerate(self.classes)}

    def class_loglik(self, z, sigma: float) -> np.ndarray:
        """``(m, n_present_classes)`` log-likelihoods up to the shared constant."""
        e = -cdist(np.atleast_2d(z), self.features, "sqeuclidean") / (2.0 * sigma * sigma)
        mx = np.maximum.reduceat(e, self.starts, axis=1)
        expanded = np.repeat(mx, np.diff(np.append(self.starts, e.shape[1])), axis=1)
        s = np.add.reduceat(np.exp(e - expanded), self.starts, axis=1)
        return mx + np.log(s) - self.log_counts


def privacy_ranks(z, correct, features, ct2_labels, sigma: float,
                  chunk: int = 256) -> np.ndarray:
    """Rank of the correct class for each row of ``z`` (strict comparison)."""
    _check_sigma(sigma)
    idx = _ClassIndex(features, ct2_labels, None)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != idx.features.shape[1]:
        raise DimensionError(f"z is {z.shape[1]}-wide, features are {idx.features.shape[1]}-wide")
    correct = np.atleast_1d(np.asarray(correct, dtype=np.int64))
    try:
        cols = np.array([idx.pos[int(c)] for c in correct])
    except KeyError as exc:
        raise UndefinedClassError(f"class {exc.args[0]} has no members") from None
    ranks = np.empty(z.shape[0], dtype=np.int64)
    for s in range(0, z.shape[0], chunk):
        ll = idx.class_loglik(z[s:s + chunk], sigma)
        own = ll[np.arange(ll.shape[0]), cols[s:s + chunk]]
        ranks[s:s + chunk] = np.sum(ll > own[:, None], axis=1)
    return ranks


def privacy_of_point(z, correct_class: int, features, ct2_labels, sigma: float,
                     n_classes: int) -> float:
    return float(privacy_ranks(z, [correct_class], features, ct2_labels, sigma)[0]) / n_classes


def privacy_total(z, correct, features, ct2_labels, sigma: float, n_classes: int,
                  ct1_accuracy: Optional[float] = None) -> PrivacyReport:
    """Mean rank privacy of noisy features ``z`` with true identities ``correct``.

    ``sigma == 0`` is reported as privacy 0 with ``sigma_zero`` set: a clean
    feature pins down its source point.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] == 0:
        raise EmptyInputError("no points to evaluate")
    if sigma == 0:
        per = np.zeros(z.shape[0])
        return PrivacyReport(per, 0.0, 0.0, n_classes, ct1_accuracy, sigma_zero=True)
    per = privacy_ranks(z, correct, features, ct2_labels, sigma) / n_classes
    return PrivacyReport(per, float(per.mean()), float(sigma), n_classes, ct1_accuracy)


# ---------------------------------------------------------------------------
# accuracy / privacy curves


@dataclass(frozen=True)
class CurveRow:
    sigma: float
    privacy_total: float
    ct1_accuracy: float
    variant: str
    split: int
    sigma_zero: bool = False


CURVE_COLUMNS = ("sigma", "privacy_total", "ct1_accuracy", "variant", "split")


def feature_rms(pca) -> float:
    """Root-mean-square per-coordinate spread of PCA-projected training features."""
    return float(np.sqrt(np.mean(pca.eigenvalues)))


def accuracy_privacy_curve(models, variant: str, k: int, sigmas: Sequence[float],
                           data: Dataset, n_noise_draws: int = 10, seed: int = 0) -> list[CurveRow]:
    """One row per sigma: mean rank privacy and mean ct1 accuracy over noise draws.

    The clean features of ``data`` double as the attacker's reference set.
    ``sigma == 0`` is allowed and yields the clean accuracy with privacy 0.
    """
    from .embedding import EmbeddingConfig, add_noise, classify_features, extract_features

    if len(sigmas) == 0:
        raise ValueError("sigma grid is empty")
    if variant not in ("advanced", "noisy_reduced_simple"):
        raise ValueError(f"curves are defined for noisy variants, got {variant!r}")
    clean_variant = "reduced_siamese" if variant == "advanced" else "reduced_simple"
    sm, pca = models.resolve(EmbeddingConfig(clean_variant, k))
    clean = extract_features(sm, pca, 0.0, data.x)
    rows = []
    for j, sigma in enumerate(sigmas):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        draws = np.random.SeedSequence([seed, j]).spawn(n_noise_draws if sigma > 0 else 1)
        priv, acc = [], []
        for ss in draws:
            z = add_noise(clean, sigma, ss)
            acc.append(np.mean(classify_features(sm, pca, z).argmax(axis=1) == data.ct1))
            priv.append(privacy_total(z, data.ct2, clean, data.ct2, sigma, data.n_ct2).privacy_total)
        rows.append(CurveRow(float(sigma), float(np.mean(priv)), float(np.mean(acc)),
                             variant, sm.split, sigma_zero=sigma == 0))
    return rows


def frontier(xs, ys):
    """Best ``y`` attainable with at least ``x``: ``F(q) = max{y_i : x_i >= q}``.

    Returned as breakpoints ``(x, F)`` sorted by ``x``; :func:`frontier_at`
    interpolates linearly between them.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size == 0 or xs.shape != ys.shape:
        raise ValueError("curve must be a non-empty set of (x, y) points")
    ux = np.unique(xs)
    best = np.array([ys[xs == u].max() for u in ux])
    env = np.maximum.accumulate(best[::-1])[::-1]
    return ux, env


def frontier_at(xs, ys, q) -> np.ndarray:
    """Frontier value at ``q``; ``-inf`` beyond the largest ``x`` (unreachable)."""
    fx, fy = frontier(xs, ys)
    q = np.asarray(q, dtype=np.float64)
    out = np.interp(q, fx, fy)
    return np.where(q > fx[-1], -np.inf, out)


def dominance_fraction(cand_x, cand_y, base_x, base_y, atol: float = 1e-12) -> float:
    """Share of candidate points whose ``y`` is at least the baseline's at matched ``x``.

    With x = privacy and y = accuracy this is "accuracy at matched privacy";
    with the axes swapped it is "privacy at matched accuracy".
    """
    cand_x = np.asarray(cand_x, dtype=np.float64)
    cand_y = np.asarray(cand_y, dtype=np.float64)
    if cand_x.size == 0:
        raise ValueError("candidate curve is empty")
    ref = frontier_at(base_x, base_y, cand_x)
    return float(np.mean(cand_y >= ref - atol))
