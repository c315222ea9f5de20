"""Siamese fine-tuning that clusters an intermediate layer by approved class.

Pairs always join two different identities.  A pair is *similar* when both
rows share the approved (ct1) label.  The objective per pair is the
classification loss of both rows plus ``lambda_contrastive`` times the
contrastive loss on the chosen layer's output.  Both branches use the same
parameters, so their gradients simply add.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import DimensionError, PairSamplingError
from .nn import Network, apply_gradients, backprop, forward, log_softmax


class Pair(NamedTuple):
    index_a: int
    index_b: int
    similar: bool


@dataclass(frozen=True)
class SiameseConfig:
    """``split_layer`` names the layer whose *output* carries the contrastive
    loss, so the matching client/server split index is ``split_layer + 1``.

    With ``normalize`` the features entering the loss are divided by their
    mean norm under the network before fine-tuning, which makes ``margin``
    scale-free.
    """

    split_layer: int
    margin: float = 1.0
    lambda_contrastive: float = 1.0
    pairs_per_epoch: int = 2000
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 32
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.lambda_contrastive < 0:
            raise ValueError("lambda_contrastive must be non-negative")
        if self.split_layer < 0:
            raise ValueError("split_layer must be non-negative")
        if self.pairs_per_epoch < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("pairs_per_epoch, batch_size must be positive and epochs >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def contrastive_loss(f1, f2, similar, margin: float):
    """Pairwise contrastive loss and its gradients.

    similar:     ``|f1 - f2|^2``
    dissimilar:  ``max(0, margin - |f1 - f2|)^2``

    Works on single vectors or on ``(n, d)`` batches with ``similar`` of
    shape ``(n,)``.  Returns ``(loss, d_f1, d_f2)``; at a zero distance the
    dissimilar branch has no direction and the subgradient 0 is used.
    """
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape:
        raise DimensionError(f"feature shapes differ: {f1.shape} vs {f2.shape}")
    diff = f1 - f2
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    similar = np.asarray(similar, dtype=bool)
    gap = np.maximum(margin - dist, 0.0)
    loss = np.where(similar, dist * dist, gap * gap)
    with np.errstate(divide="ignore", invalid="ignore"):
        push = np.where(dist > 0, -2.0 * gap / dist, 0.0)
    coef = np.where(similar, 2.0, push)
    g1 = coef[..., None] * diff
    if np.ndim(loss) == 0:
        loss = float(loss)
    return loss, g1, -g1


def _by_ct1(data: Dataset) -> dict[int, np.ndarray]:
    return {int(c): np.flatnonzero(data.ct1 == c) for c in np.unique(data.ct1)}


def sample_pairs(data: Dataset, n_pairs: int, seed: int = 0,
                 similar_fraction: float = 0.5) -> list[Pair]:
    """Cross-identity pairs, ``floor(n_pairs * similar_fraction)`` of them similar."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    if not 0.0 <= similar_fraction <= 1.0:
        raise ValueError("similar_fraction must lie in [0, 1]")
    n_sim = int(np.floor(n_pairs * similar_fraction))
    n_dis = n_pairs - n_sim
    groups = _by_ct1(data)
    if n_sim:
        for c, rows in groups.items():
            if np.unique(data.ct2[rows]).size < 2:
                raise PairSamplingError(
                    f"ct1 class {c} has a single identity; no similar cross-identity pair exists")
    if n_dis and len(groups) < 2:
        raise PairSamplingError("a single ct1 class admits no dissimilar pairs")

    rng = np.random.default_rng(seed)
    n = len(data)
    anchors_s = rng.integers(0, n, size=n_sim)
    partners_s = np.empty(n_sim, dtype=np.int64)
    todo = np.arange(n_sim)
    while todo.size:
        a = anchors_s[todo]
        draw = np.empty(todo.size, dtype=np.int64)
        for c, rows in groups.items():
            sel = data.ct1[a] == c
            draw[sel] = rows[rng.integers(0, rows.size, size=int(sel.sum()))]
        partners_s[todo] = draw
        todo = todo[data.ct2[draw] == data.ct2[a]]

    anchors_d = rng.integers(0, n, size=n_dis)
    partners_d = np.empty(n_dis, dtype=np.int64)
    todo = np.arange(n_dis)
    while todo.size:
        draw = rng.integers(0, n, size=todo.size)
        partners_d[todo] = draw
        todo = todo[data.ct1[draw] == data.ct1[anchors_d[todo]]]

    a = np.concatenate([anchors_s, anchors_d])
    b = np.concatenate([partners_s, partners_d])
    sim = np.concatenate([np.ones(n_sim, bool), np.zeros(n_dis, bool)])
    order = rng.permutation(n_pairs)
    return [Pair(int(a[i]), int(b[i]), bool(sim[i])) for i in order]


def feature_scale(net: Network, x, split_layer: int) -> float:
    """Mean Euclidean norm of the output of layer ``split_layer`` over ``x``."""
    f = forward(net, x)[split_layer + 1]
    s = float(np.mean(np.linalg.norm(f, axis=1)))
    return s if s > 0 else 1.0


def pair_loss_and_grads(net: Network, xa, xb, ya, yb, similar, cfg: SiameseConfig,
                        scale: float = 1.0):
    """Mean joint loss over a batch of pairs and per-layer gradients.

    The two branches are stacked into one batch; the classification delta
    and the contrastive gradient for each row land on the same parameters.
    """
    if cfg.split_layer >= len(net.layers) - 1:
        raise DimensionError("split_layer must precede the softmax head")
    m = len(ya)
    x = np.concatenate([xa, xb])
    y = np.concatenate([ya, yb])
    acts = forward(net, x)
    logp = log_softmax(acts[-2])
    cls = -logp[np.arange(2 * m), y].sum() / m
    delta = acts[-1].copy()
    delta[np.arange(2 * m), y] -= 1.0
    delta /= m
    inject = None
    con = 0.0
    if cfg.lambda_contrastive > 0:
        f = acts[cfg.split_layer + 1] / scale
        loss, g1, g2 = contrastive_loss(f[:m], f[m:], similar, cfg.margin)
        con = float(np.mean(loss))
        g = cfg.lambda_contrastive * np.concatenate([g1, g2]) / (m * scale)
        inject = {cfg.split_layer + 1: g}
    grads = backprop(net, acts, delta, len(net.layers) - 1, inject)
    return cls + cfg.lambda_contrastive * con, grads


def finetune_siamese(net: Network, data: Dataset, cfg: SiameseConfig) -> Network:
    """Fine-tune ``net`` (already trained on ct1) with the joint Siamese objective."""
    if cfg.split_layer >= len(net.layers) - 1:
        raise ValueError(
            f"split_layer {cfg.split_layer} must precede the head (layer count {len(net.layers)})")
    if not net.has_softmax_head or net.output_dim != data.n_ct1:
        raise ValueError("network must be a ct1 classifier with a softmax head")
    scale = feature_scale(net, data.x, cfg.split_layer) if cfg.normalize else 1.0
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.epochs)
    losses = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        pairs = sample_pairs(data, cfg.pairs_per_epoch, seed=int(rng.integers(2**63)))
        a = np.array([p.index_a for p in pairs])
        b = np.array([p.index_b for p in pairs])
        sim = np.array([p.similar for p in pairs])
        total = 0.0
        for s in range(0, len(pairs), cfg.batch_size):
            sl = slice(s, s + cfg.batch_size)
            loss, grads = pair_loss_and_grads(
                net, data.x[a[sl]], data.x[b[sl]], data.ct1[a[sl]], data.ct1[b[sl]],
                sim[sl], cfg, scale)
            total += loss * len(sim[sl])
            net = apply_gradients(net, grads, cfg.learning_rate)
        losses.append(total / len(pairs))
    return replace(net, train_losses=tuple(losses))


def mean_pair_distance(net: Network, data: Dataset, pairs, split_layer: int) -> float:
    f = forward(net, data.x)[split_layer + 1]
    a = np.array([p.index_a for p in pairs])
    b = np.array([p.index_b for p in pairs])
    return float(np.mean(np.linalg.norm(f[a] - f[b], axis=1)))


def clustering_ratio(net: Network, data: Dataset, split_layer: int, n_pairs: int = 2000,
                     seed: int = 0) -> float:
    """Mean intra-ct1 distance over mean inter-ct1 distance at the chosen layer."""
    pairs = sample_pairs(data, n_pairs, seed)
    intra = [p for p in pairs if p.similar]
    inter = [p for p in pairs if not p.similar]
    return (mean_pair_distance(net, data, intra, split_layer)
            / mean_pair_distance(net, data, inter, split_layer))
