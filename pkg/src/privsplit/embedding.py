"""Client feature extractor and server classifier built from one split network.

Client side: front layers, optional PCA projection, optional Gaussian noise.
Server side: optional PCA reconstruction, back layers.

Variants:

=====================  ===============  =====  =====
variant                front            PCA    noise
=====================  ===============  =====  =====
simple                 ct1 baseline     no     no
reduced_simple         ct1 baseline     yes    no
siamese                Siamese-tuned    no     no
reduced_siamese        Siamese-tuned    yes    no
noisy_reduced_simple   ct1 baseline     yes    yes
advanced               Siamese-tuned    yes    yes
=====================  ===============  =====  =====
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import DimensionError
from .nn import Network, forward
from .pca import PcaTransform, fit_pca, project, reconstruct

# variant -> (front, reduced, noisy)
VARIANTS = {
    "simple": ("simple", False, False),
    "reduced_simple": ("simple", True, False),
    "siamese": ("siamese", False, False),
    "reduced_siamese": ("siamese", True, False),
    "noisy_reduced_simple": ("simple", True, True),
    "advanced": ("siamese", True, True),
}


@dataclass(frozen=True, eq=False)
class SplitModel:
    front: Network
    back: Network
    split: int

    @property
    def feature_dim(self) -> int:
        return self.back.input_dim


def split_network(net: Network, split: int) -> SplitModel:
    if not 0 < split < len(net.layers):
        raise IndexError(f"split {split} outside 1..{len(net.layers) - 1}")
    dims = net.dims()
    front = Network(net.layers[:split], net.input_dim, frozen=min(net.frozen, split))
    back = Network(net.layers[split:], dims[split], frozen=max(net.frozen - split, 0))
    return SplitModel(front, back, split)


def join(sm: SplitModel) -> Network:
    return Network(sm.front.layers + sm.back.layers, sm.front.input_dim)


def add_noise(z, sigma: float, seed) -> np.ndarray:
    """I.i.d. ``Normal(0, sigma^2)`` per coordinate, drawn from ``seed``."""
    z = np.asarray(z, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return z
    return z + sigma * np.random.default_rng(seed).standard_normal(z.shape)


def extract_features(sm: SplitModel, pca: Optional[PcaTransform], sigma: float, x,
                     rng_seed=None) -> np.ndarray:
    """Client side: ``noise(project(front(x)))`` with each step optional."""
    z = forward(sm.front, x)[-1]
    if pca is not None:
        z = project(pca, z)
    return add_noise(z, sigma, rng_seed)


def classify_features(sm: SplitModel, pca: Optional[PcaTransform], z) -> np.ndarray:
    """Server side: class probabilities for received features ``z``."""
    z = np.asarray(z, dtype=np.float64)
    want = pca.k if pca is not None else sm.feature_dim
    if z.shape[-1] != want:
        raise DimensionError(f"server expects features of width {want}, got {z.shape[-1]}")
    if pca is not None:
        z = reconstruct(pca, z)
    return forward(sm.back, z)[-1]


@dataclass(frozen=True)
class EmbeddingConfig:
    variant: str
    k: Optional[int] = None
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        _, reduced, noisy = VARIANTS[self.variant]
        if reduced and (self.k is None or self.k < 1):
            raise ValueError(f"variant {self.variant} needs a PCA dimension k")
        if noisy and not self.sigma > 0:
            raise ValueError(f"variant {self.variant} needs sigma > 0")
        if not noisy and self.sigma != 0:
            raise ValueError(f"variant {self.variant} does not add noise; sigma must be 0")

    @property
    def front(self) -> str:
        return VARIANTS[self.variant][0]

    @property
    def reduced(self) -> bool:
        return VARIANTS[self.variant][1]

    @property
    def noisy(self) -> bool:
        return VARIANTS[self.variant][2]


@dataclass
class EmbeddingModels:
    """Trained artifacts at one split index.

    ``pcas`` is keyed by ``(front, k)`` where front is ``"simple"`` or
    ``"siamese"``.
    """

    simple: SplitModel
    siamese: Optional[SplitModel] = None
    pcas: dict = field(default_factory=dict)

    @classmethod
    def build(cls, simple: Network, siamese: Optional[Network], split: int, train_x,
              ks=()) -> "EmbeddingModels":
        out = cls(split_network(simple, split),
                  split_network(siamese, split) if siamese is not None else None)
        for k in ks:
            out.fit_pca("simple", k, train_x)
            if siamese is not None:
                out.fit_pca("siamese", k, train_x)
        return out

    def split_model(self, front: str) -> SplitModel:
        sm = self.simple if front == "simple" else self.siamese
        if sm is None:
            raise ValueError(f"no {front} network available")
        return sm

    def fit_pca(self, front: str, k: int, train_x) -> PcaTransform:
        feats = forward(self.split_model(front).front, train_x)[-1]
        self.pcas[(front, k)] = t = fit_pca(feats, k)
        return t

    def resolve(self, cfg: EmbeddingConfig):
        """``(split_model, pca_or_None)`` for a variant."""
        sm = self.split_model(cfg.front)
        if not cfg.reduced:
            return sm, None
        try:
            return sm, self.pcas[(cfg.front, cfg.k)]
        except KeyError:
            raise ValueError(f"no fitted PCA for {cfg.front} front with k={cfg.k}") from None


def evaluate_embedding(cfg: EmbeddingConfig, models: EmbeddingModels, data: Dataset,
                       n_noise_draws: int = 10) -> float:
    """ct1 accuracy of a variant on ``data``; noisy variants average ``n_noise_draws`` seeds."""
    sm, pca = models.resolve(cfg)
    clean = extract_features(sm, pca, 0.0, data.x)
    draws = n_noise_draws if cfg.noisy else 1
    seeds = np.random.SeedSequence(cfg.seed).spawn(draws)
    accs = []
    for ss in seeds:
        z = add_noise(clean, cfg.sigma, ss)
        pred = classify_features(sm, pca, z).argmax(axis=1)
        accs.append(np.mean(pred == data.ct1))
    return float(np.mean(accs))
