"""End-to-end experiment: train, fine-tune, reduce, attack, sweep noise.

Configuration is one JSON object; every key is optional::

    {
      "seed": 0,                      # master seed; also seeds the synthetic data
      "output_dir": "runs/default",
      "synth":   {"n_identities": 100, "samples_per_identity": 40,
                  "dim": 16, "cluster_spread": 0.15},
      "train_fraction": 0.7,
      "hidden": [32, 16],
      "train":   {"learning_rate": 0.1, "epochs": 60, "batch_size": 32},
      "siamese": {"margin": 1.0, "lambda_contrastive": 1.0, "pairs_per_epoch": 2000,
                  "epochs": 40, "learning_rate": 0.05, "batch_size": 32},
      "attack":  {"hidden": [64], "learning_rate": 0.1, "epochs": 30, "batch_size": 32},
      "split_grid": [2, 4],           # client/server split indices
      "k_grid": [8, 2],               # PCA dimension paired with each split
      "table_k_grid": [4, 6, 8, 10],  # extra PCA dimensions for table_accuracy.csv
      "sigma_grid": [...],            # noise levels (see sigma_mode)
      "sigma_mode": "relative",       # "relative": multiples of the feature RMS
      "noise_draws": 10,
      "serve_sigma": 0.1              # noise level baked into the client bundles
    }

Outputs in ``output_dir``: ``baseline.psv``, ``siamese_split<s>.psv``,
``pca_<front>_split<s>_k<k>.psv``, ``client_split<s>.psv``,
``server_split<s>.psv``, ``table_accuracy.csv``, ``transfer_results.csv``,
``curve.csv`` and ``verdicts.csv``.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .data import Dataset, SynthConfig, generate, save_csv, split_train_test
from .embedding import EmbeddingConfig, EmbeddingModels, evaluate_embedding
from .errors import StageError
from .nn import Network, TrainConfig, init_network, train_classifier
from .pca import project
from .privacy import (CURVE_COLUMNS, CurveRow, accuracy_privacy_curve, dominance_fraction,
                      feature_rms, transfer_attack)
from .siamese import SiameseConfig, finetune_siamese

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("split", "variant", "k", "ct1_accuracy")
TRANSFER_COLUMNS = ("frozen_layers", "variant", "ct2_accuracy", "chance")
VERDICT_COLUMNS = ("claim", "holds", "detail")
ATTACK_VARIANTS = ("simple", "reduced_simple", "siamese", "reduced_siamese")
CT1_BAND = 0.05
DOMINANCE_SHARE = 0.8


@dataclass(frozen=True)
class SiameseParams:
    margin: float = 1.0
    lambda_contrastive: float = 1.0
    pairs_per_epoch: int = 2000
    epochs: int = 40
    learning_rate: float = 0.05
    batch_size: int = 32


@dataclass(frozen=True)
class AttackParams:
    hidden: tuple = (64,)
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 32


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 0.1
    epochs: int = 60
    batch_size: int = 32


def _default_sigmas():
    return tuple(float(s) for s in np.logspace(-2, 0.5, 10))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    synth: SynthConfig = SynthConfig()
    train_fraction: float = 0.7
    hidden: tuple = (32, 16)
    train: TrainParams = TrainParams()
    siamese: SiameseParams = SiameseParams()
    attack: AttackParams = AttackParams()
    split_grid: tuple = (2, 4)
    k_grid: tuple = (8, 2)
    table_k_grid: tuple = (4, 6, 8, 10)
    sigma_grid: tuple = field(default_factory=_default_sigmas)
    sigma_mode: str = "relative"
    noise_draws: int = 10
    serve_sigma: float = 0.1

    def __post_init__(self):
        if not self.split_grid or not self.k_grid or not self.sigma_grid:
            raise ValueError("split_grid, k_grid and sigma_grid must be non-empty")
        if len(self.k_grid) != len(self.split_grid):
            raise ValueError("k_grid pairs one PCA dimension with each split index")
        if self.sigma_mode not in ("relative", "absolute"):
            raise ValueError("sigma_mode must be 'relative' or 'absolute'")
        if self.noise_draws < 1:
            raise ValueError("noise_draws must be positive")
        n_layers = 2 * len(self.hidden) + 2
        for s in self.split_grid:
            if not 0 < s < n_layers:
                raise ValueError(f"split {s} outside 1..{n_layers - 1}")
        object.__setattr__(self, "synth", replace(self.synth, seed=self.seed))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        for key, typ in (("synth", SynthConfig), ("train", TrainParams),
                         ("siamese", SiameseParams), ("attack", AttackParams)):
            if key in kw:
                sub = dict(kw[key])
                sub.pop("seed", None)
                kw[key] = typ(**sub)
        if "attack" in kw:
            kw["attack"] = replace(kw["attack"], hidden=tuple(kw["attack"].hidden))
        for key in ("hidden", "split_grid", "k_grid", "table_k_grid", "sigma_grid"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synth"].pop("seed")
        return d

    def sub_seed(self, *tag: int) -> int:
        return int(np.random.SeedSequence([self.seed, *tag]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# stages


def prepare_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    return split_train_test(generate(cfg.synth), cfg.train_fraction, cfg.sub_seed(1))


def train_baseline(cfg: ExperimentConfig, train: Dataset) -> Network:
    net = init_network([train.dim, *cfg.hidden, train.n_ct1], seed=cfg.sub_seed(2))
    t = cfg.train
    return train_classifier(train.x, train.ct1, net,
                            TrainConfig(t.learning_rate, t.epochs, min(t.batch_size, len(train)),
                                        cfg.sub_seed(3)))


def train_siamese(cfg: ExperimentConfig, baseline: Network, train: Dataset, split: int) -> Network:
    s = cfg.siamese
    return finetune_siamese(baseline, train, SiameseConfig(
        split_layer=split - 1, margin=s.margin, lambda_contrastive=s.lambda_contrastive,
        pairs_per_epoch=s.pairs_per_epoch, epochs=s.epochs, learning_rate=s.learning_rate,
        batch_size=s.batch_size, seed=cfg.sub_seed(4, split)))


def embedding_rows(models: EmbeddingModels, ks, test: Dataset) -> list[dict]:
    """ct1 accuracy of the noise-free variants; reduced ones once per ``k``."""
    ks = [ks] if isinstance(ks, int) else list(ks)
    rows = []
    for variant in ATTACK_VARIANTS:
        reduced = variant.startswith("reduced")
        for kk in (ks if reduced else [None]):
            acc = evaluate_embedding(EmbeddingConfig(variant, kk), models, test)
            rows.append({"split": models.simple.split, "variant": variant,
                         "k": "" if kk is None else kk, "ct1_accuracy": acc})
    return rows


def transfer_rows(cfg: ExperimentConfig, models: EmbeddingModels, k: int,
                  train: Dataset, test: Dataset) -> list[dict]:
    a = cfg.attack
    tc = TrainConfig(a.learning_rate, a.epochs, min(a.batch_size, len(train)),
                     cfg.sub_seed(5, models.simple.split))
    rows = []
    for variant in ATTACK_VARIANTS:
        ec = EmbeddingConfig(variant, k if variant.startswith("reduced") else None)
        sm, pca = models.resolve(ec)
        feats = (lambda f, p=pca: project(p, f)) if pca is not None else None
        res = transfer_attack(sm.front, train, test, a.hidden, tc, features=feats)
        rows.append({"frozen_layers": res.frozen_layers, "variant": variant,
                     "ct2_accuracy": res.ct2_accuracy, "chance": res.chance_level})
    return rows


def absolute_sigmas(cfg: ExperimentConfig, models: EmbeddingModels, variant: str, k: int):
    if cfg.sigma_mode == "absolute":
        return list(cfg.sigma_grid)
    front = "siamese" if variant == "advanced" else "simple"
    rms = feature_rms(models.pcas[(front, k)])
    return [s * rms for s in cfg.sigma_grid]


def curve_rows(cfg: ExperimentConfig, models: EmbeddingModels, k: int, test: Dataset) -> list[CurveRow]:
    rows = []
    for variant in ("noisy_reduced_simple", "advanced"):
        rows += accuracy_privacy_curve(models, variant, k, absolute_sigmas(cfg, models, variant, k),
                                       test, cfg.noise_draws, cfg.sub_seed(6, models.simple.split))
    return rows


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@contextmanager
def _stage(name: str):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    log.info("stage %s done in %.2fs", name, time.perf_counter() - t0)


def run_pipeline(cfg: ExperimentConfig) -> Path:
    """Run every stage and return the artifact directory.

    Each artifact is written as soon as it exists, so a failing stage leaves
    the earlier ones on disk; the failure surfaces as :class:`StageError`.
    """
    out = Path(cfg.output_dir)
    with _stage("setup"):
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    with _stage("data"):
        train, test = prepare_data(cfg)
        save_csv(train, out / "train.csv")
        save_csv(test, out / "test.csv")
    with _stage("baseline"):
        baseline = train_baseline(cfg, train)
        io.save_network(out / "baseline.psv", baseline)

    table, transfer, curves = [], [], []
    for split, k in zip(cfg.split_grid, cfg.k_grid):
        with _stage(f"siamese[split={split}]"):
            siamese = train_siamese(cfg, baseline, train, split)
            io.save_network(out / f"siamese_split{split}.psv", siamese)
        with _stage(f"pca[split={split}]"):
            ks = sorted({k, *cfg.table_k_grid})
            models = EmbeddingModels.build(baseline, siamese, split, train.x, ks)
            for front in ("simple", "siamese"):
                for kk in ks:
                    io.save_pca(out / f"pca_{front}_split{split}_k{kk}.psv", models.pcas[(front, kk)])
            pca = models.pcas[("siamese", k)]
            sigma = cfg.serve_sigma * (feature_rms(pca) if cfg.sigma_mode == "relative" else 1.0)
            io.save_bundle(out / f"client_split{split}.psv",
                           io.client_bundle(models.siamese.front, pca, sigma, split))
            io.save_bundle(out / f"server_split{split}.psv",
                           io.server_bundle(models.siamese.back, pca))
        with _stage(f"table[split={split}]"):
            table += embedding_rows(models, ks, test)
            write_csv(out / "table_accuracy.csv", TABLE_COLUMNS, table)
        with _stage(f"transfer[split={split}]"):
            transfer += transfer_rows(cfg, models, k, train, test)
            write_csv(out / "transfer_results.csv", TRANSFER_COLUMNS, transfer)
        with _stage(f"curve[split={split}]"):
            curves += [asdict(r) for r in curve_rows(cfg, models, k, test)]
            write_csv(out / "curve.csv", CURVE_COLUMNS, curves)
    with _stage("verdicts"):
        verdicts = compare_variants(out)
        write_csv(out / "verdicts.csv", VERDICT_COLUMNS, [asdict(v) for v in verdicts])
    return out


# ---------------------------------------------------------------------------
# verdicts


@dataclass(frozen=True)
class Verdict:
    claim: str
    holds: bool
    detail: str


def _curve(rows, variant, split):
    pts = [(float(r["privacy_total"]), float(r["ct1_accuracy"])) for r in rows
           if r["variant"] == variant and int(r["split"]) == split]
    if not pts:
        raise ValueError(f"no curve points for {variant} at split {split}")
    return np.array(pts)


def curve_dominance(rows, cand: tuple, base: tuple, axis: str = "privacy") -> float:
    """Share of ``cand`` curve points at least as good as ``base``.

    ``cand`` and ``base`` are ``(variant, split)``.  ``axis="privacy"``
    compares accuracy at matched privacy; ``axis="accuracy"`` compares
    privacy at matched accuracy.
    """
    c, b = _curve(rows, *cand), _curve(rows, *base)
    if axis == "privacy":
        return dominance_fraction(c[:, 0], c[:, 1], b[:, 0], b[:, 1])
    if axis == "accuracy":
        return dominance_fraction(c[:, 1], c[:, 0], b[:, 1], b[:, 0])
    raise ValueError("axis must be 'privacy' or 'accuracy'")


def compare_variants(artifacts, split: Optional[int] = None) -> list[Verdict]:
    """Machine-checkable versions of the qualitative claims, at ``split``
    (default: the deepest split present in the artifacts)."""
    artifacts = Path(artifacts)
    try:
        table = read_csv(artifacts / "table_accuracy.csv")
        transfer = read_csv(artifacts / "transfer_results.csv")
        curve = read_csv(artifacts / "curve.csv")
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"missing pipeline artifact: {exc.filename}") from exc
    if not table or not transfer or not curve:
        raise ValueError("pipeline artifacts are empty")
    splits = sorted({int(r["split"]) for r in table})
    split = splits[-1] if split is None else split
    acc = {r["variant"]: float(r["ct1_accuracy"]) for r in table
           if int(r["split"]) == split and r["k"] == ""}
    ct2 = {r["variant"]: float(r["ct2_accuracy"]) for r in transfer
           if int(r["frozen_layers"]) == split}
    if not acc or not ct2:
        raise ValueError(f"no artifacts for split {split}")

    out = []
    gap = abs(acc["siamese"] - acc["simple"])
    out.append(Verdict("a_siamese_ct1_within_band", gap <= CT1_BAND + 1e-12,
                       f"|{acc['siamese']:.4f} - {acc['simple']:.4f}| = {gap:.4f} <= {CT1_BAND}"))
    out.append(Verdict("b_siamese_ct2_below_simple", ct2["siamese"] < ct2["simple"],
                       f"{ct2['siamese']:.4f} < {ct2['simple']:.4f}"))
    red = (ct2["reduced_simple"] <= ct2["simple"] and ct2["reduced_siamese"] <= ct2["siamese"])
    out.append(Verdict("c_reduced_ct2_not_above_unreduced", red,
                       f"simple {ct2['reduced_simple']:.4f} <= {ct2['simple']:.4f}; "
                       f"siamese {ct2['reduced_siamese']:.4f} <= {ct2['siamese']:.4f}"))
    share = curve_dominance(curve, ("advanced", split), ("noisy_reduced_simple", split))
    out.append(Verdict("d_advanced_dominates_noisy_reduced_simple", share >= DOMINANCE_SHARE,
                       f"{share:.2f} of grid points (need {DOMINANCE_SHARE})"))
    curve_splits = sorted({int(r["split"]) for r in curve if r["variant"] == "advanced"})
    if len(curve_splits) > 1:
        deep, shallow = curve_splits[-1], curve_splits[0]
        share = curve_dominance(curve, ("advanced", deep), ("advanced", shallow), axis="accuracy")
        out.append(Verdict("e_deeper_split_more_private", share >= DOMINANCE_SHARE,
                           f"split {deep} vs {shallow}: {share:.2f} of grid points"))
    return out
