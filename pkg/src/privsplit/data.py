"""Two-label datasets: a coarse approved label (ct1) and a private identity (ct2).

Synthetic data places one Gaussian cluster per identity; the approved label
is the identity index modulo 2, so each identity maps to exactly one ct1
class.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, LabelRangeError, ParseError, StratificationError


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    ct1: np.ndarray
    ct2: np.ndarray
    n_ct1: int
    n_ct2: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        ct1 = np.asarray(self.ct1, dtype=np.int64)
        ct2 = np.asarray(self.ct2, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EmptyInputError("dataset needs at least one row")
        n = x.shape[0]
        if ct1.shape != (n,) or ct2.shape != (n,):
            raise ValueError("label arrays must have one entry per row")
        for name, lab, hi in (("ct1", ct1, self.n_ct1), ("ct2", ct2, self.n_ct2)):
            bad = np.flatnonzero((lab < 0) | (lab >= hi))
            if bad.size:
                raise LabelRangeError(f"{name}={lab[bad[0]]} outside 0..{hi - 1}", row=int(bad[0]) + 1)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "ct1", ct1)
        object.__setattr__(self, "ct2", ct2)

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.ct1[idx], self.ct2[idx], self.n_ct1, self.n_ct2)

    def identity_to_ct1(self) -> dict[int, int]:
        """Map each identity to its approved label; raises if one maps to two."""
        mapping: dict[int, int] = {}
        for c2, c1 in zip(self.ct2.tolist(), self.ct1.tolist()):
            if mapping.setdefault(c2, c1) != c1:
                raise ValueError(f"identity {c2} carries more than one ct1 label")
        return mapping

    def equals(self, other: "Dataset") -> bool:
        return (self.n_ct1 == other.n_ct1 and self.n_ct2 == other.n_ct2
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.ct1, other.ct1)
                and np.array_equal(self.ct2, other.ct2))


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 100
    samples_per_identity: int = 40
    dim: int = 16
    cluster_spread: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.n_identities < 2 or self.n_identities % 2:
            raise ValueError("n_identities must be even and at least 2")
        if self.samples_per_identity < 1 or self.dim < 1:
            raise ValueError("samples_per_identity and dim must be positive")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be non-negative")


def generate(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    centers = rng.uniform(-1.0, 1.0, size=(cfg.n_identities, cfg.dim))
    ct2 = np.repeat(np.arange(cfg.n_identities), cfg.samples_per_identity)
    x = centers[ct2] + cfg.cluster_spread * rng.standard_normal((ct2.size, cfg.dim))
    return Dataset(x, ct2 % 2, ct2, 2, cfg.n_identities)


def save_csv(data: Dataset, path) -> None:
    """Write ``f0..f{d-1},ct1,ct2``. Floats use ``repr`` so reloads are bit-exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(data.dim)] + ["ct1", "ct2"])
        for row, a, b in zip(data.x, data.ct1, data.ct2):
            w.writerow([repr(float(v)) for v in row] + [int(a), int(b)])


def _parse_label(cell: str, name: str, row: int) -> int:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{name} value {cell!r} is not numeric", row=row) from None
    if not v.is_integer():
        raise ParseError(f"{name} value {cell!r} is not an integer", row=row)
    return int(v)


def load_csv(path, n_ct1: int | None = None, n_ct2: int | None = None) -> Dataset:
    """Parse the ``f0..f{d-1},ct1,ct2`` schema, preserving row order.

    Class counts default to ``max label + 1``; pass them explicitly to have
    out-of-range labels rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyInputError(f"{path}: file is empty") from None
        if "ct1" not in header or "ct2" not in header:
            raise ParseError("header must contain ct1 and ct2 columns", row=0)
        feats = [h for h in header if h not in ("ct1", "ct2")]
        d = len(feats)
        if d == 0 or feats != [f"f{j}" for j in range(d)]:
            raise ParseError(f"feature columns must be f0..f{d - 1}, got {feats}", row=0)
        fcol = [header.index(f"f{j}") for j in range(d)]
        c1, c2 = header.index("ct1"), header.index("ct2")
        xs, l1, l2 = [], [], []
        for r, cells in enumerate(reader, start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(cells)}", row=r)
            try:
                vals = [float(cells[j]) for j in fcol]
            except ValueError:
                raise ParseError("non-numeric feature cell", row=r) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite feature value", row=r)
            xs.append(vals)
            l1.append(_parse_label(cells[c1], "ct1", r))
            l2.append(_parse_label(cells[c2], "ct2", r))
    if not xs:
        raise EmptyInputError(f"{path}: no data rows")
    l1a, l2a = np.array(l1), np.array(l2)
    return Dataset(np.array(xs), l1a, l2a,
                   n_ct1 if n_ct1 is not None else int(l1a.max()) + 1,
                   n_ct2 if n_ct2 is not None else int(l2a.max()) + 1)


def split_train_test(data: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split by identity; ``fraction`` of each identity goes to train.

    Each identity contributes ``round(fraction * n_c)`` rows to the train half,
    clipped so both halves keep at least one row.  Row order inside each half
    follows the original dataset.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_mask = np.zeros(len(data), dtype=bool)
    for c in np.unique(data.ct2):
        members = np.flatnonzero(data.ct2 == c)
        if members.size < 2:
            raise StratificationError(f"identity {c} has {members.size} sample(s); need at least 2")
        n_train = min(max(int(round(fraction * members.size)), 1), members.size - 1)
        train_mask[rng.permutation(members)[:n_train]] = True
    return data.subset(np.flatnonzero(train_mask)), data.subset(np.flatnonzero(~train_mask))
