"""Random design sampling, ground-truth generation, splitting and CSV storage."""
from __future__ import annotations

import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .materials import LC_LEVELS, MaterialDb
from .surrogate import (
    MIN_RIBBON_GAP_NM,
    N_WAVELENGTHS,
    PARAM_NAMES,
    WAVELENGTHS_NM,
    DesignVector,
    InvalidDesign,
    supercell_reflectance,
)

DESIGN_COLUMNS = [f"d_{name}" for name in PARAM_NAMES]
SPECTRUM_COLUMNS = [f"r_{i:03d}" for i in range(N_WAVELENGTHS)]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DesignRanges:
    h: tuple[float, float] = (50.0, 250.0)
    p: tuple[float, float] = (300.0, 700.0)
    w_min: float = 100.0
    gap: float = MIN_RIBBON_GAP_NM

    def __post_init__(self) -> None:
        if not 0 < self.h[0] < self.h[1]:
            raise ValueError(f"bad h range {self.h}")
        if not 0 < self.p[0] < self.p[1]:
            raise ValueError(f"bad pitch range {self.p}")
        if self.w_min + self.gap > self.p[0]:
            raise ValueError("smallest pitch leaves no room for the minimum width")

    def w_range(self, pitch: float) -> tuple[float, float]:
        return self.w_min, pitch - self.gap

    def bounds(self) -> np.ndarray:
        """(10, 2) outer bounds per parameter; widths use the loosest pitch."""
        w = (self.w_min, self.p[1] - self.gap)
        return np.array([self.h, (0.0, 1.0), (0.0, 1.0), (0.0, 1.0), self.p, self.p, self.p, w, w, w])

    def contains(self, d: DesignVector) -> bool:
        if not self.h[0] <= d.h <= self.h[1]:
            return False
        for _, p, w in d.blocks():
            lo, hi = self.w_range(p)
            if not (self.p[0] <= p <= self.p[1] and lo <= w <= hi + 1e-9):
                return False
        return True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "DesignRanges":
        return cls(tuple(doc["h"]), tuple(doc["p"]), doc["w_min"], doc["gap"])


def sample_design(ranges: DesignRanges, rng: np.random.Generator) -> DesignVector:
    h = rng.uniform(*ranges.h)
    lc = rng.choice(LC_LEVELS, size=3)
    p = rng.uniform(*ranges.p, size=3)
    w = [rng.uniform(*ranges.w_range(pi)) for pi in p]
    return DesignVector(h, *lc, *p, *w)


def sample_designs(ranges: DesignRanges, rng: np.random.Generator, n: int) -> np.ndarray:
    """Vectorized variant of :func:`sample_design`, returning an (n, 10) array."""
    out = np.empty((n, 10))
    out[:, 0] = rng.uniform(*ranges.h, size=n)
    out[:, 1:4] = rng.choice(LC_LEVELS, size=(n, 3))
    out[:, 4:7] = rng.uniform(*ranges.p, size=(n, 3))
    u = rng.uniform(size=(n, 3))
    out[:, 7:10] = ranges.w_min + u * (out[:, 4:7] - ranges.gap - ranges.w_min)
    return out


class Scaler:
    """Affine map of each design parameter onto [-1, 1] from the range bounds."""

    def __init__(self, ranges: DesignRanges | None = None):
        b = (ranges or DesignRanges()).bounds()
        self.lo = b[:, 0].copy()
        self.span = b[:, 1] - b[:, 0]

    def transform(self, designs: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(designs, dtype=np.float64) - self.lo) / self.span - 1.0

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return (np.asarray(scaled, dtype=np.float64) + 1.0) * 0.5 * self.span + self.lo


@dataclass
class Dataset:
    designs: np.ndarray  # (n, 10)
    spectra: np.ndarray  # (n, 200)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.designs = np.atleast_2d(np.asarray(self.designs, dtype=np.float64))
        self.spectra = np.atleast_2d(np.asarray(self.spectra, dtype=np.float64))
        if self.designs.shape[1] != 10 or self.spectra.shape[1] != N_WAVELENGTHS:
            raise DatasetError(f"bad shapes {self.designs.shape}, {self.spectra.shape}")
        if len(self.designs) != len(self.spectra):
            raise DatasetError("design and spectrum counts differ")

    def __len__(self) -> int:
        return len(self.designs)

    def design(self, i: int) -> DesignVector:
        return DesignVector.from_array(self.designs[i])

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.designs[idx], self.spectra[idx], dict(self.manifest))


def instance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def generate(
    n: int,
    seed: int,
    ranges: DesignRanges | None = None,
    materials: MaterialDb | None = None,
    command: str | None = None,
) -> Dataset:
    """``n`` random designs with surrogate spectra; instance i depends only on (seed, i)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    ranges = ranges or DesignRanges()
    materials = materials or MaterialDb()
    designs, spectra, seen = [], [], set()
    for i in range(n):
        rng = instance_rng(seed, i)
        d = sample_design(ranges, rng)
        while d in seen:  # practically unreachable with continuous parameters
            d = sample_design(ranges, rng)
        seen.add(d)
        try:
            spectra.append(supercell_reflectance(d, materials))
        except (ValueError, FloatingPointError) as exc:
            raise DatasetError(f"surrogate failed for instance {i} ({d}): {exc}") from exc
        designs.append(d.as_array())
    manifest = {
        "seed": int(seed),
        "n": int(n),
        "ranges": ranges.to_dict(),
        "grid": {"min_nm": float(WAVELENGTHS_NM[0]), "max_nm": float(WAVELENGTHS_NM[-1]), "count": N_WAVELENGTHS},
        "materials": materials.to_config(),
        "materials_hash": materials.config_hash(),
        "command": command if command is not None else " ".join(sys.argv),
    }
    return Dataset(np.array(designs), np.array(spectra), manifest)


def split(dataset: Dataset, train_fraction: float = 0.9, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:])


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DESIGN_COLUMNS + SPECTRUM_COLUMNS)
        for d, s in zip(dataset.designs, dataset.spectra):
            writer.writerow([repr(float(v)) for v in d] + [repr(float(v)) for v in s])
    manifest = dict(dataset.manifest)
    manifest["data_sha256"] = _sha256(path)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load(path: str | Path, verify_manifest: bool = True) -> Dataset:
    path = Path(path)
    mpath = manifest_path(path)
    manifest: dict = {}
    if verify_manifest:
        if not mpath.exists():
            raise DatasetError(f"missing manifest {mpath}")
        manifest = json.loads(mpath.read_text())
    ranges = DesignRanges.from_dict(manifest["ranges"]) if "ranges" in manifest else DesignRanges()

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DESIGN_COLUMNS + SPECTRUM_COLUMNS:
            raise DatasetError(f"{path}: malformed header")
        designs, spectra = [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            try:
                values = [float(v) for v in row]
                d = DesignVector.from_array(values[:10])
            except (ValueError, InvalidDesign) as exc:
                raise DatasetError(f"{path}: row {row_no}: {exc}") from None
            s = values[10:]
            if not ranges.contains(d):
                raise DatasetError(f"{path}: row {row_no}: design outside ranges")
            if min(s) < 0.0 or max(s) > 1.0:
                raise DatasetError(f"{path}: row {row_no}: reflectance outside [0, 1]")
            designs.append(values[:10])
            spectra.append(s)
    if not designs:
        raise DatasetError(f"{path}: no data rows")
    # rows are checked first so a damaged file reports the offending row
    if verify_manifest and manifest.get("data_sha256") != _sha256(path):
        raise DatasetError(f"manifest hash mismatch: {mpath} does not describe {path}")
    return Dataset(np.array(designs), np.array(spectra), manifest)
