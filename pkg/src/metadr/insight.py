"""Reading physics out of a single-layer design encoder.

With a pseudo-encoder whose design side is one dense layer (10 -> k), each
bottleneck node sees a weighted sum of the design parameters. Parameters
that feed mostly one node should act on the response only through that sum;
``invariance_experiment`` checks this against the surrogate solver alone.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset, DesignRanges, sample_design
from .dr_design import PseudoEncoder, train_pseudo_encoder
from .dr_response import ResponseAutoencoder
from .materials import LC_LEVELS, MaterialDb
from .nnet import TrainConfig, TrainReport
from .surrogate import LC_NAMES, PARAM_NAMES, WAVELENGTHS_NM, DesignVector, supercell_reflectance

INTERPRETABLE_LAYERS = (10, 4, 10, 50, 20, 10)


def train_interpretable_pe(
    train: Dataset, val: Dataset, ae: ResponseAutoencoder, config: TrainConfig | None = None
) -> tuple[PseudoEncoder, TrainReport]:
    if ae.m != INTERPRETABLE_LAYERS[-1]:
        raise ValueError(f"the interpretable pseudo-encoder needs a {INTERPRETABLE_LAYERS[-1]}-feature autoencoder")
    return train_pseudo_encoder(train, val, ae, INTERPRETABLE_LAYERS, config)


@dataclass(frozen=True)
class WeightMap:
    weights: np.ndarray  # (k, 10), signed

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 10:
            raise ValueError(f"weight map must be k x 10, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weight map has non-finite entries")
        object.__setattr__(self, "weights", w)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.weights)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", *PARAM_NAMES])
            for i, row in enumerate(self.weights):
                w.writerow([i, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "WeightMap":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["node", *PARAM_NAMES]:
            raise ValueError(f"{path}: not a weight-map CSV")
        return cls(np.array([[float(v) for v in r[1:]] for r in rows[1:]]))


def extract_weight_map(pe: PseudoEncoder) -> WeightMap:
    if pe.bottleneck != 1:
        raise ValueError(f"design encoder has {pe.bottleneck} layers; weight maps need exactly one")
    return WeightMap(pe.mlp.weights[0].copy())


def dominant_node(weight_map: WeightMap, parameter_group: Iterable[str]) -> tuple[int, float]:
    """Node with the largest summed |weight| over the group, and its share of the total."""
    group = list(parameter_group)
    if not group:
        raise ValueError("empty parameter group")
    unknown = [g for g in group if g not in PARAM_NAMES]
    if unknown:
        raise ValueError(f"unknown parameters {unknown}")
    cols = [PARAM_NAMES.index(g) for g in group]
    per_node = weight_map.magnitudes[:, cols].sum(axis=1)
    total = per_node.sum()
    node = int(np.argmax(per_node))  # first index wins ties
    return node, float(per_node[node] / total) if total > 0 else 0.0


def lc_weights(pe: PseudoEncoder, node: int) -> np.ndarray:
    if not 0 <= node < pe.k:
        raise ValueError(f"node {node} outside 0..{pe.k - 1}")
    cols = [PARAM_NAMES.index(n) for n in LC_NAMES]
    # all lc share one affine scaling, so raw-unit sums are proportional to scaled ones
    return extract_weight_map(pe).weights[node, cols]


def equal_sum_levels(weights: Sequence[float], target: float, rel_tol: float = 0.02) -> list[tuple[float, ...]]:
    """All lc triples on the 11-level grid whose weighted sum is within rel_tol of target."""
    w = np.asarray(weights, dtype=np.float64)
    tol = rel_tol * abs(target)
    out = []
    for triple in itertools.product(LC_LEVELS, repeat=3):
        if abs(float(np.dot(w, triple)) - target) <= tol + 1e-12:
            out.append(tuple(float(v) for v in triple))
    return out


def equal_weighted_sum_designs(
    pe: PseudoEncoder,
    base: DesignVector,
    node: int,
    n_sets: int,
    rng: np.random.Generator,
    rel_tol: float = 0.02,
) -> list[DesignVector]:
    """Variants of ``base`` that differ only in lc1..lc3 and keep the node's lc sum.

    The base design comes first; the rest are drawn without replacement from
    every qualifying triple on the lc grid.
    """
    w = lc_weights(pe, node)
    base_lc = (base.lc1, base.lc2, base.lc3)
    s = float(np.dot(w, base_lc))
    others = [t for t in equal_sum_levels(w, s, rel_tol) if t != base_lc]
    if len(others) + 1 < n_sets:
        raise ValueError(
            f"only {len(others) + 1} lc triples keep the weighted sum {s:.4g} within {rel_tol:.0%}; asked for {n_sets}"
        )
    picks = [others[i] for i in rng.choice(len(others), size=n_sets - 1, replace=False)] if n_sets > 1 else []
    return [base] + [base.replace(lc1=a, lc2=b, lc3=c) for a, b, c in picks]


@dataclass
class InvarianceReport:
    groups: list[list[DesignVector]]
    within_group: list[float]  # mean pairwise spectral MSE inside each group
    within_mean: float
    cross_mean: float

    @property
    def ratio(self) -> float:
        return self.within_mean / self.cross_mean if self.cross_mean > 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "groups": [[dict(zip(PARAM_NAMES, d.as_array().tolist())) for d in g] for g in self.groups],
            "within_group_mse": self.within_group,
            "within_mean_mse": self.within_mean,
            "cross_mean_mse": self.cross_mean,
            "ratio": self.ratio,
        }


def _pair_mse(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(d @ d)


def invariance_experiment(
    design_groups: Sequence[Sequence[DesignVector]], materials: MaterialDb | None = None
) -> InvarianceReport:
    """Compare spectra inside and across groups, using the surrogate only."""
    if len(design_groups) < 2 or any(len(g) < 2 for g in design_groups):
        raise ValueError("need at least two groups of at least two designs each")
    materials = materials or MaterialDb()
    spectra = [[supercell_reflectance(d, materials) for d in g] for g in design_groups]
    within_each, within_all = [], []
    for group in spectra:
        pairs = [_pair_mse(a, b) for a, b in itertools.combinations(group, 2)]
        within_each.append(float(np.mean(pairs)))
        within_all += pairs
    cross = [
        _pair_mse(a, b)
        for g1, g2 in itertools.combinations(range(len(spectra)), 2)
        for a in spectra[g1]
        for b in spectra[g2]
    ]
    return InvarianceReport(
        [list(g) for g in design_groups], within_each, float(np.mean(within_all)), float(np.mean(cross))
    )


def parameter_sweep(
    base: DesignVector,
    parameter: str,
    values: Sequence[float],
    materials: MaterialDb | None = None,
    ranges: DesignRanges | None = None,
) -> np.ndarray:
    """One surrogate spectrum per value of ``parameter``, others held at ``base``."""
    if parameter not in PARAM_NAMES:
        raise ValueError(f"unknown parameter {parameter!r}")
    materials = materials or MaterialDb()
    ranges = ranges or DesignRanges()
    spectra = []
    for v in values:
        d = base.replace(**{parameter: v})
        if not ranges.contains(d):
            raise ValueError(f"{parameter}={v} puts the design outside the allowed ranges")
        spectra.append(supercell_reflectance(d, materials))
    return np.array(spectra)


def write_sweep_csv(values: Sequence[float], spectra: np.ndarray, parameter: str, path: str | Path) -> None:
    """Long format: one row per (value, wavelength)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([parameter, "wavelength_nm", "reflectance"])
        for v, s in zip(values, spectra):
            for lam, r in zip(WAVELENGTHS_NM, s):
                w.writerow([repr(float(v)), repr(float(lam)), repr(float(r))])


def attainable_sums(weights: Sequence[float]) -> np.ndarray:
    grid = np.array(list(itertools.product(LC_LEVELS, repeat=3)))
    return grid @ np.asarray(weights, dtype=np.float64)


def weighted_sum_groups(
    pe: PseudoEncoder,
    base: DesignVector,
    node: int,
    n_groups: int,
    n_sets: int,
    rng: np.random.Generator,
    min_gap: float = 0.0,
    max_tries: int = 10_000,
) -> list[list[DesignVector]]:
    """Groups of ``base`` variants, one weighted lc sum per group.

    The first group keeps the base lc triple; later sums come from random
    triples and differ pairwise by at least ``min_gap`` of the attainable range.
    """
    w = lc_weights(pe, node)
    sums = attainable_sums(w)
    gap = max(min_gap * float(sums.max() - sums.min()), 1e-9)
    groups = [equal_weighted_sum_designs(pe, base, node, n_sets, rng)]
    chosen = [float(np.dot(w, (base.lc1, base.lc2, base.lc3)))]
    for _ in range(max_tries):
        if len(groups) == n_groups:
            return groups
        triple = [float(v) for v in rng.choice(LC_LEVELS, size=3)]
        s = float(np.dot(w, triple))
        if any(abs(s - c) < gap for c in chosen):
            continue
        try:
            variant = base.replace(lc1=triple[0], lc2=triple[1], lc3=triple[2])
            groups.append(equal_weighted_sum_designs(pe, variant, node, n_sets, rng))
        except ValueError:
            continue
        chosen.append(s)
    if len(groups) < n_groups:
        raise ValueError(f"found only {len(groups)} of {n_groups} weighted-sum groups with {n_sets} designs each")
    return groups


def invariance_trial(
    pe: PseudoEncoder,
    node: int,
    rng: np.random.Generator,
    n_sets: int = 3,
    n_groups: int = 2,
    min_gap: float = 0.25,
    ranges: DesignRanges | None = None,
    materials: MaterialDb | None = None,
    max_bases: int = 100,
) -> InvarianceReport:
    """One repetition of the equal-sum experiment around a random base design."""
    ranges = ranges or DesignRanges()
    for _ in range(max_bases):
        base = sample_design(ranges, rng)
        try:
            groups = weighted_sum_groups(pe, base, node, n_groups, n_sets, rng, min_gap)
        except ValueError:
            continue
        return invariance_experiment(groups, materials)
    raise RuntimeError(f"no usable base design in {max_bases} draws")
