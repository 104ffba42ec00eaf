"""Inverse design: spectrum -> reduced design, then search back to full designs.

The inverse network is the frozen response encoder followed by a small
trained head that predicts reduced design coordinates. Recovering physical
designs from those coordinates is one-to-many, so candidate designs are
scored through the pseudo-encoder's design encoder and the best ones are
re-checked with the surrogate solver.
"""
from __future__ import annotations

import json
import logging
import operator
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nnet
from .dataset import Dataset, DesignRanges, sample_designs
from .dr_design import PseudoEncoder, encode_design
from .dr_response import ResponseAutoencoder, encode_response
from .materials import LC_LEVELS, MaterialDb
from .nnet import Mlp, TrainConfig, TrainReport
from .surrogate import N_WAVELENGTHS, PARAM_NAMES, WAVELENGTHS_NM, DesignVector, supercell_reflectance

log = logging.getLogger(__name__)

DEFAULT_HEAD = (10, 16, 8, 5)
_LC_IDX = (1, 2, 3)
_P_IDX = (4, 5, 6)
_W_IDX = (7, 8, 9)


class SearchError(RuntimeError):
    pass


@dataclass
class InverseModel:
    encoder: Mlp  # frozen copy of the autoencoder's encoder half
    head: Mlp

    def __post_init__(self) -> None:
        if self.encoder.n_out != self.head.n_in:
            raise ValueError(f"head expects {self.head.n_in} inputs, encoder emits {self.encoder.n_out}")

    @property
    def k(self) -> int:
        return self.head.n_out

    def to_dict(self) -> dict:
        return {"kind": "inverse_model", "encoder": nnet.to_dict(self.encoder), "head": nnet.to_dict(self.head)}

    @classmethod
    def from_dict(cls, doc: dict) -> "InverseModel":
        if doc.get("kind") != "inverse_model":
            raise ValueError("not an inverse-model document")
        return cls(nnet.from_dict(doc["encoder"]), nnet.from_dict(doc["head"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "InverseModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_inverse(
    train: Dataset,
    val: Dataset,
    ae: ResponseAutoencoder,
    pe: PseudoEncoder,
    head_layers: Sequence[int] = DEFAULT_HEAD,
    config: TrainConfig | None = None,
) -> tuple[InverseModel, TrainReport]:
    config = config or TrainConfig()
    sizes = list(head_layers)
    if sizes[0] != ae.m:
        raise ValueError(f"head input {sizes[0]} does not match response code size {ae.m}")
    if sizes[-1] != pe.k:
        raise ValueError(f"head output {sizes[-1]} does not match reduced design size {pe.k}")
    acts = ["tanh"] * (len(sizes) - 2) + ["identity"]
    head = nnet.init_mlp(sizes, acts, config.seed)
    head, report = nnet.train(
        head,
        (encode_response(ae, train.spectra), encode_design(pe, train.designs)),
        (encode_response(ae, val.spectra), encode_design(pe, val.designs)),
        config,
    )
    return InverseModel(ae.encoder, head), report


@dataclass(frozen=True)
class TargetSpec:
    spectrum: np.ndarray
    band: tuple[float, float] | None = None  # nm; None means the whole grid

    def __post_init__(self) -> None:
        s = np.asarray(self.spectrum, dtype=np.float64)
        if s.shape != (N_WAVELENGTHS,):
            raise ValueError(f"target spectrum must have {N_WAVELENGTHS} samples")
        if np.any((s < 0) | (s > 1)):
            raise ValueError("target reflectance outside [0, 1]")
        object.__setattr__(self, "spectrum", s)
        if self.band is not None:
            a, b = self.band
            if not WAVELENGTHS_NM[0] <= a < b <= WAVELENGTHS_NM[-1]:
                raise ValueError(f"band {self.band} not inside the wavelength grid")

    @classmethod
    def flat(cls, value: float, band: tuple[float, float] | None = None) -> "TargetSpec":
        return cls(np.full(N_WAVELENGTHS, float(value)), band)


def target_reduced_design(inv: InverseModel, target) -> np.ndarray:
    spectrum = target.spectrum if isinstance(target, TargetSpec) else np.asarray(target, dtype=np.float64)
    if spectrum.shape[-1] != inv.encoder.n_in:
        raise ValueError(f"spectrum has {spectrum.shape[-1]} samples, expected {inv.encoder.n_in}")
    return inv.head(inv.encoder(spectrum))


# ---------------------------------------------------------------- constraints

_OPS: dict[str, Callable] = {
    "=": np.isclose,
    "==": np.isclose,
    "<=": operator.le,
    ">=": operator.ge,
    "<": operator.lt,
    ">": operator.gt,
}
_CONSTRAINT_RE = re.compile(r"^\s*(\w+)\s*(==|<=|>=|=|<|>)\s*(\S+)\s*$")


@dataclass(frozen=True)
class Constraint:
    """``param op value`` where value is a number or another parameter name."""

    param: str
    op: str
    value: float | str

    def __post_init__(self) -> None:
        if self.param not in PARAM_NAMES:
            raise ValueError(f"unknown design parameter {self.param!r}")
        if self.op not in _OPS:
            raise ValueError(f"unknown operator {self.op!r}")
        if isinstance(self.value, str) and self.value not in PARAM_NAMES:
            raise ValueError(f"unknown design parameter {self.value!r}")

    @classmethod
    def parse(cls, text: str) -> "Constraint":
        m = _CONSTRAINT_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse constraint {text!r}; expected e.g. 'h=190' or 'w1>=150'")
        param, op, raw = m.groups()
        try:
            value: float | str = float(raw)
        except ValueError:
            value = raw
        return cls(param, op, value)

    @property
    def is_pin(self) -> bool:
        return self.op in ("=", "==")

    def mask(self, designs: np.ndarray) -> np.ndarray:
        lhs = designs[:, PARAM_NAMES.index(self.param)]
        rhs = designs[:, PARAM_NAMES.index(self.value)] if isinstance(self.value, str) else self.value
        return _OPS[self.op](lhs, rhs)

    def __call__(self, design: DesignVector) -> bool:
        return bool(self.mask(design.as_array()[None, :])[0])


@dataclass
class ConstraintSet:
    constraints: list[Constraint] = field(default_factory=list)
    predicates: list[Callable[[DesignVector], bool]] = field(default_factory=list)

    @classmethod
    def parse(cls, texts: Sequence[str]) -> "ConstraintSet":
        return cls([Constraint.parse(t) for t in texts])

    def pin(self, designs: np.ndarray) -> np.ndarray:
        """Overwrite pinned columns in place; returns the same array."""
        for c in self.constraints:
            if c.is_pin:
                i = PARAM_NAMES.index(c.param)
                designs[:, i] = designs[:, PARAM_NAMES.index(c.value)] if isinstance(c.value, str) else c.value
        return designs

    def pinned_columns(self) -> set[int]:
        return {PARAM_NAMES.index(c.param) for c in self.constraints if c.is_pin}

    def mask(self, designs: np.ndarray) -> np.ndarray:
        keep = np.ones(len(designs), dtype=bool)
        for c in self.constraints:
            keep &= c.mask(designs)
        if self.predicates and keep.any():
            idx = np.flatnonzero(keep)
            ok = [all(p(DesignVector.from_array(designs[i])) for p in self.predicates) for i in idx]
            keep[idx] = ok
        return keep


def valid_mask(designs: np.ndarray, ranges: DesignRanges) -> np.ndarray:
    """Rows that are legal designs inside ``ranges``."""
    tol = 1e-9
    h = designs[:, 0]
    p = designs[:, list(_P_IDX)]
    w = designs[:, list(_W_IDX)]
    lc = designs[:, list(_LC_IDX)]
    ok = (h >= ranges.h[0] - tol) & (h <= ranges.h[1] + tol)
    ok &= np.all((p >= ranges.p[0] - tol) & (p <= ranges.p[1] + tol), axis=1)
    ok &= np.all((w >= ranges.w_min - tol) & (w <= p - ranges.gap + tol), axis=1)
    ok &= np.all(np.min(np.abs(lc[..., None] - LC_LEVELS), axis=-1) < 1e-12, axis=1)
    return ok


# ---------------------------------------------------------------- search


@dataclass
class SearchConfig:
    strategy: str = "beam"  # "grid", "random" or "beam"
    resolution: int = 10  # grid values per continuous parameter; lc always uses its 11 levels
    budget: int = 1_000_000  # random candidates for "random" and "beam"
    top_k: int = 4
    beam_width: int = 100
    refine_rounds: int = 8
    seed: int = 0
    chunk: int = 200_000
    n_verify: int = 1000  # candidates re-simulated by design()
    min_separation: float = 0.25  # scaled-design L2 distance between reported designs

    def __post_init__(self) -> None:
        if self.strategy not in ("grid", "random", "beam"):
            raise ValueError(f"unknown search strategy {self.strategy!r}")
        if self.budget < 1 or self.top_k < 1 or self.resolution < 1:
            raise ValueError("budget, top_k and resolution must be >= 1")


def parameter_grid(ranges: DesignRanges, resolution: int) -> list[np.ndarray]:
    """Candidate values per parameter; widths span their loosest range."""
    b = ranges.bounds()
    axes = []
    for i in range(10):
        if i in _LC_IDX:
            axes.append(LC_LEVELS.copy())
        else:
            axes.append(np.linspace(b[i, 0], b[i, 1], resolution) if resolution > 1 else np.array([b[i].mean()]))
    return axes


class _TopPool:
    """Running best-K set under (distance, design tuple) ordering."""

    def __init__(self, k: int):
        self.k = k
        self.designs = np.empty((0, 10))
        self.dist = np.empty(0)

    def add(self, designs: np.ndarray, dist: np.ndarray) -> None:
        if len(designs) == 0:
            return
        d = np.concatenate([self.designs, designs])
        s = np.concatenate([self.dist, dist])
        if len(s) > 4 * self.k:
            # keep everything tied with the k-th distance so tie-breaking stays exact
            cut = np.partition(s, self.k - 1)[self.k - 1]
            keep = s <= cut
            d, s = d[keep], s[keep]
        d, uniq = np.unique(d, axis=0, return_index=True)
        s = s[uniq]
        order = np.lexsort(tuple(d[:, j] for j in range(9, -1, -1)) + (s,))
        self.designs, self.dist = d[order][: self.k], s[order][: self.k]


def _score(pe: PseudoEncoder, designs: np.ndarray, target_code: np.ndarray) -> np.ndarray:
    diff = encode_design(pe, designs) - target_code
    return np.einsum("ij,ij->i", diff, diff)


def _filter(designs: np.ndarray, ranges: DesignRanges, constraints: ConstraintSet) -> np.ndarray:
    designs = designs[valid_mask(designs, ranges)]
    return designs[constraints.mask(designs)] if len(designs) else designs


def _grid_chunks(axes: list[np.ndarray], chunk: int):
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape, dtype=np.int64))
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, shape)
        yield np.column_stack([a[i] for a, i in zip(axes, idx)])


def _random_chunks(ranges: DesignRanges, constraints: ConstraintSet, budget: int, seed: int, chunk: int):
    rng = np.random.default_rng(seed)
    pinned_w = constraints.pinned_columns() & set(_W_IDX)
    for start in range(0, budget, chunk):
        n = min(chunk, budget - start)
        cand = sample_designs(ranges, rng, n)
        constraints.pin(cand)
        if not pinned_w:
            # re-draw widths for pinned pitches so they stay conditional on the final pitch
            u = rng.uniform(size=(n, 3))
            p = cand[:, list(_P_IDX)]
            cand[:, list(_W_IDX)] = ranges.w_min + u * (p - ranges.gap - ranges.w_min)
            constraints.pin(cand)
        yield cand


def _refine(
    pe: PseudoEncoder,
    target_code: np.ndarray,
    start: np.ndarray,
    ranges: DesignRanges,
    constraints: ConstraintSet,
    config: SearchConfig,
    pool: _TopPool,
) -> None:
    """Coordinate descent on a shrinking grid around each beam member."""
    b = ranges.bounds()
    free = [i for i in range(10) if i not in constraints.pinned_columns()]
    beam = start.copy()
    best = _score(pe, beam, target_code)
    for rnd in range(config.refine_rounds):
        half = 0.5 ** (rnd + 1)
        for i in free:
            n_vals = len(LC_LEVELS) if i in _LC_IDX else config.resolution
            trial = np.repeat(beam, n_vals, axis=0)
            if i in _LC_IDX:
                trial[:, i] = np.tile(LC_LEVELS, len(beam))
            else:
                span = (b[i, 1] - b[i, 0]) * half
                offsets = np.tile(np.linspace(-span, span, n_vals), len(beam))
                trial[:, i] = np.clip(trial[:, i] + offsets, b[i, 0], b[i, 1])
            owner = np.repeat(np.arange(len(beam)), n_vals)
            keep = valid_mask(trial, ranges) & constraints.mask(trial)
            trial, owner = trial[keep], owner[keep]
            if len(trial) == 0:
                continue
            d = _score(pe, trial, target_code)
            pool.add(trial, d)
            # best trial per beam member
            order = np.lexsort((d, owner))
            first = order[np.r_[True, owner[order][1:] != owner[order][:-1]]]
            for t in first:
                j = owner[t]
                if d[t] < best[j]:
                    best[j], beam[j] = d[t], trial[t]


def search_designs(
    pe: PseudoEncoder,
    target_code: np.ndarray,
    ranges: DesignRanges | None = None,
    config: SearchConfig | None = None,
    constraints: ConstraintSet | None = None,
) -> list[tuple[DesignVector, float]]:
    """Designs whose reduced coordinates lie closest to ``target_code``, best first."""
    ranges = ranges or pe.ranges
    config = config or SearchConfig()
    constraints = constraints or ConstraintSet()
    target_code = np.asarray(target_code, dtype=np.float64)
    if target_code.shape != (pe.k,):
        raise ValueError(f"target code must have length {pe.k}")

    keep_k = max(config.top_k, config.beam_width if config.strategy == "beam" else 0)
    pool = _TopPool(keep_k)
    if config.strategy == "grid":
        axes = parameter_grid(ranges, config.resolution)
        for c in constraints.constraints:
            if c.is_pin and not isinstance(c.value, str):
                axes[PARAM_NAMES.index(c.param)] = np.array([float(c.value)])
        chunks = _grid_chunks(axes, config.chunk)
    else:
        chunks = _random_chunks(ranges, constraints, config.budget, config.seed, config.chunk)
    for cand in chunks:
        cand = _filter(cand, ranges, constraints)
        if len(cand):
            pool.add(cand, _score(pe, cand, target_code))
    if len(pool.dist) == 0:
        raise SearchError("no candidate design satisfies the constraints")
    if config.strategy == "beam":
        _refine(pe, target_code, pool.designs[: config.beam_width], ranges, constraints, config, pool)
    pool.k = config.top_k
    pool.add(np.empty((0, 10)), np.empty(0))
    n = min(config.top_k, len(pool.dist))
    return [(DesignVector.from_array(pool.designs[i]), float(pool.dist[i])) for i in range(n)]


# ---------------------------------------------------------------- verification


def band_mse(spectrum: np.ndarray, target: TargetSpec) -> float:
    """Trapezoidal mean of the squared reflectance error over the target band."""
    lam = WAVELENGTHS_NM
    sel = np.ones(len(lam), dtype=bool)
    if target.band is not None:
        sel = (lam >= target.band[0]) & (lam <= target.band[1])
    if sel.sum() < 2:
        raise ValueError("band contains fewer than two grid wavelengths")
    err = (np.asarray(spectrum) - target.spectrum)[sel] ** 2
    x = lam[sel]
    return float(np.trapezoid(err, x) / (x[-1] - x[0]))


def verify_candidates(
    designs: Sequence[DesignVector], target: TargetSpec, materials: MaterialDb | None = None
) -> list[tuple[DesignVector, float]]:
    """Simulate every design and rank by band MSE (ascending, ties by design order)."""
    if not designs:
        raise ValueError("no designs to verify")
    materials = materials or MaterialDb()
    scored = [(d, band_mse(supercell_reflectance(d, materials), target)) for d in designs]
    return sorted(scored, key=lambda item: (item[1], item[0]))


def _spread(ranked: list[tuple[DesignVector, float]], pe: PseudoEncoder, config: SearchConfig):
    """Greedy best-first pick of top_k designs at least min_separation apart.

    Falls back to the plain ranking when too few candidates are far enough apart.
    """
    picked: list[tuple[DesignVector, float]] = []
    coords: list[np.ndarray] = []
    for d, score in ranked:
        x = pe.scale(d)
        if all(np.linalg.norm(x - c) >= config.min_separation for c in coords):
            picked.append((d, score))
            coords.append(x)
            if len(picked) == config.top_k:
                return picked
    rest = [item for item in ranked if item not in picked]
    return sorted(picked + rest[: config.top_k - len(picked)], key=lambda item: (item[1], item[0]))


@dataclass
class DesignModels:
    ae: ResponseAutoencoder
    pe: PseudoEncoder
    inv: InverseModel

    def __post_init__(self) -> None:
        if self.inv.k != self.pe.k:
            raise ValueError(f"inverse model predicts {self.inv.k} reduced parameters, pseudo-encoder has {self.pe.k}")
        if self.inv.encoder.n_out != self.ae.m or self.pe.m != self.ae.m:
            raise ValueError("model dimensions are inconsistent with the autoencoder bottleneck")


def design(
    target: TargetSpec,
    models: DesignModels,
    config: SearchConfig | None = None,
    constraints: ConstraintSet | None = None,
    materials: MaterialDb | None = None,
) -> dict:
    """Full inverse pipeline; returns a JSON-ready report of the best designs."""
    config = config or SearchConfig()
    code = target_reduced_design(models.inv, target)
    pool_cfg = replace(config, top_k=max(config.top_k, config.n_verify))
    found = search_designs(models.pe, code, models.pe.ranges, pool_cfg, constraints)
    distance = {d: dist for d, dist in found}
    ranked = _spread(verify_candidates([d for d, _ in found], target, materials), models.pe, config)
    return {
        "target_code": code.tolist(),
        "band_nm": list(target.band) if target.band else [float(WAVELENGTHS_NM[0]), float(WAVELENGTHS_NM[-1])],
        "search": {
            "strategy": config.strategy,
            "budget": config.budget,
            "resolution": config.resolution,
            "seed": config.seed,
            "verified": len(found),
        },
        "designs": [
            {
                "rank": r + 1,
                "design": dict(zip(PARAM_NAMES, d.as_array().tolist())),
                "reduced_design": encode_design(models.pe, d).tolist(),
                "code_distance": distance[d],
                "band_mse": mse_value,
            }
            for r, (d, mse_value) in enumerate(ranked)
        ],
    }
