"""Transfer-matrix surrogate for the three-block GST/gold metasurface.

Each building block is homogenized into a planar stack

    air | ribbon layer (gold/air, series mixed) | GST | gold mirror | SiO2

and the supercell reflectance is the pitch-weighted incoherent average of the
three block reflectances at normal incidence.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .materials import MaterialDb, drude_eps, is_lc_level

PARAM_NAMES = ("h", "lc1", "lc2", "lc3", "p1", "p2", "p3", "w1", "w2", "w3")
LC_NAMES = ("lc1", "lc2", "lc3")

LAMBDA_MIN_NM = 1250.0
LAMBDA_MAX_NM = 1850.0
N_WAVELENGTHS = 200
WAVELENGTHS_NM = np.linspace(LAMBDA_MIN_NM, LAMBDA_MAX_NM, N_WAVELENGTHS)

RIBBON_THICKNESS_NM = 50.0
MIRROR_THICKNESS_NM = 100.0
MIN_RIBBON_GAP_NM = 50.0


class InvalidDesign(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DesignVector:
    """GST thickness, three crystallization levels, three pitches, three widths (nm)."""

    h: float
    lc1: float
    lc2: float
    lc3: float
    p1: float
    p2: float
    p3: float
    w1: float
    w2: float
    w3: float

    def __post_init__(self) -> None:
        for f in fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))
        self.check()

    def check(self) -> None:
        values = astuple(self)
        if not all(np.isfinite(values)):
            raise InvalidDesign(f"non-finite design value in {values}")
        if self.h <= 0:
            raise InvalidDesign(f"h must be positive, got {self.h}")
        for i, (lc, p, w) in enumerate(self.blocks(), 1):
            if not is_lc_level(lc):
                raise InvalidDesign(f"lc{i}={lc} is not one of the 11 levels")
            if p <= 0 or w <= 0:
                raise InvalidDesign(f"block {i}: pitch and width must be positive")
            if w > p - MIN_RIBBON_GAP_NM + 1e-9:
                raise InvalidDesign(f"block {i}: w{i}={w} exceeds p{i}-{MIN_RIBBON_GAP_NM:g}={p - MIN_RIBBON_GAP_NM}")

    def blocks(self) -> list[tuple[float, float, float]]:
        """(lc, p, w) of each building block."""
        return [(self.lc1, self.p1, self.w1), (self.lc2, self.p2, self.w2), (self.lc3, self.p3, self.w3)]

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "DesignVector":
        values = list(values)
        if len(values) != len(PARAM_NAMES):
            raise InvalidDesign(f"expected {len(PARAM_NAMES)} design values, got {len(values)}")
        return cls(*values)

    @classmethod
    def parse(cls, text: str) -> "DesignVector":
        """Parse ``"h,lc1,lc2,lc3,p1,p2,p3,w1,w2,w3"``."""
        try:
            return cls.from_array(float(v) for v in text.split(","))
        except ValueError as exc:
            raise InvalidDesign(f"cannot parse design {text!r}: {exc}") from None

    def replace(self, **changes: float) -> "DesignVector":
        values = dict(zip(PARAM_NAMES, astuple(self)))
        values.update(changes)
        return DesignVector(**values)

    def permuted(self, order: Sequence[int]) -> "DesignVector":
        b = self.blocks()
        lc, p, w = zip(*(b[i] for i in order))
        return DesignVector(self.h, *lc, *p, *w)


@dataclass(frozen=True)
class LayerStack:
    """Layers listed from the incidence side; thicknesses in nm.

    ``indices`` entries may be scalars or arrays matching the wavelength grid.
    """

    indices: tuple
    thicknesses: tuple[float, ...]
    n_incident: complex = 1.0
    n_substrate: complex = 1.444

    def __post_init__(self) -> None:
        if len(self.indices) != len(self.thicknesses):
            raise ValueError("indices and thicknesses differ in length")
        if any(t < 0 for t in self.thicknesses):
            raise ValueError("negative layer thickness")
        if complex(self.n_incident).imag < 0 or complex(self.n_substrate).imag < 0:
            raise ValueError("half-space indices must have Im(n) >= 0")

    def __len__(self) -> int:
        return len(self.thicknesses)


def _char_matrix_product(indices, thicknesses, lam):
    one = np.ones_like(lam, dtype=np.complex128)
    m11, m12, m21, m22 = one, 0 * one, 0 * one, one
    for n, d in zip(indices, thicknesses):
        n = np.asarray(n, dtype=np.complex128) * one
        delta = 2.0 * np.pi * n * d / lam
        c, s = np.cos(delta), np.sin(delta)
        a11, a12, a21, a22 = c, -1j * s / n, -1j * n * s, c
        m11, m12, m21, m22 = (
            m11 * a11 + m12 * a21,
            m11 * a12 + m12 * a22,
            m21 * a11 + m22 * a21,
            m21 * a12 + m22 * a22,
        )
    return m11, m12, m21, m22


def stack_amplitudes(stack: LayerStack, wavelength_nm):
    """Complex (r, t) amplitudes of a stack at normal incidence."""
    lam = np.asarray(wavelength_nm, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("wavelength must be positive")
    n0 = complex(stack.n_incident)
    ns = complex(stack.n_substrate)
    m11, m12, m21, m22 = _char_matrix_product(stack.indices, stack.thicknesses, lam)
    b = m11 + m12 * ns
    c = m21 + m22 * ns
    denom = n0 * b + c
    if np.any(denom == 0):
        raise ValueError("singular characteristic matrix")
    return (n0 * b - c) / denom, 2.0 * n0 / denom


def stack_reflectance(stack: LayerStack, wavelength_nm):
    r, _ = stack_amplitudes(stack, wavelength_nm)
    R = np.clip(np.abs(r) ** 2, 0.0, 1.0)
    return float(R) if R.ndim == 0 else R


def stack_transmittance(stack: LayerStack, wavelength_nm):
    """Transmitted power fraction, including the substrate/incident index ratio."""
    _, t = stack_amplitudes(stack, wavelength_nm)
    T = complex(stack.n_substrate).real / complex(stack.n_incident).real * np.abs(t) ** 2
    return float(T) if T.ndim == 0 else T


def ribbon_layer_eps(fill_factor, eps_au):
    """Series (inverse-average) mix of gold and air for E across the ribbons."""
    f = np.asarray(fill_factor, dtype=np.float64)
    if np.any((f <= 0) | (f >= 1)):
        raise ValueError(f"fill factor {fill_factor} outside (0, 1)")
    if np.any(np.asarray(eps_au) == 0):
        raise ValueError("gold permittivity is zero")
    return 1.0 / (f / eps_au + (1.0 - f) / 1.0)


def block_stack(
    h: float, lc: float, pitch: float, width: float, materials: MaterialDb, wavelength_nm, t_ribbon: float
) -> LayerStack:
    eps_au = drude_eps(materials.au, wavelength_nm)
    # principal square root: Im(eps) >= 0 gives Im(n) >= 0
    n_ribbon = np.sqrt(ribbon_layer_eps(width / pitch, eps_au) + 0j)
    n_gst = np.sqrt(materials.gst.eps(lc) + 0j)
    n_au = np.sqrt(eps_au + 0j)
    return LayerStack(
        (n_ribbon, n_gst, n_au),
        (t_ribbon, h, MIRROR_THICKNESS_NM),
        n_incident=materials.n_air,
        n_substrate=materials.n_sio2,
    )


def build_stack(
    design: DesignVector,
    block_index: int,
    materials: MaterialDb,
    wavelength_nm=WAVELENGTHS_NM,
    t_ribbon: float = RIBBON_THICKNESS_NM,
) -> LayerStack:
    if block_index not in (1, 2, 3):
        raise ValueError(f"block_index must be 1, 2 or 3, got {block_index}")
    design.check()
    lc, p, w = design.blocks()[block_index - 1]
    return block_stack(design.h, lc, p, w, materials, wavelength_nm, t_ribbon)


def supercell_reflectance(
    design: DesignVector,
    materials: MaterialDb,
    wavelength_nm=WAVELENGTHS_NM,
    t_ribbon: float = RIBBON_THICKNESS_NM,
) -> np.ndarray:
    """Pitch-weighted mean of the three block reflectances."""
    design.check()
    lam = np.asarray(wavelength_nm, dtype=np.float64)
    # canonical block order makes the float summation permutation-invariant
    blocks = sorted(design.blocks())
    spectra = [stack_reflectance(block_stack(design.h, lc, p, w, materials, lam, t_ribbon), lam) for lc, p, w in blocks]
    pitch_sum = sum(p for _, p, _ in blocks)
    # averaging deviations from the first block keeps identical blocks exact
    total = spectra[0].copy()
    for (_, p, _), r in zip(blocks[1:], spectra[1:]):
        total += (p / pitch_sum) * (r - spectra[0])
    return np.clip(total, 0.0, 1.0)


def simulate_many(designs: Sequence[DesignVector], materials: MaterialDb, **kwargs) -> np.ndarray:
    return np.array([supercell_reflectance(d, materials, **kwargs) for d in designs])
