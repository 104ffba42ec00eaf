"""Permittivity models: Drude gold, GST phase mixing, constant dielectrics.

Time convention is exp(-i w t), so absorbing media have Im(eps) > 0.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

C_LIGHT = 299_792_458.0  # m/s
LC_LEVELS = np.round(np.linspace(0.0, 1.0, 11), 10)


@dataclass(frozen=True)
class DrudeParams:
    eps_infinity: float = 9.0
    plasma_frequency: float = 1.37e16  # rad/s
    damping_rate: float = 1.05e14  # rad/s

    def __post_init__(self) -> None:
        if self.plasma_frequency < 0:
            raise ValueError("plasma_frequency must be non-negative")
        if self.damping_rate < 0:
            raise ValueError("damping_rate must be non-negative")


@dataclass(frozen=True)
class GstModel:
    """Amorphous and crystalline GST as constant complex indices."""

    n_amorphous: complex = 4.5 + 0.12j
    n_crystalline: complex = 7.0 + 1.5j

    def __post_init__(self) -> None:
        for n in (self.n_amorphous, self.n_crystalline):
            if (n * n).imag < 0:
                raise ValueError(f"GST index {n} is not passive")

    def eps_amorphous(self, wavelength_nm=None) -> complex:
        return complex(self.n_amorphous) ** 2

    def eps_crystalline(self, wavelength_nm=None) -> complex:
        return complex(self.n_crystalline) ** 2

    def eps(self, lc: float, wavelength_nm=None) -> complex:
        return lorentz_lorenz(self.eps_amorphous(wavelength_nm), self.eps_crystalline(wavelength_nm), lc)


@dataclass(frozen=True)
class MaterialDb:
    au: DrudeParams = field(default_factory=DrudeParams)
    gst: GstModel = field(default_factory=GstModel)
    n_sio2: float = 1.444
    n_air: float = 1.0

    def __post_init__(self) -> None:
        if self.n_sio2 <= 1:
            raise ValueError("n_sio2 must exceed 1")

    def to_config(self) -> dict[str, float]:
        return {
            "au.eps_inf": self.au.eps_infinity,
            "au.wp": self.au.plasma_frequency,
            "au.gamma": self.au.damping_rate,
            "gst.n_a_re": complex(self.gst.n_amorphous).real,
            "gst.n_a_im": complex(self.gst.n_amorphous).imag,
            "gst.n_c_re": complex(self.gst.n_crystalline).real,
            "gst.n_c_im": complex(self.gst.n_crystalline).imag,
            "sio2.n": self.n_sio2,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


CONFIG_KEYS = tuple(MaterialDb().to_config())


def material_db_from_mapping(values: dict[str, float]) -> MaterialDb:
    unknown = set(values) - set(CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown material keys: {sorted(unknown)}")
    cfg = MaterialDb().to_config() | {k: float(v) for k, v in values.items()}
    return MaterialDb(
        au=DrudeParams(cfg["au.eps_inf"], cfg["au.wp"], cfg["au.gamma"]),
        gst=GstModel(
            complex(cfg["gst.n_a_re"], cfg["gst.n_a_im"]),
            complex(cfg["gst.n_c_re"], cfg["gst.n_c_im"]),
        ),
        n_sio2=cfg["sio2.n"],
    )


def load_material_db(path: str | Path) -> MaterialDb:
    """Read ``key = value`` lines; ``#`` starts a comment, missing keys keep defaults."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = float(value)
    return material_db_from_mapping(values)


def drude_eps(params: DrudeParams, wavelength_nm):
    """eps(w) = eps_inf - wp^2 / (w^2 + i*gamma*w); accepts scalars or arrays."""
    lam = np.asarray(wavelength_nm, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("wavelength must be positive")
    omega = 2.0 * np.pi * C_LIGHT / (lam * 1e-9)
    wp = params.plasma_frequency
    eps = params.eps_infinity - wp * wp / (omega * omega + 1j * params.damping_rate * omega)
    return complex(eps) if eps.ndim == 0 else eps


def clausius_mossotti(eps):
    return (eps - 1.0) / (eps + 2.0)


def lorentz_lorenz(eps_a, eps_c, lc):
    """Effective permittivity of partially crystallized GST.

    The Clausius-Mossotti transform of the mixture is the lc-weighted average
    of the transforms of the two phases; lc=0 is fully amorphous.
    """
    lc_arr = np.asarray(lc, dtype=np.float64)
    if np.any((lc_arr < 0) | (lc_arr > 1)):
        raise ValueError(f"crystallization fraction {lc} outside [0, 1]")
    if np.any(np.asarray(eps_a) == -2) or np.any(np.asarray(eps_c) == -2):
        raise ValueError("permittivity -2 is a Clausius-Mossotti pole")
    # exact endpoints, free of round-off from the transform round trip
    if lc_arr.ndim == 0 and float(lc_arr) == 0.0:
        return eps_a
    if lc_arr.ndim == 0 and float(lc_arr) == 1.0:
        return eps_c
    rhs = lc_arr * clausius_mossotti(eps_c) + (1.0 - lc_arr) * clausius_mossotti(eps_a)
    if np.any(rhs == 1.0):
        raise ValueError("degenerate mixture: transform equals 1 (pole of eps_eff)")
    return (1.0 + 2.0 * rhs) / (1.0 - rhs)


def quantize_lc(x: float) -> float:
    """Snap to the nearest of the 11 levels 0.0, 0.1, ..., 1.0; halves round up."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"crystallization fraction {x} outside [0, 1]")
    # small slack so that 0.05 (stored as 0.05000000000000000277) still rounds up
    # and 0.15 (stored as 0.1499999999999999944) does too
    k = int(np.floor(x * 10.0 + 0.5 + 1e-9))
    return float(LC_LEVELS[min(k, 10)])


def is_lc_level(x: float) -> bool:
    return bool(np.any(np.abs(LC_LEVELS - x) < 1e-12))
