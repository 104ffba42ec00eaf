"""Default training settings and the end-to-end design recipe."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .dr_design import DEFAULT_LAYERS as PE_LAYERS
from .dr_design import FullForwardModel, PseudoEncoder, forward_predict, train_pseudo_encoder
from .dr_response import DEFAULT_LAYERS as AE_LAYERS
from .dr_response import ResponseAutoencoder, train_response_autoencoder
from .inverse import DEFAULT_HEAD, DesignModels, SearchConfig, TargetSpec, design, train_inverse
from .materials import MaterialDb
from .nnet import TrainConfig, mse

log = logging.getLogger(__name__)

N_INSTANCES = 4000
TRAIN_FRACTION = 0.9
SPLIT_SEED = 0

AE_CONFIG = TrainConfig(max_epochs=2000)
# the small pseudo-encoder keeps improving long after a flat step size plateaus
PE_CONFIG = TrainConfig(learning_rate=3e-3, lr_final=1e-5, max_epochs=5000, early_stop_patience=1000)
INVERSE_CONFIG = TrainConfig(max_epochs=2000)

ABSORBER_BAND = (1500.0, 1700.0)


def train_config(base: TrainConfig, **overrides) -> TrainConfig:
    values = asdict(base) | {k: v for k, v in overrides.items() if v is not None}
    return TrainConfig(**values)


@dataclass
class RecipeResult:
    ae: ResponseAutoencoder
    pe: PseudoEncoder
    inv: object
    report: dict
    timings: dict[str, float] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)


def run_recipe(
    out_dir: str | Path | None = None,
    seed: int = 1,
    n: int = N_INSTANCES,
    materials: MaterialDb | None = None,
    search: SearchConfig | None = None,
) -> RecipeResult:
    """gen-data -> train-ae -> train-pe -> train-inverse -> design, with wall-clock per stage."""
    materials = materials or MaterialDb()
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    data = ds_mod.generate(n, seed, materials=materials, command=f"run_recipe(seed={seed}, n={n})")
    train, val = ds_mod.split(data, TRAIN_FRACTION, SPLIT_SEED)
    timings["gen_data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ae, ae_rep = train_response_autoencoder(train, val, AE_LAYERS, train_config(AE_CONFIG, seed=seed))
    timings["train_ae"] = time.perf_counter() - t0
    log.info("autoencoder validation mse %.3g", ae_rep.final_val_mse)

    t0 = time.perf_counter()
    pe, _ = train_pseudo_encoder(train, val, ae, PE_LAYERS, train_config(PE_CONFIG, seed=seed))
    timings["train_pe"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    inv, inv_rep = train_inverse(train, val, ae, pe, DEFAULT_HEAD, train_config(INVERSE_CONFIG, seed=seed))
    timings["train_inverse"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = design(
        TargetSpec.flat(0.0, ABSORBER_BAND), DesignModels(ae, pe, inv), search or SearchConfig(seed=seed), None, materials
    )
    timings["design"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())

    metrics = {
        "ae_val_mse": ae_rep.final_val_mse,
        "forward_val_mse": mse(forward_predict(FullForwardModel.from_parts(pe, ae), val.designs), val.spectra),
        "inverse_val_mse": inv_rep.final_val_mse,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ds_mod.save(data, out / "data.csv")
        ae.save(out / "ae.json")
        pe.save(out / "pe.json")
        inv.save(out / "inv.json")
        (out / "report.json").write_text(json.dumps(report, indent=2))
        (out / "timings.json").write_text(json.dumps({"timings_s": timings, "metrics": metrics}, indent=2))
    return RecipeResult(ae, pe, inv, report, timings, metrics)


def constant_baseline(train_targets: np.ndarray, val_targets: np.ndarray) -> float:
    """Validation mse of always predicting the training mean."""
    return mse(np.broadcast_to(train_targets.mean(axis=0), val_targets.shape), val_targets)
