"""Response-space autoencoder: 200 reflectance samples down to m features and back."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nnet
from .dataset import Dataset
from .nnet import Mlp, TrainConfig, TrainReport
from .surrogate import N_WAVELENGTHS

DEFAULT_LAYERS = (200, 50, 10, 50, 200)


def bottleneck_index(layer_sizes: Sequence[int]) -> int:
    """Position of the unique smallest layer; raises if it is not unique or sits at an end."""
    sizes = list(layer_sizes)
    smallest = min(sizes)
    where = [i for i, s in enumerate(sizes) if s == smallest]
    if len(where) != 1 or where[0] in (0, len(sizes) - 1):
        raise ValueError(f"{sizes}: the bottleneck must be a unique strict minimum inside the network")
    return where[0]


def default_activations(layer_sizes: Sequence[int], output: str = "logistic") -> list[str]:
    """tanh on hidden layers, identity into the bottleneck, ``output`` on the last layer."""
    b = bottleneck_index(layer_sizes)
    acts = ["tanh"] * (len(layer_sizes) - 1)
    acts[b - 1] = "identity"
    acts[-1] = output
    return acts


@dataclass
class ResponseAutoencoder:
    mlp: Mlp
    bottleneck: int  # index into mlp.layer_sizes

    def __post_init__(self) -> None:
        sizes = self.mlp.layer_sizes
        if sizes[0] != N_WAVELENGTHS or sizes[-1] != N_WAVELENGTHS:
            raise ValueError(f"autoencoder must map {N_WAVELENGTHS} -> {N_WAVELENGTHS}, got {sizes}")
        if bottleneck_index(sizes) != self.bottleneck:
            raise ValueError("bottleneck index does not match the smallest layer")

    @property
    def m(self) -> int:
        return self.mlp.layer_sizes[self.bottleneck]

    @property
    def encoder(self) -> Mlp:
        return self.mlp.sub(0, self.bottleneck)

    @property
    def decoder(self) -> Mlp:
        return self.mlp.sub(self.bottleneck, self.mlp.n_layers)

    def to_dict(self) -> dict:
        return {"kind": "response_autoencoder", "bottleneck": self.bottleneck, "mlp": nnet.to_dict(self.mlp)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ResponseAutoencoder":
        if doc.get("kind") != "response_autoencoder":
            raise ValueError("not a response autoencoder document")
        return cls(nnet.from_dict(doc["mlp"]), int(doc["bottleneck"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "ResponseAutoencoder":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_symmetric(layer_sizes: Sequence[int]) -> None:
    sizes = list(layer_sizes)
    if sizes != sizes[::-1]:
        raise ValueError(f"autoencoder layers must be symmetric, got {sizes}")


def train_response_autoencoder(
    train: Dataset, val: Dataset, layer_sizes: Sequence[int] = DEFAULT_LAYERS, config: TrainConfig | None = None
) -> tuple[ResponseAutoencoder, TrainReport]:
    config = config or TrainConfig()
    _check_symmetric(layer_sizes)
    b = bottleneck_index(layer_sizes)
    net = nnet.init_mlp(layer_sizes, default_activations(layer_sizes), config.seed)
    net, report = nnet.train(net, (train.spectra, train.spectra), (val.spectra, val.spectra), config)
    return ResponseAutoencoder(net, b), report


def _check_len(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise ValueError(f"{what} has length {x.shape[-1]}, expected {n}")
    return x


def encode_response(ae: ResponseAutoencoder, spectrum: np.ndarray) -> np.ndarray:
    return ae.encoder(_check_len(spectrum, N_WAVELENGTHS, "spectrum"))


def decode_response(ae: ResponseAutoencoder, code: np.ndarray) -> np.ndarray:
    return ae.decoder(_check_len(code, ae.m, "code"))


def reconstruction_mse(ae: ResponseAutoencoder, spectra: np.ndarray) -> float:
    return nnet.mse(ae.mlp(spectra), spectra)


def arch_for_dim(m: int, template: Sequence[int] = DEFAULT_LAYERS) -> list[int]:
    """Template architecture with its bottleneck replaced by ``m``."""
    sizes = list(template)
    b = bottleneck_index(sizes)
    sizes[b] = m
    if bottleneck_index(sizes) != b:
        raise ValueError(f"bottleneck {m} is not smaller than its neighbours in {sizes}")
    return sizes


def sweep_bottleneck(
    train: Dataset,
    val: Dataset,
    dims: Sequence[int],
    arch_template: Sequence[int] = DEFAULT_LAYERS,
    config: TrainConfig | None = None,
    seeds: Sequence[int] | None = None,
) -> list[tuple[int, float]]:
    """Best validation MSE per bottleneck size, one independent training per (m, seed)."""
    if not dims:
        raise ValueError("no bottleneck sizes given")
    config = config or TrainConfig()
    seeds = list(seeds) if seeds is not None else [config.seed]
    rows = []
    for m in dims:
        if m < 1:
            raise ValueError("bottleneck sizes must be >= 1")
        sizes = arch_for_dim(m, arch_template)
        best = min(
            train_response_autoencoder(train, val, sizes, replace(config, seed=s))[1].final_val_mse for s in seeds
        )
        rows.append((int(m), best))
    return rows


def write_sweep_csv(rows: Sequence[tuple], path: str | Path, header: Sequence[str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
