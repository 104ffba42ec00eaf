"""Design-space reduction with a pseudo-encoder, and the cascaded forward model.

The pseudo-encoder maps scaled designs (10) through a bottleneck of size k to
the m response features of a trained autoencoder. Its first half is the
design encoder; cascading the whole net with the frozen autoencoder decoder
gives a design -> spectrum predictor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nnet
from .dataset import Dataset, DesignRanges, Scaler
from .dr_response import ResponseAutoencoder, bottleneck_index, encode_response
from .nnet import Mlp, TrainConfig, TrainReport
from .surrogate import DesignVector

DEFAULT_LAYERS = (10, 20, 15, 5, 20, 30, 20, 10)


def pe_activations(layer_sizes: Sequence[int]) -> list[str]:
    """tanh hidden layers; identity into the design bottleneck and at the output."""
    b = bottleneck_index(layer_sizes[:-1])
    acts = ["tanh"] * (len(layer_sizes) - 1)
    acts[b - 1] = "identity"
    acts[-1] = "identity"
    return acts


def arch_for(k: int, m: int, template: Sequence[int] = DEFAULT_LAYERS) -> list[int]:
    sizes = list(template)
    b = bottleneck_index(sizes)
    sizes[b] = k
    sizes[-1] = m
    return sizes


def _design_matrix(design) -> np.ndarray:
    if isinstance(design, DesignVector):
        return design.as_array()
    if isinstance(design, (list, tuple)) and design and isinstance(design[0], DesignVector):
        return np.array([d.as_array() for d in design])
    arr = np.asarray(design, dtype=np.float64)
    if arr.shape[-1] != 10:
        raise ValueError(f"designs have {arr.shape[-1]} parameters, expected 10")
    return arr


@dataclass
class PseudoEncoder:
    mlp: Mlp
    bottleneck: int
    ranges: DesignRanges = field(default_factory=DesignRanges)

    def __post_init__(self) -> None:
        if self.mlp.n_in != 10:
            raise ValueError(f"pseudo-encoder input must be 10 design parameters, got {self.mlp.n_in}")
        if bottleneck_index(self.mlp.layer_sizes[:-1]) != self.bottleneck:
            raise ValueError("bottleneck index does not match the smallest hidden layer")
        if self.k >= 10:
            raise ValueError(f"reduced design dimension k={self.k} must be below 10")
        self.scaler = Scaler(self.ranges)

    @property
    def k(self) -> int:
        return self.mlp.layer_sizes[self.bottleneck]

    @property
    def m(self) -> int:
        return self.mlp.n_out

    @property
    def design_encoder(self) -> Mlp:
        return self.mlp.sub(0, self.bottleneck)

    @property
    def mapper(self) -> Mlp:
        return self.mlp.sub(self.bottleneck, self.mlp.n_layers)

    def scale(self, design) -> np.ndarray:
        return self.scaler.transform(_design_matrix(design))

    def to_dict(self) -> dict:
        return {
            "kind": "pseudo_encoder",
            "bottleneck": self.bottleneck,
            "ranges": self.ranges.to_dict(),
            "mlp": nnet.to_dict(self.mlp),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PseudoEncoder":
        if doc.get("kind") != "pseudo_encoder":
            raise ValueError("not a pseudo-encoder document")
        return cls(nnet.from_dict(doc["mlp"]), int(doc["bottleneck"]), DesignRanges.from_dict(doc["ranges"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "PseudoEncoder":
        return cls.from_dict(json.loads(Path(path).read_text()))


def response_targets(ae: ResponseAutoencoder, ds: Dataset) -> np.ndarray:
    return encode_response(ae, ds.spectra)


def train_pseudo_encoder(
    train: Dataset,
    val: Dataset,
    ae: ResponseAutoencoder,
    layer_sizes: Sequence[int] = DEFAULT_LAYERS,
    config: TrainConfig | None = None,
    ranges: DesignRanges | None = None,
) -> tuple[PseudoEncoder, TrainReport]:
    """Fit design -> reduced response, with the autoencoder's encoder held fixed."""
    config = config or TrainConfig()
    sizes = list(layer_sizes)
    if sizes[0] != 10:
        raise ValueError("pseudo-encoder input layer must have 10 neurons")
    if sizes[-1] != ae.m:
        raise ValueError(f"pseudo-encoder outputs {sizes[-1]} features, autoencoder code has {ae.m}")
    b = bottleneck_index(sizes[:-1])
    if sizes[b] >= 10:
        raise ValueError(f"reduced design dimension k={sizes[b]} must be below 10")
    ranges = ranges or DesignRanges()
    scaler = Scaler(ranges)
    net = nnet.init_mlp(sizes, pe_activations(sizes), config.seed)
    net, report = nnet.train(
        net,
        (scaler.transform(train.designs), response_targets(ae, train)),
        (scaler.transform(val.designs), response_targets(ae, val)),
        config,
    )
    return PseudoEncoder(net, b, ranges), report


def encode_design(pe: PseudoEncoder, design) -> np.ndarray:
    if isinstance(design, DesignVector):
        design.check()
    return pe.design_encoder(pe.scale(design))


@dataclass
class FullForwardModel:
    pe: PseudoEncoder
    decoder: Mlp

    def __post_init__(self) -> None:
        if self.decoder.n_in != self.pe.m:
            raise ValueError(f"decoder expects {self.decoder.n_in} features, pseudo-encoder emits {self.pe.m}")

    @classmethod
    def from_parts(cls, pe: PseudoEncoder, ae: ResponseAutoencoder) -> "FullForwardModel":
        return cls(pe, ae.decoder)

    def __call__(self, design) -> np.ndarray:
        return forward_predict(self, design)


def forward_predict(model: FullForwardModel, design) -> np.ndarray:
    if isinstance(design, DesignVector):
        design.check()
    reduced = model.pe.design_encoder(model.pe.scale(design))
    return model.decoder(model.pe.mapper(reduced))


def sweep_design_dim(
    train: Dataset,
    val: Dataset,
    autoencoders: dict[int, ResponseAutoencoder],
    k_values: Sequence[int],
    m_values: Sequence[int],
    config: TrainConfig | None = None,
    template: Sequence[int] = DEFAULT_LAYERS,
) -> list[tuple[int, int, float]]:
    """Validation spectral MSE of the full forward model for every (k, m) pair."""
    config = config or TrainConfig()
    rows = []
    for m in m_values:
        if m not in autoencoders:
            raise ValueError(f"no trained autoencoder with bottleneck {m}")
        ae = autoencoders[m]
        for k in k_values:
            if not 1 <= k < 10:
                raise ValueError(f"k={k} must satisfy 1 <= k < 10")
            pe, _ = train_pseudo_encoder(train, val, ae, arch_for(k, m, template), replace(config))
            model = FullForwardModel.from_parts(pe, ae)
            rows.append((int(k), int(m), nnet.mse(forward_predict(model, val.designs), val.spectra)))
    return rows
