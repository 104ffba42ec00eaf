import numpy as np
import pytest

from metadr.dataset import DesignRanges, sample_design
from metadr.dr_design import (
    FullForwardModel,
    PseudoEncoder,
    arch_for,
    encode_design,
    forward_predict,
    pe_activations,
    response_targets,
    sweep_design_dim,
    train_pseudo_encoder,
)
from metadr.nnet import TrainConfig, mse
from metadr.pipeline import constant_baseline
from metadr.surrogate import DesignVector

D1 = DesignVector(190, 0.5, 0.6, 0.7, 650, 650, 550, 350, 500, 200)


def test_architecture_helpers():
    assert arch_for(3, 10) == [10, 20, 15, 3, 20, 30, 20, 10]
    assert arch_for(5, 2) == [10, 20, 15, 5, 20, 30, 20, 2]
    acts = pe_activations([10, 20, 15, 5, 20, 30, 20, 10])
    assert acts == ["tanh", "tanh", "identity", "tanh", "tanh", "tanh", "identity"]
    assert pe_activations([10, 4, 10, 50, 20, 10])[0] == "identity"


def test_k10_rejected(small_models, small_data):
    ae, _, _ = small_models
    _, train, val = small_data
    with pytest.raises(ValueError):
        train_pseudo_encoder(train, val, ae, [10, 20, 10, 20, 10], TrainConfig(max_epochs=1))
    with pytest.raises(ValueError):
        train_pseudo_encoder(train, val, ae, [10, 20, 5, 20, 7], TrainConfig(max_epochs=1))


def test_better_than_constant_baseline(small_models, small_data):
    ae, pe, _ = small_models
    _, train, val = small_data
    val_mse = mse(pe.mlp(pe.scale(val.designs)), response_targets(ae, val))
    assert np.isfinite(val_mse)
    assert val_mse < constant_baseline(response_targets(ae, train), response_targets(ae, val))


def test_deterministic_training(small_models, small_data):
    ae, pe, _ = small_models
    _, train, val = small_data
    again, _ = train_pseudo_encoder(train, val, ae, pe.mlp.layer_sizes, TrainConfig(max_epochs=30, seed=3))
    assert all(np.array_equal(a, b) for a, b in zip(pe.mlp.weights, again.mlp.weights))


def test_encode_design_shape_and_repeat(small_models):
    _, pe, _ = small_models
    code = encode_design(pe, D1)
    assert code.shape == (5,)
    assert np.array_equal(code, encode_design(pe, D1))
    assert encode_design(pe, [D1, D1]).shape == (2, 5)


def test_forward_model_composition(small_models, small_data):
    ae, pe, _ = small_models
    _, _, val = small_data
    model = FullForwardModel.from_parts(pe, ae)
    for a, b in zip(model.decoder.weights, ae.decoder.weights):
        assert np.array_equal(a, b)
    pred = forward_predict(model, val.designs)
    assert pred.shape == (len(val), 200) and np.all((pred >= 0) & (pred <= 1))
    manual = ae.decoder(pe.mapper(pe.design_encoder(pe.scale(val.designs))))
    assert np.array_equal(pred, manual)
    assert np.array_equal(model(D1), forward_predict(model, D1))


def test_permutations_collapse_statistically(small_models):
    _, pe, _ = small_models
    rng = np.random.default_rng(0)
    designs = [sample_design(DesignRanges(), rng) for _ in range(100)]
    permuted = [d.permuted((2, 0, 1)) for d in designs]
    a, b = encode_design(pe, designs), encode_design(pe, permuted)
    unrelated = np.roll(a, 1, axis=0)
    same = np.linalg.norm(a - b, axis=1).mean()
    other = np.linalg.norm(a - unrelated, axis=1).mean()
    print(f"permuted-pair distance {same:.4g}, unrelated-pair distance {other:.4g}")
    assert same < other


def test_save_load(tmp_path, small_models):
    _, pe, _ = small_models
    pe.save(tmp_path / "pe.json")
    back = PseudoEncoder.load(tmp_path / "pe.json")
    assert np.array_equal(encode_design(back, D1), encode_design(pe, D1))
    assert back.k == 5 and back.m == 10


def test_sweep_single_cell(small_models, small_data):
    ae, _, _ = small_models
    _, train, val = small_data
    rows = sweep_design_dim(train, val, {10: ae}, [3], [10], TrainConfig(max_epochs=2))
    assert len(rows) == 1 and rows[0][:2] == (3, 10)
    assert rows == sweep_design_dim(train, val, {10: ae}, [3], [10], TrainConfig(max_epochs=2))
    with pytest.raises(ValueError):
        sweep_design_dim(train, val, {10: ae}, [3], [5], TrainConfig(max_epochs=2))
