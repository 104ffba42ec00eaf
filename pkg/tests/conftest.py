import pytest

from metadr import dataset as ds
from metadr.dr_design import train_pseudo_encoder
from metadr.dr_response import train_response_autoencoder
from metadr.inverse import train_inverse
from metadr.nnet import TrainConfig

QUICK = TrainConfig(max_epochs=30, seed=3)


@pytest.fixture(scope="session")
def small_data():
    """300 surrogate instances split 270/30; cheap enough for unit tests."""
    data = ds.generate(300, seed=11, command="tests")
    train, val = ds.split(data, 0.9, seed=0)
    return data, train, val


@pytest.fixture(scope="session")
def small_models(small_data):
    _, train, val = small_data
    ae, _ = train_response_autoencoder(train, val, (200, 50, 10, 50, 200), QUICK)
    pe, _ = train_pseudo_encoder(train, val, ae, (10, 20, 15, 5, 20, 30, 20, 10), QUICK)
    inv, _ = train_inverse(train, val, ae, pe, (10, 16, 8, 5), QUICK)
    return ae, pe, inv
