import numpy as np
import pytest

from stfbnn.data import Dataset, make_two_moons
from stfbnn.nn import DenseLayer, MlpModel, SgdConfig, TrainConfig, he_init, train_deterministic
from stfbnn.rng import Prng


def tiny_model(arch, seed=0):
    return he_init(list(arch), Prng(seed).spawn(1))


def random_dataset(m, dim, k, seed=0):
    prng = Prng(seed).spawn(2)
    feats = prng.gaussian((m, dim))
    labels = prng.integers(m, 0, k)
    return Dataset(feats, labels, num_classes=k)


@pytest.fixture(scope="session")
def moons_small():
    return make_two_moons(400, 0.1, Prng(7))


@pytest.fixture(scope="session")
def moons_trained(moons_small):
    # quick converged baseline shared by tests that need a real boundary
    model = he_init([2, 16, 16, 2], Prng(3).spawn(1))
    cfg = TrainConfig(SgdConfig(0.1, 0.9, 5e-4), epochs=40)
    model, losses = train_deterministic(model, moons_small, cfg, Prng(3).spawn(2))
    return model
