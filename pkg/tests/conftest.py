import numpy as np
import pytest

from dessilbi.config import ExperimentConfig
from dessilbi.data import dataset_spec
from dessilbi.optimizer import HyperParams


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def tiny_blobs_config(**kw):
    """Small classification run that finishes in well under a second."""
    defaults = dict(
        dataset=dataset_spec("blobs", n=160, classes=3, dim=6, separation=2.0, seed=1),
        input_shape=(6,),
        layer_specs=("dense:8", "tanh", "dense:3"),
        loss="softmax_cross_entropy",
        hp=HyperParams(kappa=1.0, nu=10.0, alpha_schedule=((0, 0.1),)),
        lam=0.05,
        epochs=3,
        batch_size=32,
        seed=3,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def tiny_regression_config(**kw):
    """Single linear layer on synthetic sparse data, full batch."""
    defaults = dict(
        dataset=dataset_spec("sparse_linear", n=80, p=12, s=3, snr=10.0, seed=1,
                             val_fraction=0.0),
        input_shape=(12,),
        layer_specs=("dense:1:nobias",),
        loss="mse",
        hp=HyperParams(kappa=1.0, nu=10.0, alpha_schedule=((0, 0.2),)),
        lam=0.5,
        epochs=5,
        batch_size=None,
        seed=2,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)
