import numpy as np
import pytest

from mubench import ModelLayout, TrainConfig, UnlearnEngine, gen_synthetic


@pytest.fixture(scope="session")
def small_layout():
    return ModelLayout(6, (7, 5), 2)


@pytest.fixture(scope="session")
def tiny_dataset():
    return gen_synthetic(600, 8, 1)


@pytest.fixture(scope="session")
def tiny_config():
    # per-slice 200 samples; costs 1200/1000/600, so phi=1000 gives t=2
    return TrainConfig(num_slices=3, batch_size=64, epochs_per_slice=1, seed=4, phi=1000.0)


@pytest.fixture()
def trained_engine(tiny_dataset, tiny_config):
    """Fresh trained engine per test; training takes ~15 ms at this scale."""
    return UnlearnEngine.train(tiny_dataset, tiny_config)


def balanced_batch(layout: ModelLayout, rows: int, seed: int):
    """Batch with an equal number of 0 and 1 labels."""
    from mubench import Batch

    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((rows, layout.input_dim)).astype(np.float32)
    labels = np.arange(rows) % 2
    return Batch(feats, labels, np.arange(rows))
