"""Shared fixtures: a small synthetic dataset and a quickly trained run.

Session scope keeps the expensive pieces (trial generation, a short
training run) to one build for the whole suite; tests must not mutate
them in place.
"""

import numpy as np
import pytest

from kjmnet.events import Limb, Orientation
from kjmnet.network import TrainConfig
from kjmnet.pipeline import build_synth_dataset, train_runs
from kjmnet.prep import Movement, split
from kjmnet.synth import TrialRecipe


def make_recipe(**overrides):
    """A valid right-limb sidestep recipe; override any field."""
    base = dict(
        movement=Movement.SIDESTEP_LEFT,
        limb=Limb.RIGHT,
        orientation=Orientation.HEEL_DOWN,
        speed=3.2,
        turn_mag=32.0,
        fs_time=0.9,
        stance_time=0.30,
        duration=1.75,
    )
    base.update(overrides)
    return TrialRecipe(**base)


@pytest.fixture(scope="session")
def kjm40():
    """40 sidestep rows with moment responses, default generator noise."""
    ds = build_synth_dataset(40, "sidestep", seed=5, crossover_rate=0.0)
    assert ds.n == 40
    return ds


@pytest.fixture(scope="session")
def split40(kjm40):
    return split(kjm40, 0.8, seed=0)


@pytest.fixture(scope="session")
def trained_small(split40):
    """Per-waveform runs trained for two epochs on the 32-row train part."""
    train_ds, _ = split40
    cfg = TrainConfig(epochs=2, learning_rate=3e-3, batch_size=16)
    return train_runs(train_ds, config=cfg, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
