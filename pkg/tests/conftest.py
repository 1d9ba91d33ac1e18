import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from srmwave.motor import toy_motor
from srmwave.pwa import fit_model
from srmwave.transcription import Grid, transcribe

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy():
    return toy_motor(phase=0.7, resistance=0.5, turns=150.0, v_max=200.0)


@pytest.fixture(scope="session")
def toy_problem(toy):
    grid = Grid.for_model(toy, 4)
    pwa = fit_model(toy, grid.theta, (0.0, 700.0, 2000.0))
    return transcribe(toy, pwa, grid, 40.0, 1.5, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
