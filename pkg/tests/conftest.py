"""Shared fixtures: grids, seeded generators, constants and one cached toy step."""

import numpy as np
import pytest

from convexlab.iteration.base import build_noise, init_base, time_grid
from convexlab.iteration.step import induction_step, plan_step
from convexlab.params import ParameterSet, derive_constants
from convexlab.spectral import Grid
from convexlab.stochastic import sample_path

TOY_SEED = 7


@pytest.fixture(scope="session")
def grid32():
    return Grid.create(32)


@pytest.fixture(scope="session")
def grid64():
    return Grid.create(64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ledger_constants():
    return derive_constants(1.0)


@pytest.fixture(scope="session")
def toy_params():
    return ParameterSet.toy()


@pytest.fixture(scope="session")
def early_base(toy_params):
    """Level 0 on [-0.6, -0.3], where the noise is still deterministic."""
    noise = build_noise(sample_path(TOY_SEED, 1e-3, toy_params.L), toy_params)
    level = init_base(toy_params, noise, time_grid(-0.6, -0.3, 1e-3))
    return level, noise


@pytest.fixture(scope="session")
def toy_step(toy_params, ledger_constants):
    """One q = 0 -> 1 step on the toy parameters, over a two-sample window at t <= 0."""
    plan = plan_step(toy_params, 0, -1.0, 2, steps_per_tau=512, grid_size=256)
    noise = build_noise(sample_path(TOY_SEED, plan.dt, toy_params.L), toy_params)
    level = init_base(toy_params, noise, plan.level_times)
    return induction_step(level, noise, toy_params, plan, C1=ledger_constants.C1)
