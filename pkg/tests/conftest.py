import pytest

from tankopt import ChainQuantizer, TankModel, TankParams, ValueSolver


@pytest.fixture(scope="session")
def params():
    return TankParams()


@pytest.fixture(scope="session")
def model(params):
    return TankModel(params)


@pytest.fixture(scope="session")
def small_quantizer(model):
    """Modest grids shared by value/policy tests (seconds to fit)."""
    return ChainQuantizer(n_points=120, calib_sims=100_000,
                          train_sims=100_000, freeze_sims=100_000,
                          random_state=11).fit(model)


@pytest.fixture(scope="session")
def small_solver(small_quantizer, model):
    return ValueSolver(n_nodes=50).fit(small_quantizer, model)


@pytest.fixture(scope="session")
def small_table(small_solver):
    return small_solver.table_
