"""Shared, session-wide numerical objects; the expensive ones are built once."""
from __future__ import annotations

import numpy as np
import pytest

from cawave import curvature as cv
from cawave import travelwave as tw
from cawave.model import DEFAULT_JL, ModelParams

N_NODES = 800
GAMMA_RANGE = (0.5, 20.0)


@pytest.fixture(scope="session")
def params() -> ModelParams:
    return ModelParams()


@pytest.fixture(scope="session")
def front(params):
    return tw.solve_wave("front", 5.0, params, J_l=DEFAULT_JL, n_nodes=N_NODES)


@pytest.fixture(scope="session")
def back(params):
    return tw.solve_wave("back", 5.0, params, J_l=DEFAULT_JL, n_nodes=N_NODES)


@pytest.fixture(scope="session")
def pulse(params):
    return tw.solve_wave("pulse", 5.0, params, J_l=DEFAULT_JL, n_nodes=N_NODES)


@pytest.fixture(scope="session")
def dispersion(params) -> dict:
    return {k: tw.continue_dispersion(k, GAMMA_RANGE, params, J_l=DEFAULT_JL, n_nodes=N_NODES)
            for k in tw.KINDS}


@pytest.fixture(scope="session")
def balance(dispersion):
    return tw.find_gamma_m(dispersion["front"], dispersion["back"], n_nodes=N_NODES)


@pytest.fixture(scope="session")
def curves(dispersion, balance) -> dict:
    return cv.build_curvature_curves(dispersion["front"], dispersion["back"], dispersion["pulse"], 5.0,
                                     balance=balance)


@pytest.fixture(scope="session")
def critical(curves):
    return cv.critical_curvatures(curves, n_nodes=N_NODES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
