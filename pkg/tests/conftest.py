import datetime as dt

import numpy as np
import pytest

from teamswap.data import GeneratorConfig, build_rounds, generate_history
from teamswap.domain import N_FEATURES, N_PLAYERS, Round


def make_round(points, features=None, round_id="R0", date=dt.date(2022, 1, 1)) -> Round:
    points = np.asarray(points, dtype=np.float64)
    if features is None:
        features = np.zeros((N_PLAYERS, N_FEATURES))
    players = tuple(f"P{i:02d}" for i in range(N_PLAYERS))
    return Round(round_id, date, players, points, features)


def random_round(rng, round_id="R0") -> Round:
    return make_round(rng.random(N_PLAYERS), rng.random((N_PLAYERS, N_FEATURES)), round_id)


@pytest.fixture(scope="session")
def small_store():
    return generate_history(GeneratorConfig(n_rounds=120, seed=3))


@pytest.fixture(scope="session")
def small_rounds(small_store):
    return build_rounds(small_store)


# --- acceptance summary -----------------------------------------------------------------------

CRITERIA: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
