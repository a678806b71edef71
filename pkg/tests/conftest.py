import numpy as np
import pytest
from hypothesis import strategies as st

from dcpo import Mdp, build_gridworld


def random_mdp(rng, n_states=3, n_actions=2, gamma=None, p0=None):
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    gamma = rng.uniform(0.5, 0.95) if gamma is None else gamma
    p0 = rng.dirichlet(np.ones(n_states)) if p0 is None else p0
    return Mdp(P, r, gamma, p0)


def random_policy(rng, n_states, n_actions, floor=0.0):
    pi = rng.dirichlet(np.ones(n_actions), size=n_states)
    if floor:
        pi = (pi + floor) / (1.0 + n_actions * floor)
    return pi


@st.composite
def mdps(draw, max_states=5, max_actions=3):
    seed = draw(st.integers(0, 2**32 - 1))
    n_states = draw(st.integers(1, max_states))
    n_actions = draw(st.integers(1, max_actions))
    return random_mdp(np.random.default_rng(seed), n_states, n_actions)


seeds = st.integers(0, 2**32 - 1)


@pytest.fixture(scope="session")
def grid():
    return build_gridworld()


@pytest.fixture(scope="session")
def grid_risk():
    return build_gridworld("risk_averse")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if report.when != "call" or "test_acceptance.py::test_criterion_" not in report.nodeid:
                continue
            name = report.nodeid.split("::test_criterion_")[1]
            number, _, title = name.partition("_")
            lines.append((int(number), f"criterion {number} ({title.replace('_', ' ')}): "
                                        f"{'PASS' if outcome == 'passed' else 'FAIL'}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
