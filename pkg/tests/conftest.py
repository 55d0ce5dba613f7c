"""Shared environments and analyses, built once per session."""
from __future__ import annotations

import pytest

from stripwalk.env import build_environment, default_iid_spec, default_quasiperiodic_spec, lazify, srw_spec
from stripwalk.harmonic import solve_harmonic
from stripwalk.hierarchy import compute_hierarchy

WINDOW = (-1000, 1000)
BUFFER = 300
ENV_WINDOW = (WINDOW[0] - BUFFER, WINDOW[1] + BUFFER)


def analyse(env):
    h = compute_hierarchy(env, WINDOW)
    return h, solve_harmonic(h)


@pytest.fixture(scope="session")
def quasi_env():
    return build_environment(default_quasiperiodic_spec(), ENV_WINDOW)


@pytest.fixture(scope="session")
def quasi(quasi_env):
    return analyse(quasi_env)


@pytest.fixture(scope="session")
def iid_env():
    return build_environment(default_iid_spec(), ENV_WINDOW)


@pytest.fixture(scope="session")
def iid(iid_env):
    return analyse(iid_env)


@pytest.fixture(scope="session")
def srw_env():
    return build_environment(srw_spec(), ENV_WINDOW)


@pytest.fixture(scope="session")
def srw(srw_env):
    return analyse(srw_env)


@pytest.fixture(scope="session")
def lazy_srw_env(srw_env):
    return lazify(srw_env, 0.5)


@pytest.fixture(scope="session")
def lazy_srw(lazy_srw_env):
    return analyse(lazy_srw_env)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
