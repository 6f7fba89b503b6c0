"""Shared fixtures and the acceptance-summary reporting hook."""

import dataclasses

import numpy as np
import pytest

from spsim.dynamics import TimeGrid, evolve, g1_grid, g2_grid, mean_photon_number, pulse_window
from spsim.model import gaussian_pulse, projector, two_level_system


def pytest_configure(config):
    config._criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion_report(request):
    """Collects one human-readable pass/fail line per acceptance criterion."""
    lines = request.config._criterion_lines

    def report(line: str) -> None:
        lines.append(line)

    return report


@pytest.fixture(scope="session")
def excited_decay():
    """Undriven emitter prepared excited: every closed form is available."""
    base = two_level_system(gamma=1.0)
    system = dataclasses.replace(base, rho0=projector(2, 1).matrix)
    grid = TimeGrid(0.0, 20.0, 801)
    traj = evolve(system, grid)
    return {"system": system, "grid": grid, "traj": traj}


@pytest.fixture(scope="session")
def driven_point():
    """Resonantly driven two-level source at a fixed moderate amplitude.

    No calibration, so the numbers are cheap and exactly reproducible;
    used wherever a generic nonzero correlation grid is needed.
    """
    fwhm = 1.0
    center, grid = pulse_window(fwhm)
    system = two_level_system(pulse=gaussian_pulse(2.0, center, fwhm))
    traj = evolve(system, grid)
    mean = mean_photon_number(system, traj)
    return {
        "system": system,
        "grid": grid,
        "center": center,
        "traj": traj,
        "mean": mean,
        "g1": g1_grid(system, grid),
        "g2": g2_grid(system, grid),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
