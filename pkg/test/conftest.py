"""
Shared fixtures for the occuflow test suite.
"""

import datetime
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

from core.config import RunConfig, SimSpec, parse_config  # noqa: E402
from core.models import OccupancyPanel  # noqa: E402
from simulation.generator import gen_dataset  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run simulation-recovery scenarios")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long simulation-recovery scenario")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def start_date():
    return datetime.date(2021, 8, 1)


@pytest.fixture
def small_frame(start_date):
    """Long-format panel: 3 districts x 8 days with one covariate and centroids."""
    rows = []
    occupancy = {
        "A": [5, 6, 4, 4, 7, 8, 6, 5],
        "B": [0, 1, 1, 2, 0, 0, 3, 2],
        "C": [10, 12, 15, 13, 11, 9, 9, 10],
    }
    centroids = {"A": (7.0, 50.0), "B": (9.5, 52.0), "C": (12.0, 48.5)}
    for t in range(8):
        for d, series in occupancy.items():
            rows.append({
                "date": (start_date + datetime.timedelta(days=t)).isoformat(),
                "district_id": d,
                "occupancy": series[t],
                "population": 100000.0 * (1 + "ABC".index(d)),
                "longitude": centroids[d][0],
                "latitude": centroids[d][1],
                "x": 0.1 * t + "ABC".index(d),
            })
    return pd.DataFrame(rows)


@pytest.fixture
def small_panel(small_frame):
    from core.panel import panel_from_frame
    return panel_from_frame(small_frame)


@pytest.fixture
def sim_spec():
    return SimSpec(districts=4, days=15, los_max=3, fit_lag=3, seed=11)


@pytest.fixture
def simulated(sim_spec):
    """(panel, truth) from a tiny simulation."""
    return gen_dataset(sim_spec)


@pytest.fixture
def tiny_config():
    """Config for a few-iteration sEM run on the tiny simulation."""
    return parse_config({
        "seed": 7,
        "sem": {
            "max_lag": 3,
            "iterations_pre": 3,
            "iterations_corrected": 2,
            "summary_window": 2,
        },
    })


@pytest.fixture
def constant_panel(start_date):
    days = 6
    return OccupancyPanel(
        districts=["X", "Y"],
        dates=[start_date + datetime.timedelta(days=t) for t in range(days)],
        occupancy=np.full((days, 2), 4),
    )


@pytest.fixture
def default_config():
    return RunConfig()
