import pytest

import run_acceptance as acceptance
from core.config import SimSpec


@pytest.mark.slow
def test_poisson_recovery():
    spec = SimSpec(districts=50, days=100, seed=1)
    result = acceptance.run_scenario("poisson", spec, acceptance.scenario_config(1))
    checks = acceptance.check_recovery(result)
    assert all(checks.values()), checks


@pytest.mark.slow
def test_short_run_on_a_small_panel():
    spec = SimSpec(districts=10, days=40, los_max=5, fit_lag=6, seed=3)
    config = acceptance.parse_config({
        "seed": 3,
        "sem": {"max_lag": 6, "iterations_pre": 10, "iterations_corrected": 10, "summary_window": 10},
    })
    result = acceptance.run_scenario("small", spec, config)
    assert result["iterations"] == 20
    assert sum(result["omega"]) == pytest.approx(1.0, abs=0.05)
    assert result["omega_max_error"] < 0.25
