import datetime

import numpy as np
import pandas as pd
import pytest

from core.config import BasisSpec, CovariateSpec, PanelSchema
from core.errors import (
    DuplicateCellError,
    MissingDayError,
    NegativeOccupancyError,
    NonPositiveLogInputError,
    PanelSchemaError,
    PanelTooShortError,
    UnknownCovariateError,
    UnmappedDistrictError,
)
from core.models import LatentFlows, OccupancyPanel, RegionMap
from core.panel import (
    aggregate_flows,
    build_covariates,
    compute_deltas,
    load_panel,
    load_region_map,
    log_prior_week_rate,
    panel_from_frame,
    weekday_dummies,
)


def test_panel_is_sorted_and_complete(small_frame):
    shuffled = small_frame.sample(frac=1.0, random_state=3)
    panel = panel_from_frame(shuffled)
    assert panel.districts == ["A", "B", "C"]
    assert panel.dates[0] == datetime.date(2021, 8, 1)
    assert panel.occupancy[:, 0].tolist() == [5, 6, 4, 4, 7, 8, 6, 5]
    assert set(panel.covariates) == {"x"}
    assert panel.population.tolist() == [100000.0, 200000.0, 300000.0]
    assert panel.centroids.shape == (3, 2)


def test_missing_day_is_rejected(small_frame):
    frame = small_frame.drop(index=small_frame.index[(small_frame.district_id == "B").to_numpy()][3])
    with pytest.raises(MissingDayError, match="B"):
        panel_from_frame(frame)


def test_duplicate_cell_is_rejected(small_frame):
    frame = pd.concat([small_frame, small_frame.iloc[[0]]])
    with pytest.raises(DuplicateCellError):
        panel_from_frame(frame)


def test_negative_occupancy_is_rejected(small_frame):
    frame = small_frame.copy()
    frame.loc[4, "occupancy"] = -1
    with pytest.raises(NegativeOccupancyError):
        panel_from_frame(frame)


def test_fractional_occupancy_is_rejected(small_frame):
    frame = small_frame.copy()
    frame["occupancy"] = frame["occupancy"].astype(float)
    frame.loc[2, "occupancy"] = 2.5
    with pytest.raises(PanelSchemaError):
        panel_from_frame(frame)


def test_unknown_covariate_column(small_frame):
    with pytest.raises(UnknownCovariateError):
        panel_from_frame(small_frame, PanelSchema(covariate_columns=["incidence"]))


def test_load_panel_round_trip(tmp_path, small_panel):
    path = tmp_path / "panel.csv"
    small_panel.to_frame().to_csv(path, index=False)
    loaded = load_panel(str(path))
    assert loaded.districts == small_panel.districts
    assert np.array_equal(loaded.occupancy, small_panel.occupancy)
    assert np.allclose(loaded.covariates["x"], small_panel.covariates["x"])


def test_load_panel_missing_file(tmp_path):
    with pytest.raises(PanelSchemaError):
        load_panel(str(tmp_path / "absent.csv"))


def test_deltas(small_panel):
    deltas = compute_deltas(small_panel)
    assert deltas.delta.shape == (7, 3)
    assert deltas.delta[:, 0].tolist() == [1, -2, 0, 3, 1, -2, -1]
    assert deltas.dates[0] == datetime.date(2021, 8, 2)


def test_single_day_panel_is_too_short(start_date):
    panel = OccupancyPanel(["A"], [start_date], np.array([[3]]))
    with pytest.raises(PanelTooShortError):
        compute_deltas(panel)


def test_weekday_reference_is_friday():
    friday = datetime.date(2021, 8, 6)
    dates = [friday + datetime.timedelta(days=k) for k in range(7)]
    dummies = weekday_dummies(dates)
    assert len(dummies) == 6
    assert all(values[0] == 0 for values in dummies.values())
    assert dummies["saturday"].tolist() == [0, 1, 0, 0, 0, 0, 0]
    assert sum(values.sum() for values in dummies.values()) == 6


def test_prior_week_rate_uses_strictly_earlier_days():
    counts = np.array([[10.0], [10.0], [10.0], [40.0]])
    rates = log_prior_week_rate(counts, np.array([100000.0]), epsilon=1.0)
    assert rates[:, 0] == pytest.approx(np.log([11.0, 11.0, 11.0]))
    counts[0, 0] = 20.0
    assert log_prior_week_rate(counts, None, 1.0)[1, 0] == pytest.approx(np.log(16.0))


def test_prior_week_rate_needs_positive_input():
    with pytest.raises(NonPositiveLogInputError):
        log_prior_week_rate(np.zeros((5, 2)), None, epsilon=0.0)


def test_design_columns_and_layout(small_panel):
    design = build_covariates(small_panel, CovariateSpec(weekday=True))
    assert design.columns[:2] == ["intercept", "x"]
    assert "friday" not in design.columns and "monday" in design.columns
    assert design.n_rows == 7 * 3
    assert design.values[1, 1] == pytest.approx(small_panel.covariates["x"][1, 1])
    assert design.times[:3].tolist() == [1, 1, 1]
    assert design.district_index[:3].tolist() == [0, 1, 2]


def test_design_with_infection_rate(small_panel):
    design = build_covariates(small_panel, CovariateSpec(columns=[], infection_rates=["x"]))
    assert design.columns == ["intercept", "log_rate_x"]


def test_design_rejects_unknown_covariate(small_panel):
    with pytest.raises(UnknownCovariateError):
        build_covariates(small_panel, CovariateSpec(columns=["y"]))


def test_design_with_smooths(small_panel):
    basis = BasisSpec(time_smooth=True, time_basis_size=5, space_smooth=True, space_basis_size=3)
    design = build_covariates(small_panel, CovariateSpec(), basis)
    time_columns = design.smooth_columns()["time"]
    space_columns = design.smooth_columns()["space"]
    assert len(time_columns) == 4
    assert len(space_columns) == 4
    assert design.columns[time_columns[0]] == "s(time).1"
    block = design.values[:, time_columns].reshape(7, 3, -1)
    assert np.allclose(block[:, 0], block[:, 2])
    assert design.parametric_columns() == [0, 1]


def test_region_aggregation(tmp_path):
    path = tmp_path / "regions.csv"
    pd.DataFrame({"district_id": ["a", "b", "c"], "region_id": ["N", "S", "N"]}).to_csv(path, index=False)
    region_map = load_region_map(str(path))
    flows = LatentFlows(
        inflow=np.array([[9, 9, 9], [1, 2, 3], [4, 5, 6]]),
        outflow=np.array([[0, 1, 1], [2, 0, 2]]),
        burn_in_length=1,
        districts=["a", "b", "c"],
    )
    frame = aggregate_flows(flows, region_map)
    north = frame[frame.region_id == "N"]
    assert north.inflow.tolist() == [4, 10]
    assert north.outflow.tolist() == [1, 4]


def test_unmapped_district():
    flows = LatentFlows(np.ones((2, 2)), np.ones((1, 2)), 1, ["a", "b"])
    with pytest.raises(UnmappedDistrictError):
        aggregate_flows(flows, RegionMap({"a": "N"}))
