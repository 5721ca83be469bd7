"""
Panel data handling for occupancy series.
This module provides loading, validation, differencing, covariate construction
and regional aggregation of daily per-district occupancy panels.
"""

import datetime
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

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
from core.models import DeltaSeries, DesignMatrix, LatentFlows, OccupancyPanel, PenaltyBlock, RegionMap
from estimation.inflow_glm import build_basis, constrain_block

logger = logging.getLogger(__name__)

WEEKDAY_COLUMNS = {0: "monday", 1: "tuesday", 2: "wednesday", 3: "thursday", 5: "saturday", 6: "sunday"}
INFECTION_WINDOW_DAYS = 7
PER_100K = 1e-5


def load_panel(path: str, schema: Optional[PanelSchema] = None) -> OccupancyPanel:
    """Load and validate an occupancy CSV.

    Args:
        path: Path to the CSV file
        schema: Column names; defaults to the documented schema

    Returns:
        Validated panel with dates ascending and districts sorted by id
    """
    schema = schema or PanelSchema()
    if not os.path.exists(path):
        raise PanelSchemaError(f"Panel file {path} not found")

    frame = pd.read_csv(path, dtype={schema.district_column: str})
    required = [schema.date_column, schema.district_column, schema.occupancy_column]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise PanelSchemaError(f"Panel file {path} lacks columns {missing}")

    panel = panel_from_frame(frame, schema)
    logger.info(f"Loaded panel from {path}: {panel.n_days} days x {panel.n_districts} districts")
    return panel


def panel_from_frame(frame: pd.DataFrame, schema: Optional[PanelSchema] = None) -> OccupancyPanel:
    """Validate a long-format frame and pivot it into a panel."""
    schema = schema or PanelSchema()
    date_col, district_col, occ_col = schema.date_column, schema.district_column, schema.occupancy_column

    frame = frame.copy()
    frame[district_col] = frame[district_col].astype(str)
    try:
        frame[date_col] = pd.to_datetime(frame[date_col], format="%Y-%m-%d").dt.date
    except (ValueError, TypeError) as e:
        raise PanelSchemaError(f"Column {date_col} must hold ISO-8601 dates: {e}") from e

    duplicated = frame.duplicated([date_col, district_col], keep=False)
    if duplicated.any():
        first = frame.loc[duplicated].iloc[0]
        raise DuplicateCellError(f"Duplicate rows for district {first[district_col]} on {first[date_col]}")

    occupancy = pd.to_numeric(frame[occ_col], errors="coerce")
    if occupancy.isna().any() or not np.all(np.equal(np.mod(occupancy, 1), 0)):
        raise PanelSchemaError(f"Column {occ_col} must hold integer counts")
    if (occupancy < 0).any():
        bad = frame.loc[occupancy < 0].iloc[0]
        raise NegativeOccupancyError(
            f"Negative occupancy {bad[occ_col]} for district {bad[district_col]} on {bad[date_col]}"
        )
    frame[occ_col] = occupancy.astype(np.int64)

    districts = sorted(frame[district_col].unique())
    first_day, last_day = frame[date_col].min(), frame[date_col].max()
    n_days = (last_day - first_day).days + 1
    dates = [first_day + datetime.timedelta(days=i) for i in range(n_days)]

    for district, group in frame.groupby(district_col, sort=True):
        present = set(group[date_col])
        if len(present) != n_days:
            gap = next(d for d in dates if d not in present)
            raise MissingDayError(f"District {district} has no observation on {gap.isoformat()}")

    indexed = frame.set_index([date_col, district_col]).sort_index()
    full_index = pd.MultiIndex.from_product([dates, districts], names=[date_col, district_col])
    indexed = indexed.reindex(full_index)

    occupancy_matrix = indexed[occ_col].to_numpy(dtype=np.int64).reshape(n_days, len(districts))

    reserved = {date_col, district_col, occ_col, schema.population_column,
                schema.longitude_column, schema.latitude_column}
    if schema.covariate_columns is None:
        covariate_names = [
            c for c in frame.columns
            if c not in reserved and pd.api.types.is_numeric_dtype(frame[c])
        ]
    else:
        covariate_names = list(schema.covariate_columns)
        unknown = [c for c in covariate_names if c not in frame.columns]
        if unknown:
            raise UnknownCovariateError(f"Covariate columns {unknown} are not in the panel")
    covariates = {
        name: indexed[name].to_numpy(dtype=float).reshape(n_days, len(districts))
        for name in covariate_names
    }

    population = _district_constant(indexed, schema.population_column, n_days, len(districts))
    longitude = _district_constant(indexed, schema.longitude_column, n_days, len(districts))
    latitude = _district_constant(indexed, schema.latitude_column, n_days, len(districts))
    centroids = None
    if longitude is not None and latitude is not None:
        centroids = np.column_stack([longitude, latitude])

    return OccupancyPanel(
        districts=districts,
        dates=dates,
        occupancy=occupancy_matrix,
        covariates=covariates,
        population=population,
        centroids=centroids,
    )


def _district_constant(indexed: pd.DataFrame, column: Optional[str], n_days: int, n_districts: int):
    """Per-district value of a column that must not vary over time."""
    if column is None or column not in indexed.columns:
        return None
    values = indexed[column].to_numpy(dtype=float).reshape(n_days, n_districts)
    if np.isnan(values).any():
        raise PanelSchemaError(f"Column {column} has missing values")
    if not np.allclose(values, values[0]):
        raise PanelSchemaError(f"Column {column} must be constant over time within a district")
    return values[0].copy()


def compute_deltas(panel: OccupancyPanel) -> DeltaSeries:
    """First differences Y_t - Y_(t-1) for t = 2..T."""
    if panel.n_days < 2:
        raise PanelTooShortError(f"Panel has {panel.n_days} day(s); at least 2 are needed")
    return DeltaSeries(np.diff(panel.occupancy, axis=0), panel.dates[1:], panel.districts)


def weekday_dummies(dates: Sequence[datetime.date]) -> Dict[str, np.ndarray]:
    """Six 0/1 indicators per date; Friday is the all-zero reference."""
    weekdays = np.array([d.weekday() for d in dates])
    return {name: (weekdays == day).astype(float) for day, name in WEEKDAY_COLUMNS.items()}


def log_prior_week_rate(
    counts: np.ndarray,
    population: Optional[np.ndarray],
    epsilon: float,
    name: str = "rate",
) -> np.ndarray:
    """log(mean over the 7 days strictly before t, per 100,000, + epsilon) for t = 2..T.

    Rows near the start of the panel average over the prior days that exist.
    """
    counts = np.asarray(counts, dtype=float)
    n_days = counts.shape[0]
    cumulative = np.vstack([np.zeros((1, counts.shape[1])), np.cumsum(counts, axis=0)])
    ends = np.arange(1, n_days)
    starts = np.maximum(0, ends - INFECTION_WINDOW_DAYS)
    means = (cumulative[ends] - cumulative[starts]) / (ends - starts)[:, None]
    if population is not None:
        means = means / (np.asarray(population, dtype=float)[None, :] * PER_100K)
    shifted = means + epsilon
    if np.any(shifted <= 0):
        raise NonPositiveLogInputError(
            f"Covariate {name} has non-positive 7-day averages; set log_epsilon > 0"
        )
    return np.log(shifted)


def build_covariates(
    panel: OccupancyPanel,
    spec: Optional[CovariateSpec] = None,
    basis: Optional[BasisSpec] = None,
) -> DesignMatrix:
    """Build the inflow design for t = 2..T of the panel (time index 1..T-1 of the differences).

    Rows are time-major: row (t-1)*D + d holds district d at difference time t.
    """
    spec = spec or CovariateSpec()
    basis = basis or BasisSpec()
    if panel.n_days < 2:
        raise PanelTooShortError(f"Panel has {panel.n_days} day(s); at least 2 are needed")

    n_times, n_districts = panel.n_days - 1, panel.n_districts
    times = np.repeat(np.arange(1, n_times + 1), n_districts)
    district_index = np.tile(np.arange(n_districts), n_times)

    names: List[str] = ["intercept"]
    blocks: List[np.ndarray] = [np.ones((n_times * n_districts, 1))]

    raw_columns = spec.columns
    if raw_columns is None:
        raw_columns = [c for c in panel.covariates if c not in spec.infection_rates]
    for name in list(raw_columns) + list(spec.infection_rates):
        if name not in panel.covariates:
            raise UnknownCovariateError(f"Covariate {name} is not in the panel")

    for name in raw_columns:
        names.append(name)
        blocks.append(panel.covariates[name][1:].reshape(-1, 1))

    for name in spec.infection_rates:
        values = log_prior_week_rate(panel.covariates[name], panel.population, spec.log_epsilon, name)
        names.append(f"log_rate_{name}")
        blocks.append(values.reshape(-1, 1))

    if spec.weekday:
        for name, indicator in weekday_dummies(panel.dates[1:]).items():
            names.append(name)
            blocks.append(np.repeat(indicator, n_districts).reshape(-1, 1))

    penalties: List[PenaltyBlock] = []
    if basis.time_smooth or basis.space_smooth:
        coords = panel.centroids
        terms = build_basis(np.arange(1, n_times + 1), coords, basis)
        for term in terms:
            columns, penalty = constrain_block(term.columns, term.penalty)
            if term.name == "time":
                expanded = np.repeat(columns, n_districts, axis=0)
            else:
                expanded = np.tile(columns, (n_times, 1))
            start = sum(b.shape[1] for b in blocks)
            labels = [f"s({term.name}).{k + 1}" for k in range(columns.shape[1])]
            penalties.append(
                PenaltyBlock(term.name, range(start, start + len(labels)), penalty, term.weight)
            )
            names.extend(labels)
            blocks.append(expanded)

    design = DesignMatrix(
        columns=names,
        values=np.hstack(blocks),
        times=times,
        district_index=district_index,
        penalties=penalties,
    )
    logger.info(f"Built inflow design with {design.n_rows} rows and columns {names[:12]}")
    return design


def load_region_map(path: str, district_column: str = "district_id", region_column: str = "region_id") -> RegionMap:
    """Read a two-column district-to-region CSV."""
    if not os.path.exists(path):
        raise PanelSchemaError(f"Region map {path} not found")
    frame = pd.read_csv(path, dtype=str)
    if district_column not in frame.columns or region_column not in frame.columns:
        raise PanelSchemaError(f"Region map {path} needs columns {district_column}, {region_column}")
    if frame[district_column].duplicated().any():
        raise PanelSchemaError(f"Region map {path} lists a district twice")
    return RegionMap(dict(zip(frame[district_column], frame[region_column])))


def aggregate_matrix(values: np.ndarray, districts: Sequence[str], region_map: RegionMap) -> pd.DataFrame:
    """Sum (time, district) columns into (time, region) columns."""
    unmapped = [d for d in districts if d not in region_map.mapping]
    if unmapped:
        raise UnmappedDistrictError(f"Districts {unmapped[:5]} are not in the region map")
    frame = pd.DataFrame(np.asarray(values), columns=list(districts))
    regions = [region_map.mapping[d] for d in districts]
    return frame.T.groupby(regions, sort=True).sum().T


def aggregate_flows(
    flows: LatentFlows,
    region_map: RegionMap,
    dates: Optional[Sequence[datetime.date]] = None,
) -> pd.DataFrame:
    """Per-region daily inflow and outflow totals over the observed window.

    Returns:
        Long frame with columns date, region_id, inflow, outflow
    """
    inflow = aggregate_matrix(flows.observed_inflow, flows.districts, region_map)
    outflow = aggregate_matrix(flows.outflow, flows.districts, region_map)
    labels = [d.isoformat() for d in dates] if dates is not None else list(range(1, flows.n_times + 1))
    inflow.index = labels
    outflow.index = labels
    long_in = inflow.stack().rename("inflow")
    long_out = outflow.stack().rename("outflow")
    result = pd.concat([long_in, long_out], axis=1).reset_index()
    result.columns = ["date", "region_id", "inflow", "outflow"]
    return result
