"""
Synthetic occupancy panels with known flows.
Inflows are Poisson or Negative-Binomial around exp(b0 + b1*x1 + b2*x2); each admitted unit
draws its stay from a geometric-decay exit distribution. Every district has its own stream.
"""

import datetime
import logging
from typing import Optional, Tuple

import numpy as np

from core.config import SimSpec
from core.errors import NegativeOccupancyError
from core.models import GroundTruth, InflowFamily, OccupancyPanel
from core.rng import RngStreams, StreamPhase

logger = logging.getLogger(__name__)

MAX_LEVEL_ATTEMPTS = 5
LONGITUDE_RANGE = (6.0, 15.0)
LATITUDE_RANGE = (47.3, 55.0)


def gen_covariates(spec: SimSpec, rng: np.random.Generator, n_districts: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """x1 per district (constant over time) and x2 per (day, district), both Gamma distributed.

    Returns:
        Tuple of (x1 of shape (D,), x2 of shape (T, D))
    """
    n_districts = spec.districts if n_districts is None else n_districts
    x1 = rng.gamma(spec.x1_shape, 1.0 / spec.x1_rate, size=n_districts)
    x2 = rng.gamma(spec.x2_shape, 1.0 / spec.x2_rate, size=(spec.days, n_districts))
    return x1, x2


def gen_exit_distribution(decay: float = 0.4, L: int = 10) -> np.ndarray:
    """pi_l proportional to exp(-decay * l) for l = 1..L."""
    if L < 1:
        raise ValueError("L must be >= 1")
    weights = np.exp(-decay * np.arange(1, L + 1))
    return weights / weights.sum()


def inflow_intensity(spec: SimSpec, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    b0, b1, b2 = spec.beta
    return np.exp(b0 + b1 * np.asarray(x1)[None, :] + b2 * np.asarray(x2))


def draw_counts(spec: SimSpec, intensity: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson draws, or Negative-Binomial with mean lambda and variance lambda + lambda^2/theta."""
    if InflowFamily(spec.inflow_family) == InflowFamily.NEGATIVE_BINOMIAL:
        theta = float(spec.theta)
        return rng.negative_binomial(theta, theta / (theta + intensity)).astype(np.int64)
    return rng.poisson(intensity).astype(np.int64)


def gen_inflows(
    spec: SimSpec,
    covariates: Tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
    history: int = 0,
) -> np.ndarray:
    """Inflows for `history` days before the panel (at the day-1 intensity) followed by days 1..T.

    Returns:
        Integer array of shape (history + T, D)
    """
    intensity = inflow_intensity(spec, *covariates)
    if history:
        intensity = np.vstack([np.repeat(intensity[:1], history, axis=0), intensity])
    return draw_counts(spec, intensity, rng)


def gen_outflows(inflows: np.ndarray, pi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Give every admitted unit a stay drawn from pi and count exits per day.

    Returns:
        Outflow array with the same shape as inflows; row t counts units that entered
        at t - l with stay l. Units whose exit falls past the last row are not counted.
    """
    inflows = np.asarray(inflows, dtype=np.int64)
    n_rows = inflows.shape[0]
    stays = rng.multinomial(inflows, np.asarray(pi, dtype=float))
    outflows = np.zeros_like(inflows)
    for lag in range(1, stays.shape[-1] + 1):
        if lag < n_rows:
            outflows[lag:] += stays[:n_rows - lag, ..., lag - 1]
    return outflows


def district_ids(n_districts: int) -> list:
    width = max(3, len(str(n_districts)))
    return [f"D{d + 1:0{width}d}" for d in range(n_districts)]


def gen_dataset(spec: SimSpec, streams: Optional[RngStreams] = None) -> Tuple[OccupancyPanel, GroundTruth]:
    """Simulate a full panel with ground truth.

    Args:
        spec: Simulation settings
        streams: Random streams; derived from spec.seed when omitted

    Returns:
        Tuple of (panel with covariates x1, x2 and centroids, ground truth on the panel's days)
    """
    streams = streams or RngStreams(spec.seed)
    districts = district_ids(spec.districts)
    pi = gen_exit_distribution(spec.los_decay, spec.los_max)
    history = spec.los_max
    mean_stay = float(np.arange(1, spec.los_max + 1) @ pi)

    x1 = np.zeros(spec.districts)
    x2 = np.zeros((spec.days, spec.districts))
    inflows = np.zeros((spec.days, spec.districts), dtype=np.int64)
    outflows = np.zeros((spec.days, spec.districts), dtype=np.int64)
    centroids = np.zeros((spec.districts, 2))
    levels = np.zeros(spec.districts, dtype=np.int64)

    for d, district in enumerate(districts):
        rng = streams.stream(0, StreamPhase.GENERATOR, district)
        x1[d:d + 1], x2[:, d:d + 1] = gen_covariates(spec, rng, 1)
        column = gen_inflows(spec, (x1[d:d + 1], x2[:, d:d + 1]), rng, history)
        out = gen_outflows(column, pi, rng)
        inflows[:, d] = column[history:, 0]
        outflows[:, d] = out[history:, 0]
        centroids[d] = rng.uniform(*LONGITUDE_RANGE), rng.uniform(*LATITUDE_RANGE)
        levels[d] = int(round(float(inflow_intensity(spec, x1[d:d + 1], x2[:, d:d + 1]).mean()) * mean_stay))

    net = np.cumsum(inflows - outflows, axis=0)
    for attempt in range(1, MAX_LEVEL_ATTEMPTS + 1):
        occupancy = levels[None, :] + net
        if occupancy.min() >= 0:
            break
        short = occupancy.min(axis=0) < 0
        logger.debug(f"Initial occupancy too low for {int(short.sum())} district(s), attempt {attempt}")
        levels = np.where(short, np.maximum(2 * levels + 1, levels - occupancy.min(axis=0)), levels)
    else:
        raise NegativeOccupancyError(f"Occupancy stayed negative after {MAX_LEVEL_ATTEMPTS} attempts at a starting level")

    start = datetime.date.fromisoformat(spec.start_date)
    dates = [start + datetime.timedelta(days=t) for t in range(spec.days)]
    panel = OccupancyPanel(
        districts=districts,
        dates=dates,
        occupancy=occupancy,
        covariates={"x1": np.repeat(x1[None, :], spec.days, axis=0), "x2": x2},
        centroids=centroids,
    )
    true_pi = np.zeros(max(spec.fit_lag, spec.los_max))
    true_pi[:spec.los_max] = pi
    truth = GroundTruth(inflows, outflows, spec.beta, true_pi)
    logger.info(
        f"Simulated {spec.districts} districts x {spec.days} days "
        f"({InflowFamily(spec.inflow_family).value} inflows, mean inflow {inflows.mean():.2f})"
    )
    return panel, truth
