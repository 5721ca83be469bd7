"""
Analytics for stochastic EM chains.
This module combines the iterations of a chain into point estimates, Rubin's-rule
variances and percentile bands, and summarizes the drawn latent flows.
"""

import datetime
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import DimensionMismatchError, WindowTooShortError
from core.models import ChainSummary, LatentFlows, RegionMap, SemTrace
from core.panel import aggregate_flows
from estimation.exit_rates import smooth_exit_rates

logger = logging.getLogger(__name__)

BAND = (2.5, 97.5)


def _check_window(window: Tuple[int, int], available: int) -> Tuple[int, int]:
    start, end = int(window[0]), int(window[1])
    if start < 0 or end > available:
        raise WindowTooShortError(f"Window {start}:{end} exceeds the {available} available iterations")
    if end - start < 2:
        raise WindowTooShortError(f"Window {start}:{end} holds fewer than two iterations")
    return start, end


def rubin_variance(
    betas: Sequence[np.ndarray],
    covariances: Sequence[np.ndarray],
    window: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """Mean within-iteration covariance plus the between-iteration sample covariance.

    Args:
        betas: Coefficient vector per iteration
        covariances: Covariance matrix per iteration
        window: Half-open slice (start, end) of the iterations to combine; all when omitted

    Returns:
        Combined covariance matrix
    """
    betas = np.asarray(betas, dtype=float)
    covariances = np.asarray(covariances, dtype=float)
    if betas.ndim == 1:
        betas = betas[:, None]
    if covariances.ndim == 1:
        covariances = covariances[:, None, None]
    if covariances.shape != (betas.shape[0], betas.shape[1], betas.shape[1]):
        raise DimensionMismatchError("Covariances must be (iterations, p, p) for (iterations, p) coefficients")

    start, end = _check_window(window or (0, betas.shape[0]), betas.shape[0])
    betas, covariances = betas[start:end], covariances[start:end]
    within = covariances.sum(axis=0) / (end - start)
    between = np.atleast_2d(np.cov(betas, rowvar=False, ddof=1))
    return within + between


def _band(draws: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo, median, hi = np.percentile(draws, [BAND[0], 50.0, BAND[1]], axis=0)
    return median, lo, hi


def _to_simplex_median(per_lag_median: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """Per-lag medians rescaled to sum to one; the mean draw when every median is zero."""
    total = float(per_lag_median.sum())
    if total <= 0:
        return omegas.mean(axis=0)
    return per_lag_median / total


def summarize_chain(trace: SemTrace, window: Tuple[int, int]) -> ChainSummary:
    """Medians, Rubin standard deviations and percentile bands over a window of recorded iterations.

    Args:
        trace: Chain trace
        window: Half-open slice (start, end) of trace records

    Returns:
        Chain summary for the coefficients, the exit rates and any smooth terms
    """
    start, end = _check_window(window, len(trace))
    records = trace.records[start:end]

    betas = np.array([r.beta for r in records])
    coefficient_covariance = rubin_variance(betas, [r.covariance for r in records])

    omegas = np.array([r.omega for r in records])
    L = omegas.shape[1]
    omega_covs = [r.omega_covariance if r.omega_covariance is not None else np.zeros((L, L)) for r in records]
    omega_covariance = rubin_variance(omegas, omega_covs)
    per_lag_median, omega_lo, omega_hi = _band(omegas)
    omega_median = _to_simplex_median(per_lag_median, omegas)

    smooth_bands: Dict[str, Dict[str, np.ndarray]] = {}
    for name in records[0].smooths:
        median, lo, hi = _band(np.array([r.smooths[name] for r in records]))
        smooth_bands[name] = {"median": median, "lo": lo, "hi": hi}

    logger.info(f"Summarized {end - start} iterations ({start}:{end}) of a {len(trace)}-iteration trace")
    return ChainSummary(
        coefficient_names=trace.coefficient_names,
        point_estimates=np.median(betas, axis=0),
        std_devs=np.sqrt(np.maximum(np.diag(coefficient_covariance), 0.0)),
        coefficient_covariance=coefficient_covariance,
        omega_median=omega_median,
        omega_lo=omega_lo,
        omega_hi=omega_hi,
        omega_std=np.sqrt(np.maximum(np.diag(omega_covariance), 0.0)),
        omega_covariance=omega_covariance,
        omega_smooth=smooth_exit_rates(omega_median),
        window=(start, end),
        smooth_bands=smooth_bands,
    )


def loglik_trend(logliks: Sequence[float], after: int = 0, span: int = 20) -> float:
    """Median successive difference of the log-likelihood over the last `span` iterations past `after`."""
    values = np.asarray(logliks, dtype=float)[after:]
    if values.size < 2:
        raise WindowTooShortError("Need at least two iterations to measure a trend")
    return float(np.median(np.diff(values[-(span + 1):])))


def median_flows(draws: Sequence[LatentFlows]) -> Tuple[np.ndarray, np.ndarray]:
    """Cellwise medians of observed inflows and outflows across draws."""
    if not draws:
        raise WindowTooShortError("No flow draws were kept")
    inflow = np.median(np.stack([f.observed_inflow for f in draws]), axis=0)
    outflow = np.median(np.stack([f.outflow for f in draws]), axis=0)
    return inflow, outflow


def region_flow_medians(
    draws: Sequence[LatentFlows],
    region_map: RegionMap,
    dates: Optional[Sequence[datetime.date]] = None,
) -> pd.DataFrame:
    """Aggregate every draw to regions, then take medians per (date, region)."""
    if not draws:
        raise WindowTooShortError("No flow draws were kept")
    frames: List[pd.DataFrame] = [aggregate_flows(f, region_map, dates) for f in draws]
    stacked = pd.concat(frames, ignore_index=True)
    result = stacked.groupby(["date", "region_id"], sort=True)[["inflow", "outflow"]].median().reset_index()
    return result
