"""
Stochastic EM for inflow/outflow decomposition.
Each iteration redraws the burn-in, draws latent flows conditional on the observed
differences, refits the inflow model and the exit rates, and, in the corrected phase,
applies the exit-rate bias correction before recording the iteration.
"""

import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from tqdm import tqdm

from core.config import RunConfig, SemConfig
from core.errors import DimensionMismatchError, NumericalError, NumericalFailureError, SemAbortedError
from core.models import (
    DesignMatrix,
    ExitRateVector,
    InflowFit,
    IterationRecord,
    LatentFlows,
    OccupancyPanel,
    Phase,
    SemTrace,
)
from core.panel import build_covariates, compute_deltas
from core.rng import RngStreams, StreamPhase
from estimation.bias_correction import corrected_iteration
from estimation.exit_rates import fit_exit_rates
from estimation.inflow_glm import (
    fit_poisson,
    intensity_matrix,
    intercept_only_fit,
    select_penalty_weights,
    smooth_terms,
)
from estimation.latent import burn_in_inflows, district_generators, e_step, observed_loglik

logger = logging.getLogger(__name__)

RecordSink = Callable[[IterationRecord], None]


def m_step(
    flows: LatentFlows,
    design: DesignMatrix,
    L: int,
    omega_init: ExitRateVector,
    fit_start: Optional[InflowFit] = None,
    penalty_weights: Optional[Dict[str, float]] = None,
    config: Optional[SemConfig] = None,
) -> Tuple[InflowFit, ExitRateVector]:
    """Refit the inflow model on the drawn inflows (days 1..T only) and the exit rates on all flows."""
    config = config or SemConfig()
    if design.n_rows and int(design.times.min()) < 1:
        raise DimensionMismatchError("Inflow design must not contain burn-in rows")
    y = flows.observed_inflow.ravel()
    start = fit_start.coefficients if fit_start is not None and fit_start.names == design.columns else None
    fit = fit_poisson(
        design,
        y,
        start=start,
        penalty_weights=penalty_weights,
        tol=config.irls_tol,
        max_iter=config.irls_max_iter,
    )
    omega = fit_exit_rates(flows, L, omega_init, config.exit_tol, config.exit_max_iter)
    return fit, omega


class SemEngine:
    """Runs the stochastic EM chain on one panel."""

    def __init__(
        self,
        panel: OccupancyPanel,
        config: Optional[RunConfig] = None,
        threads: int = 1,
        sink: Optional[RecordSink] = None,
    ):
        """Initialize the engine.

        Args:
            panel: Validated occupancy panel
            config: Run configuration; the top-level seed overrides sem.seed when set
            threads: Worker threads for the E-step
            sink: Called with every completed iteration record
        """
        self.config = config or RunConfig()
        self.sem = self.config.sem
        self.seed = self.config.seed if self.config.seed is not None else self.sem.seed
        self.threads = max(1, int(threads))
        self.sink = sink

        self.panel = panel
        self.deltas = compute_deltas(panel)
        self.design = build_covariates(panel, self.config.covariates, self.config.basis)
        self.streams = RngStreams(self.seed)
        self.L = self.sem.max_lag

        parametric = [self.design.columns[i] for i in self.design.parametric_columns()]
        self.trace = SemTrace(
            seed=self.seed,
            coefficient_names=self.design.columns,
            max_lag=self.L,
            dates=[d.isoformat() for d in self.deltas.dates],
            districts=panel.districts,
            parametric=parametric,
        )

        level = float(np.mean(np.maximum(self.deltas.delta, 0) + 1))
        self.fit = intercept_only_fit(self.design, level)
        self.omega = ExitRateVector.uniform(self.L)
        self.penalty_weights: Optional[Dict[str, float]] = None
        self.last_flows: Optional[LatentFlows] = None

    def phase_of(self, iteration: int) -> Phase:
        return Phase.PRE_RUN if iteration <= self.sem.iterations_pre else Phase.CORRECTED

    def draw_flows(self, iteration: int, intensity: np.ndarray) -> LatentFlows:
        """Burn-in followed by the conditional E-step at the current parameters."""
        districts = self.panel.districts
        burn_in = burn_in_inflows(
            intensity[0], self.L, district_generators(self.streams, iteration, StreamPhase.BURN_IN, districts)
        )
        return e_step(
            self.deltas,
            intensity,
            self.omega,
            burn_in,
            district_generators(self.streams, iteration, StreamPhase.E_STEP, districts),
            self.sem.tail_tol,
            self.threads,
        )

    def _select_weights(self, flows: LatentFlows) -> None:
        basis = self.config.basis
        if self.penalty_weights is not None:
            return
        if basis.select_by_aic and self.design.penalties:
            self.penalty_weights, _ = select_penalty_weights(
                self.design, flows.observed_inflow.ravel(), basis.aic_grid, self.sem.irls_tol, self.sem.irls_max_iter
            )
        else:
            self.penalty_weights = {b.name: b.weight for b in self.design.penalties}

    def step(self, iteration: int) -> IterationRecord:
        """Run one iteration and update the current estimates."""
        phase = self.phase_of(iteration)
        intensity = intensity_matrix(self.fit, self.design)
        flows = self.draw_flows(iteration, intensity)
        self._select_weights(flows)

        fit, omega_raw = m_step(
            flows, self.design, self.L, self.omega, self.fit, self.penalty_weights, self.sem
        )
        omega, estimate = omega_raw, None
        if phase == Phase.CORRECTED:
            fit, omega, estimate, flows = corrected_iteration(
                self.deltas, self.design, fit, omega_raw, self.streams, iteration, self.sem, self.threads
            )

        loglik = observed_loglik(self.deltas, intensity_matrix(fit, self.design), omega, flows)
        if not np.isfinite(loglik):
            raise NumericalFailureError(f"Observed-data log-likelihood is not finite at iteration {iteration}")

        self.fit, self.omega, self.last_flows = fit, omega, flows
        return IterationRecord(
            iteration=iteration,
            phase=phase,
            beta=fit.coefficients,
            covariance=fit.covariance,
            omega_raw=omega_raw.omega,
            omega=omega.omega,
            omega_covariance=omega_raw.covariance(),
            loglik=loglik,
            omega_corrected=None if estimate is None else estimate.omega_corrected.omega,
            c_hat=None if estimate is None else estimate.c_hat,
            clipped=None if estimate is None else [bool(c) for c in estimate.clipped],
            smooths=smooth_terms(fit, self.design),
        )

    def run(self, progress: bool = False) -> SemTrace:
        """Run all pre-run and corrected iterations.

        Raises:
            SemAbortedError: After more than max_consecutive_failures failed iterations in a row
        """
        total = self.sem.total_iterations
        failures = 0
        logger.info(
            f"Starting sEM: {self.sem.iterations_pre} pre-run + {self.sem.iterations_corrected} corrected "
            f"iterations, L={self.L}, {self.panel.n_districts} districts, seed {self.seed}"
        )
        for iteration in tqdm(range(1, total + 1), desc="sEM", disable=not progress):
            try:
                record = self.step(iteration)
            except NumericalError as e:
                failures += 1
                logger.warning(f"Iteration {iteration} failed ({type(e).__name__}): {e}")
                if failures > self.sem.max_consecutive_failures:
                    logger.error(f"Aborting sEM after {failures} consecutive failures")
                    raise SemAbortedError(
                        f"sEM aborted at iteration {iteration} after {failures} consecutive failures: {e}",
                        self.trace.records,
                    ) from e
                continue
            failures = 0
            self.trace.append(record)
            if self.sink is not None:
                self.sink(record)
            # flow draws of the last summary_window recorded iterations
            self.trace.flow_draws.append(self.last_flows)
            if len(self.trace.flow_draws) > self.sem.summary_window:
                self.trace.flow_draws.pop(0)
            logger.debug(
                f"Iteration {iteration} ({record.phase.value}): loglik={record.loglik:.4f}, "
                f"omega={np.round(record.omega, 4).tolist()}"
            )
        logger.info(f"sEM finished with {len(self.trace)} recorded iterations")
        return self.trace


def run_sem(
    panel: OccupancyPanel,
    config: Optional[RunConfig] = None,
    threads: int = 1,
    sink: Optional[RecordSink] = None,
    progress: bool = False,
) -> SemTrace:
    """Run the stochastic EM on a panel and return its trace."""
    return SemEngine(panel, config, threads, sink).run(progress)
