"""
Core models for the occupancy flow decomposition toolkit.
This module defines the data types for panels, latent flows, fitted models and chain records.
"""

import datetime
import enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import DimensionMismatchError, UnmappedDistrictError


class Phase(str, enum.Enum):
    """Phase of a stochastic EM iteration."""
    PRE_RUN = "pre_run"
    CORRECTED = "corrected"


class ExitRateStatus(str, enum.Enum):
    """Outcome of an exit-rate fit."""
    CONVERGED = "converged"
    NONCONVERGED = "nonconverged"
    FLAT_LIKELIHOOD = "flat_likelihood"


class InflowFamily(str, enum.Enum):
    """Distribution used to generate synthetic inflows."""
    POISSON = "poisson"
    NEGATIVE_BINOMIAL = "negbin"


class OccupancyPanel:
    """Observed daily occupancy per district, with covariates."""

    def __init__(
        self,
        districts: Sequence[str],
        dates: Sequence[datetime.date],
        occupancy: np.ndarray,
        covariates: Optional[Dict[str, np.ndarray]] = None,
        population: Optional[np.ndarray] = None,
        centroids: Optional[np.ndarray] = None,
    ):
        self.districts = list(districts)
        self.dates = list(dates)
        self.occupancy = np.asarray(occupancy, dtype=np.int64)
        self.covariates = {name: np.asarray(values, dtype=float) for name, values in (covariates or {}).items()}
        self.population = None if population is None else np.asarray(population, dtype=float)
        self.centroids = None if centroids is None else np.asarray(centroids, dtype=float)

        shape = (len(self.dates), len(self.districts))
        if self.occupancy.shape != shape:
            raise DimensionMismatchError(f"occupancy has shape {self.occupancy.shape}, expected {shape}")
        for name, values in self.covariates.items():
            if values.shape != shape:
                raise DimensionMismatchError(f"covariate {name} has shape {values.shape}, expected {shape}")
        if self.population is not None and self.population.shape != (shape[1],):
            raise DimensionMismatchError("population must have one entry per district")
        if self.centroids is not None and self.centroids.shape != (shape[1], 2):
            raise DimensionMismatchError("centroids must be a (districts, 2) array of longitude/latitude")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_districts(self) -> int:
        return len(self.districts)

    def to_frame(self) -> pd.DataFrame:
        """Long-format frame, one row per (date, district)."""
        n_days, n_districts = self.occupancy.shape
        frame = pd.DataFrame({
            "date": np.repeat([d.isoformat() for d in self.dates], n_districts),
            "district_id": np.tile(self.districts, n_days),
            "occupancy": self.occupancy.ravel(),
        })
        for name, values in self.covariates.items():
            frame[name] = values.ravel()
        if self.population is not None:
            frame["population"] = np.tile(self.population, n_days)
        if self.centroids is not None:
            frame["longitude"] = np.tile(self.centroids[:, 0], n_days)
            frame["latitude"] = np.tile(self.centroids[:, 1], n_days)
        return frame


class DeltaSeries:
    """First differences of occupancy, one row per day after the first."""

    def __init__(self, delta: np.ndarray, dates: Sequence[datetime.date], districts: Sequence[str]):
        self.delta = np.asarray(delta, dtype=np.int64)
        self.dates = list(dates)
        self.districts = list(districts)
        if self.delta.shape != (len(self.dates), len(self.districts)):
            raise DimensionMismatchError("delta shape does not match dates and districts")

    @property
    def n_times(self) -> int:
        return self.delta.shape[0]

    @property
    def n_districts(self) -> int:
        return self.delta.shape[1]


class PenaltyBlock:
    """Quadratic penalty on a contiguous group of design columns."""

    def __init__(self, name: str, columns: Sequence[int], matrix: np.ndarray, weight: float = 1.0):
        self.name = name
        self.columns = list(columns)
        self.matrix = np.asarray(matrix, dtype=float)
        self.weight = float(weight)
        if self.matrix.shape != (len(self.columns), len(self.columns)):
            raise DimensionMismatchError(f"penalty {name} does not match its column count")

    def to_dict(self) -> Dict:
        return {"name": self.name, "columns": self.columns, "weight": self.weight}


class DesignMatrix:
    """Inflow design: one row per (time, district), named columns and penalty blocks."""

    def __init__(
        self,
        columns: Sequence[str],
        values: np.ndarray,
        times: np.ndarray,
        district_index: np.ndarray,
        penalties: Optional[List[PenaltyBlock]] = None,
        offset: Optional[np.ndarray] = None,
    ):
        self.columns = list(columns)
        self.values = np.asarray(values, dtype=float)
        self.times = np.asarray(times, dtype=np.int64)
        self.district_index = np.asarray(district_index, dtype=np.int64)
        self.penalties = penalties or []
        self.offset = np.zeros(self.values.shape[0]) if offset is None else np.asarray(offset, dtype=float)

        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise DimensionMismatchError("design values do not match column names")
        n_rows = self.values.shape[0]
        if self.times.shape != (n_rows,) or self.district_index.shape != (n_rows,) or self.offset.shape != (n_rows,):
            raise DimensionMismatchError("row index and offset must have one entry per design row")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_times(self) -> int:
        return int(self.times.max()) if self.n_rows else 0

    @property
    def n_districts(self) -> int:
        return int(self.district_index.max()) + 1 if self.n_rows else 0

    def penalty_matrix(self, weights: Optional[Dict[str, float]] = None) -> np.ndarray:
        """Full width-by-width penalty, optionally overriding block weights by name."""
        weights = weights or {}
        penalty = np.zeros((self.width, self.width))
        for block in self.penalties:
            weight = weights.get(block.name, block.weight)
            idx = np.ix_(block.columns, block.columns)
            penalty[idx] += weight * block.matrix
        return penalty

    def smooth_columns(self) -> Dict[str, List[int]]:
        return {block.name: block.columns for block in self.penalties}

    def parametric_columns(self) -> List[int]:
        penalized = {c for block in self.penalties for c in block.columns}
        return [i for i in range(self.width) if i not in penalized]


class RegionMap:
    """Total mapping from district id to region id."""

    def __init__(self, mapping: Dict[str, str]):
        self.mapping = dict(mapping)

    def region_of(self, district_id: str) -> str:
        try:
            return self.mapping[district_id]
        except KeyError:
            raise UnmappedDistrictError(f"District {district_id} is not in the region map") from None

    def regions(self) -> List[str]:
        return sorted(set(self.mapping.values()))

    @classmethod
    def identity(cls, districts: Sequence[str]) -> "RegionMap":
        return cls({d: d for d in districts})


class SkellamParams:
    """Inflow and outflow intensities of a Skellam difference."""

    def __init__(self, lambda_in: float, lambda_out: float):
        self.lambda_in = float(lambda_in)
        self.lambda_out = float(lambda_out)
        if not (np.isfinite(self.lambda_in) and np.isfinite(self.lambda_out)):
            raise ValueError("Skellam intensities must be finite")
        if self.lambda_in < 0 or self.lambda_out < 0:
            raise ValueError("Skellam intensities must be nonnegative")


class TruncatedJointPmf:
    """Conditional law of the inflow given the difference, truncated at i_max."""

    def __init__(self, delta: int, i_max: int, probs: np.ndarray):
        self.delta = int(delta)
        self.i_max = int(i_max)
        self.probs = np.asarray(probs, dtype=float)
        if self.probs.shape != (self.i_max - self.lower + 1,):
            raise DimensionMismatchError("probabilities must cover max(0, delta)..i_max")

    @property
    def lower(self) -> int:
        return max(0, self.delta)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.lower, self.i_max + 1)

    def mean_inflow(self) -> float:
        return float(np.dot(self.support, self.probs))

    def mean_outflow(self) -> float:
        return float(np.dot(self.support - self.delta, self.probs))


class InflowFit:
    """Fitted log-linear inflow intensity."""

    def __init__(
        self,
        coefficients: np.ndarray,
        covariance: np.ndarray,
        names: Sequence[str],
        deviance: float = float("nan"),
        loglik: float = float("nan"),
        edf: float = float("nan"),
        iterations: int = 0,
        penalty_weights: Optional[Dict[str, float]] = None,
    ):
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.covariance = np.asarray(covariance, dtype=float)
        self.names = list(names)
        self.deviance = float(deviance)
        self.loglik = float(loglik)
        self.edf = float(edf)
        self.iterations = int(iterations)
        self.penalty_weights = dict(penalty_weights or {})
        p = len(self.names)
        if self.coefficients.shape != (p,) or self.covariance.shape != (p, p):
            raise DimensionMismatchError("coefficients and covariance must match the design width")

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.edf

    def to_dict(self) -> Dict:
        return {
            "names": self.names,
            "coefficients": self.coefficients.tolist(),
            "covariance": self.covariance.tolist(),
            "deviance": self.deviance,
            "loglik": self.loglik,
            "edf": self.edf,
            "iterations": self.iterations,
            "penalty_weights": self.penalty_weights,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "InflowFit":
        return cls(
            coefficients=np.array(data["coefficients"], dtype=float),
            covariance=np.array(data["covariance"], dtype=float),
            names=data["names"],
            deviance=data.get("deviance", float("nan")),
            loglik=data.get("loglik", float("nan")),
            edf=data.get("edf", float("nan")),
            iterations=data.get("iterations", 0),
            penalty_weights=data.get("penalty_weights"),
        )


class ExitRateVector:
    """Exit probabilities by days since admission, on the probability simplex."""

    def __init__(
        self,
        omega: Sequence[float],
        status: ExitRateStatus = ExitRateStatus.CONVERGED,
        iterations: int = 0,
        information: Optional[np.ndarray] = None,
    ):
        self.omega = np.asarray(omega, dtype=float)
        self.status = status
        self.iterations = int(iterations)
        self.information = None if information is None else np.asarray(information, dtype=float)
        if self.omega.ndim != 1 or self.omega.size < 1:
            raise DimensionMismatchError("omega must be a non-empty vector")

    @property
    def L(self) -> int:
        return self.omega.size

    @property
    def free(self) -> np.ndarray:
        """The L-1 free parameters; omega_L is implied."""
        return self.omega[:-1].copy()

    @classmethod
    def uniform(cls, L: int) -> "ExitRateVector":
        return cls(np.full(L, 1.0 / L))

    @classmethod
    def from_free(cls, free: np.ndarray, **kwargs) -> "ExitRateVector":
        free = np.asarray(free, dtype=float)
        return cls(np.append(free, 1.0 - free.sum()), **kwargs)

    def covariance(self) -> Optional[np.ndarray]:
        """Full-length covariance from the inverse information, via the delta method for omega_L."""
        if self.information is None:
            return None
        if self.L == 1:
            return np.zeros((1, 1))
        inverse = np.linalg.pinv(self.information, hermitian=True)
        jacobian = np.vstack([np.eye(self.L - 1), -np.ones((1, self.L - 1))])
        return jacobian @ inverse @ jacobian.T


class QpProblem:
    """Concave quadratic model  g'x - x'Hx/2  over the free exit-rate parameters."""

    def __init__(self, hessian: np.ndarray, gradient: np.ndarray, point: Optional[np.ndarray] = None):
        self.hessian = np.asarray(hessian, dtype=float)
        self.gradient = np.asarray(gradient, dtype=float)
        n = self.gradient.size
        self.point = np.full(n, 1.0 / (n + 1)) if point is None else np.asarray(point, dtype=float)
        if self.hessian.shape != (n, n) or self.point.shape != (n,):
            raise DimensionMismatchError("hessian, gradient and point dimensions differ")

    @property
    def dimension(self) -> int:
        return self.gradient.size

    def objective(self, x: np.ndarray) -> float:
        return float(self.gradient @ x - 0.5 * x @ self.hessian @ x)


class LatentFlows:
    """Inflow and outflow counts per (time, district), with the burn-in inflow prefix.

    Inflow row ``r`` holds time ``r - burn_in_length + 1``; outflow row ``r`` holds time ``r + 1``.
    """

    def __init__(
        self,
        inflow: np.ndarray,
        outflow: np.ndarray,
        burn_in_length: int,
        districts: Optional[Sequence[str]] = None,
    ):
        self.inflow = np.asarray(inflow, dtype=np.int64)
        self.outflow = np.asarray(outflow, dtype=np.int64)
        self.burn_in_length = int(burn_in_length)
        n_times, n_districts = self.outflow.shape
        self.districts = list(districts) if districts is not None else [str(d) for d in range(n_districts)]
        if self.inflow.shape != (self.burn_in_length + n_times, n_districts):
            raise DimensionMismatchError("inflow must hold burn-in plus every outflow time")

    @property
    def n_times(self) -> int:
        return self.outflow.shape[0]

    @property
    def n_districts(self) -> int:
        return self.outflow.shape[1]

    @property
    def observed_inflow(self) -> np.ndarray:
        return self.inflow[self.burn_in_length:]

    @property
    def burn_in(self) -> np.ndarray:
        return self.inflow[:self.burn_in_length]

    def lagged(self, L: int) -> np.ndarray:
        """Array of shape (L, T, D) with entry [l-1, t-1, d] = I_(t-l, d)."""
        if L > self.burn_in_length:
            raise DimensionMismatchError(f"lag {L} exceeds burn-in length {self.burn_in_length}")
        B, T = self.burn_in_length, self.n_times
        return np.stack([self.inflow[B - lag:B - lag + T] for lag in range(1, L + 1)]).astype(float)

    def net(self) -> np.ndarray:
        return self.observed_inflow - self.outflow

    def select(self, columns: Sequence[int]) -> "LatentFlows":
        columns = list(columns)
        return LatentFlows(
            self.inflow[:, columns],
            self.outflow[:, columns],
            self.burn_in_length,
            [self.districts[c] for c in columns],
        )


class CorrectionEstimate:
    """Shrinkage factor and the exit rates before and after un-shrinking."""

    def __init__(
        self,
        c_hat: float,
        omega_raw: ExitRateVector,
        omega_corrected: ExitRateVector,
        clipped: Optional[np.ndarray] = None,
        degenerate: bool = False,
        capped: bool = False,
    ):
        self.c_hat = float(c_hat)
        self.omega_raw = omega_raw
        self.omega_corrected = omega_corrected
        self.clipped = np.zeros(omega_raw.L, dtype=bool) if clipped is None else np.asarray(clipped, dtype=bool)
        self.degenerate = degenerate
        self.capped = capped


class IterationRecord:
    """One completed stochastic EM iteration."""

    def __init__(
        self,
        iteration: int,
        phase: Phase,
        beta: np.ndarray,
        covariance: np.ndarray,
        omega_raw: np.ndarray,
        omega: np.ndarray,
        omega_covariance: Optional[np.ndarray],
        loglik: float,
        omega_corrected: Optional[np.ndarray] = None,
        c_hat: Optional[float] = None,
        clipped: Optional[List[bool]] = None,
        smooths: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.iteration = int(iteration)
        self.phase = Phase(phase)
        self.beta = np.asarray(beta, dtype=float)
        self.covariance = np.asarray(covariance, dtype=float)
        self.omega_raw = np.asarray(omega_raw, dtype=float)
        self.omega = np.asarray(omega, dtype=float)
        self.omega_covariance = None if omega_covariance is None else np.asarray(omega_covariance, dtype=float)
        self.loglik = float(loglik)
        self.omega_corrected = None if omega_corrected is None else np.asarray(omega_corrected, dtype=float)
        self.c_hat = None if c_hat is None else float(c_hat)
        self.clipped = list(clipped) if clipped is not None else None
        self.smooths = {k: np.asarray(v, dtype=float) for k, v in (smooths or {}).items()}

    def to_dict(self) -> Dict:
        return {
            "record": "iteration",
            "iteration": self.iteration,
            "phase": self.phase.value,
            "loglik": self.loglik,
            "beta": self.beta.tolist(),
            "covariance": self.covariance.tolist(),
            "omega_raw": self.omega_raw.tolist(),
            "omega_corrected": None if self.omega_corrected is None else self.omega_corrected.tolist(),
            "omega": self.omega.tolist(),
            "omega_covariance": None if self.omega_covariance is None else self.omega_covariance.tolist(),
            "c_hat": self.c_hat,
            "clipped": self.clipped,
            "smooths": {k: v.tolist() for k, v in self.smooths.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "IterationRecord":
        return cls(
            iteration=data["iteration"],
            phase=Phase(data["phase"]),
            beta=np.array(data["beta"], dtype=float),
            covariance=np.array(data["covariance"], dtype=float),
            omega_raw=np.array(data["omega_raw"], dtype=float),
            omega=np.array(data["omega"], dtype=float),
            omega_covariance=None if data.get("omega_covariance") is None else np.array(data["omega_covariance"]),
            loglik=data["loglik"],
            omega_corrected=None if data.get("omega_corrected") is None else np.array(data["omega_corrected"]),
            c_hat=data.get("c_hat"),
            clipped=data.get("clipped"),
            smooths=data.get("smooths") or {},
        )


class SemTrace:
    """Run header plus one record per completed iteration."""

    def __init__(
        self,
        seed: int,
        coefficient_names: Sequence[str],
        max_lag: int,
        dates: Sequence[str] = (),
        districts: Sequence[str] = (),
        parametric: Optional[Sequence[str]] = None,
        records: Optional[List[IterationRecord]] = None,
    ):
        self.seed = int(seed)
        self.coefficient_names = list(coefficient_names)
        self.max_lag = int(max_lag)
        self.dates = list(dates)
        self.districts = list(districts)
        self.parametric = list(parametric) if parametric is not None else list(self.coefficient_names)
        self.records: List[IterationRecord] = records or []
        # Flow draws of the trailing summary window; kept in memory only.
        self.flow_draws: List[LatentFlows] = []

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def header(self) -> Dict:
        return {
            "record": "header",
            "schema_version": 1,
            "seed": self.seed,
            "coefficient_names": self.coefficient_names,
            "parametric": self.parametric,
            "max_lag": self.max_lag,
            "dates": self.dates,
            "districts": self.districts,
        }

    @classmethod
    def from_header(cls, data: Dict) -> "SemTrace":
        return cls(
            seed=data["seed"],
            coefficient_names=data["coefficient_names"],
            max_lag=data["max_lag"],
            dates=data.get("dates", []),
            districts=data.get("districts", []),
            parametric=data.get("parametric"),
        )

    def logliks(self) -> np.ndarray:
        return np.array([r.loglik for r in self.records])


class ChainSummary:
    """Point estimates, Rubin standard deviations and percentile bands over a window."""

    def __init__(
        self,
        coefficient_names: Sequence[str],
        point_estimates: np.ndarray,
        std_devs: np.ndarray,
        coefficient_covariance: np.ndarray,
        omega_median: np.ndarray,
        omega_lo: np.ndarray,
        omega_hi: np.ndarray,
        omega_std: np.ndarray,
        omega_covariance: np.ndarray,
        omega_smooth: np.ndarray,
        window: Tuple[int, int],
        smooth_bands: Optional[Dict[str, Dict[str, np.ndarray]]] = None,
    ):
        self.coefficient_names = list(coefficient_names)
        self.point_estimates = np.asarray(point_estimates, dtype=float)
        self.std_devs = np.asarray(std_devs, dtype=float)
        self.coefficient_covariance = np.asarray(coefficient_covariance, dtype=float)
        self.omega_median = np.asarray(omega_median, dtype=float)
        self.omega_lo = np.asarray(omega_lo, dtype=float)
        self.omega_hi = np.asarray(omega_hi, dtype=float)
        self.omega_std = np.asarray(omega_std, dtype=float)
        self.omega_covariance = np.asarray(omega_covariance, dtype=float)
        self.omega_smooth = np.asarray(omega_smooth, dtype=float)
        self.window = (int(window[0]), int(window[1]))
        self.smooth_bands = smooth_bands or {}

    def joint_covariance(self) -> np.ndarray:
        """Block-diagonal covariance; inflow and outflow blocks are treated as independent."""
        p, q = self.coefficient_covariance.shape[0], self.omega_covariance.shape[0]
        joint = np.zeros((p + q, p + q))
        joint[:p, :p] = self.coefficient_covariance
        joint[p:, p:] = self.omega_covariance
        return joint


class GroundTruth:
    """True flows and parameters behind a simulated panel."""

    def __init__(
        self,
        true_inflows: np.ndarray,
        true_outflows: np.ndarray,
        true_beta: Sequence[float],
        true_pi: Sequence[float],
        coefficient_names: Sequence[str] = ("intercept", "x1", "x2"),
    ):
        self.true_inflows = np.asarray(true_inflows, dtype=np.int64)
        self.true_outflows = np.asarray(true_outflows, dtype=np.int64)
        self.true_beta = np.asarray(true_beta, dtype=float)
        self.true_pi = np.asarray(true_pi, dtype=float)
        self.coefficient_names = list(coefficient_names)
        if self.true_inflows.shape != self.true_outflows.shape:
            raise DimensionMismatchError("true inflow and outflow matrices differ in shape")

    def to_dict(self) -> Dict:
        return {
            "true_beta": self.true_beta.tolist(),
            "true_pi": self.true_pi.tolist(),
            "coefficient_names": self.coefficient_names,
        }
