"""
Run repository for storing and retrieving occuflow artifacts.
This module provides file-backed storage for panels, ground-truth sidecars, traces and summary tables.
"""

import datetime
import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.config import RunConfig, SimSpec
from core.errors import PanelSchemaError
from core.models import ChainSummary, GroundTruth, OccupancyPanel, SemTrace
from monitoring.trace import TraceWriter

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

PANEL_FILE = "panel.csv"
GROUND_TRUTH_FILE = "ground_truth.json"
TRUE_FLOWS_FILE = "true_flows.csv"
TRACE_FILE = "trace.ndjson"
CONFIG_FILE = "config.yaml"
COEFFICIENTS_FILE = "coefficients.csv"
EXIT_RATES_FILE = "exit_rates.csv"
LOS_SUMMARY_FILE = "los_summary.csv"
FLOWS_FILE = "flows.csv"
REGION_FLOWS_FILE = "region_flows.csv"
SMOOTH_TERMS_FILE = "smooth_terms.csv"
FLOW_COMPARISON_FILE = "flow_comparison.csv"


def _long_flows(
    dates: Sequence[datetime.date], districts: Sequence[str], columns: Dict[str, np.ndarray]
) -> pd.DataFrame:
    n_dates, n_districts = len(dates), len(districts)
    frame = pd.DataFrame({
        "date": np.repeat([d.isoformat() for d in dates], n_districts),
        "district_id": np.tile(list(districts), n_dates),
    })
    for name, values in columns.items():
        frame[name] = np.asarray(values).ravel()
    return frame


class RunRepository:
    """Repository of the files belonging to one simulate or fit run."""

    def __init__(self, output_dir: str):
        """Initialize the run repository.

        Args:
            output_dir: Directory holding the run's files
        """
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    @property
    def trace_path(self) -> str:
        return self.path(TRACE_FILE)

    def _write_frame(self, frame: pd.DataFrame, name: str) -> str:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.info(f"Wrote {path}")
        return path

    def load_table(self, name: str) -> pd.DataFrame:
        """Read one of the run's CSV tables."""
        path = self.path(name)
        if not os.path.exists(path):
            raise PanelSchemaError(f"Table {path} not found")
        return pd.read_csv(path, dtype={"district_id": str, "region_id": str})

    def save_config(self, config: RunConfig) -> str:
        path = self.path(CONFIG_FILE)
        with open(path, "w") as f:
            f.write(config.to_yaml())
        return path

    def save_panel(self, panel: OccupancyPanel, name: str = PANEL_FILE) -> str:
        return self._write_frame(panel.to_frame(), name)

    def save_ground_truth(
        self,
        truth: GroundTruth,
        dates: Sequence[datetime.date],
        districts: Sequence[str],
        spec: Optional[SimSpec] = None,
    ) -> Tuple[str, str]:
        """Write the ground-truth sidecar (parameters as JSON, true flows as CSV).

        Returns:
            Tuple of (JSON path, flows CSV path)
        """
        sidecar = truth.to_dict()
        if spec is not None:
            sidecar["simulation"] = spec.dict()
        json_path = self.path(GROUND_TRUTH_FILE)
        with open(json_path, "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
        flows = _long_flows(dates, districts, {"inflow": truth.true_inflows, "outflow": truth.true_outflows})
        csv_path = self._write_frame(flows, TRUE_FLOWS_FILE)
        return json_path, csv_path

    def load_ground_truth(self) -> Tuple[GroundTruth, List[datetime.date], List[str]]:
        """Read a ground-truth sidecar written by save_ground_truth."""
        json_path = self.path(GROUND_TRUTH_FILE)
        if not os.path.exists(json_path):
            raise PanelSchemaError(f"Ground-truth sidecar {json_path} not found")
        with open(json_path, "r") as f:
            sidecar = json.load(f)
        flows = self.load_table(TRUE_FLOWS_FILE)
        dates = sorted(pd.to_datetime(flows["date"], format="%Y-%m-%d").dt.date.unique())
        districts = sorted(flows["district_id"].unique())
        inflow = flows.pivot(index="date", columns="district_id", values="inflow")
        outflow = flows.pivot(index="date", columns="district_id", values="outflow")
        truth = GroundTruth(
            true_inflows=inflow.sort_index()[districts].to_numpy(),
            true_outflows=outflow.sort_index()[districts].to_numpy(),
            true_beta=sidecar["true_beta"],
            true_pi=sidecar["true_pi"],
            coefficient_names=sidecar.get("coefficient_names", ("intercept", "x1", "x2")),
        )
        return truth, dates, districts

    def trace_writer(self, trace: SemTrace) -> TraceWriter:
        return TraceWriter(self.trace_path, trace.header())

    def save_coefficients(self, summary: ChainSummary, names: Optional[Sequence[str]] = None) -> str:
        """coefficients.csv: coefficient, estimate, std_dev (parametric terms by default)."""
        names = list(names) if names is not None else summary.coefficient_names
        index = [summary.coefficient_names.index(n) for n in names]
        frame = pd.DataFrame({
            "coefficient": names,
            "estimate": summary.point_estimates[index],
            "std_dev": summary.std_devs[index],
        })
        return self._write_frame(frame, COEFFICIENTS_FILE)

    def save_exit_rates(self, summary: ChainSummary) -> str:
        frame = pd.DataFrame({
            "lag": np.arange(1, summary.omega_median.size + 1),
            "omega_median": summary.omega_median,
            "lo": summary.omega_lo,
            "hi": summary.omega_hi,
            "std_dev": summary.omega_std,
            "smooth": summary.omega_smooth,
        })
        return self._write_frame(frame, EXIT_RATES_FILE)

    def save_los_summary(self, los: Dict) -> str:
        rows = [("mean_los", los["mean_los"]), ("first_day_exit", los["first_day_exit"])]
        rows += [(f"q{q:g}", float(day)) for q, day in sorted(los["quantile_days"].items())]
        return self._write_frame(pd.DataFrame(rows, columns=["statistic", "value"]), LOS_SUMMARY_FILE)

    def save_flows(
        self, dates: Sequence[datetime.date], districts: Sequence[str], inflow: np.ndarray, outflow: np.ndarray
    ) -> str:
        return self._write_frame(_long_flows(dates, districts, {"inflow": inflow, "outflow": outflow}), FLOWS_FILE)

    def save_region_flows(self, frame: pd.DataFrame) -> str:
        return self._write_frame(frame[["date", "region_id", "inflow", "outflow"]], REGION_FLOWS_FILE)

    def save_smooth_terms(self, summary: ChainSummary) -> str:
        rows = []
        for term in sorted(summary.smooth_bands):
            band = summary.smooth_bands[term]
            for k in range(band["median"].size):
                rows.append((term, k + 1, band["median"][k], band["lo"][k], band["hi"][k]))
        frame = pd.DataFrame(rows, columns=["term", "index", "median", "lo", "hi"])
        return self._write_frame(frame, SMOOTH_TERMS_FILE)

    def save_flow_comparison(
        self,
        dates: Sequence[datetime.date],
        districts: Sequence[str],
        truth: GroundTruth,
        inflow: np.ndarray,
        outflow: np.ndarray,
    ) -> str:
        """Estimated vs true flows; truth rows are aligned to the last len(dates) days."""
        n = len(dates)
        frame = _long_flows(dates, districts, {
            "inflow_true": truth.true_inflows[-n:],
            "inflow_est": inflow,
            "outflow_true": truth.true_outflows[-n:],
            "outflow_est": outflow,
        })
        return self._write_frame(frame, FLOW_COMPARISON_FILE)
