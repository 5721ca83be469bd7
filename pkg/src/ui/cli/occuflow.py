#!/usr/bin/env python3
"""
Command-line interface for occuflow.
This module provides the simulate, fit and summarize commands.
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import tabulate

from core.config import apply_overrides, load_config, resolve_threads
from core.errors import ConfigError, OccuflowError, SemAbortedError
from core.models import ChainSummary, ExitRateVector, SemTrace
from core.panel import load_panel, load_region_map
from core.repository import RunRepository
from estimation.exit_rates import los_summaries
from estimation.sem import SemEngine
from monitoring.analytics import median_flows, region_flow_medians, summarize_chain
from monitoring.trace import read_trace
from simulation.generator import gen_dataset

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def parse_window(text: Optional[str]) -> Optional[Tuple[int, int]]:
    """Parse 'start:end' into a half-open record window."""
    if text is None:
        return None
    parts = text.split(":")
    try:
        start, end = int(parts[0]), int(parts[1])
    except (IndexError, ValueError):
        raise ConfigError(f"--window must look like START:END, got {text!r}") from None
    if len(parts) != 2:
        raise ConfigError(f"--window must look like START:END, got {text!r}")
    return start, end


def require_seed(flag: Optional[int], config_seed: Optional[int]) -> int:
    """--seed wins over the config; one of them must be set."""
    seed = flag if flag is not None else config_seed
    if seed is None:
        raise ConfigError("A seed is required: pass --seed or set seed: in the config")
    return seed


def default_window(trace: SemTrace, summary_window: int) -> Tuple[int, int]:
    n = len(trace)
    return max(0, n - summary_window), n


def write_summary(repository: RunRepository, trace: SemTrace, summary: ChainSummary) -> Dict:
    """Write the tables derived from a chain summary; shared by fit and summarize."""
    repository.save_coefficients(summary, trace.parametric)
    repository.save_exit_rates(summary)
    los = los_summaries(ExitRateVector(summary.omega_median))
    repository.save_los_summary(los)
    if summary.smooth_bands:
        repository.save_smooth_terms(summary)
    return los


class OccuflowCli:
    """Command-line interface for occupancy flow decomposition."""

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="occuflow",
            description="Recover inflows, outflows and length-of-stay distributions from occupancy panels",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog="""
Examples:
  # Simulate a small panel with ground truth
  occuflow simulate --config configs/simulation.yaml --districts 5 --days 10 --out sim/

  # Fit a panel
  occuflow fit --panel sim/panel.csv --config configs/fit_simulated.yaml --seed 42 --out fit/

  # Re-summarize a stored trace over another window
  occuflow summarize --trace fit/trace.ndjson --window 200:400 --out summary/
            """,
        )
        parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
        parser.add_argument("--quiet", "-q", action="store_true", help="Only warnings and errors")
        parser.add_argument("--log-file", help="Also write the log to this file")
        parser.add_argument("--threads", type=int, help="Worker threads (default: OCCUFLOW_THREADS or 1)")
        parser.add_argument("--no-progress", action="store_true", help="Hide the iteration progress bar")

        subparsers = parser.add_subparsers(dest="command", help="Command")

        simulate_parser = subparsers.add_parser("simulate", help="Simulate a panel with known flows")
        simulate_parser.add_argument("--config", help="YAML config file")
        simulate_parser.add_argument("--out", required=True, help="Output directory")
        simulate_parser.add_argument("--seed", type=int, help="Random seed")
        simulate_parser.add_argument("--districts", type=int, help="Number of districts")
        simulate_parser.add_argument("--days", type=int, help="Number of days")
        simulate_parser.add_argument(
            "--inflow-family", choices=["poisson", "negbin"], help="Inflow distribution"
        )
        simulate_parser.add_argument("--theta", type=float, help="Negative-Binomial dispersion")

        fit_parser = subparsers.add_parser("fit", help="Run the stochastic EM on a panel")
        fit_parser.add_argument("--panel", required=True, help="Occupancy CSV")
        fit_parser.add_argument("--config", help="YAML config file")
        fit_parser.add_argument("--out", required=True, help="Output directory")
        fit_parser.add_argument("--seed", type=int, help="Random seed")
        fit_parser.add_argument("--region-map", help="CSV mapping district_id to region_id")
        fit_parser.add_argument("--ground-truth", help="Directory of a simulate run, for flow comparison")
        fit_parser.add_argument("--max-lag", type=int, help="Maximum length of stay L")
        fit_parser.add_argument("--iterations-pre", type=int, help="Uncorrected pre-run iterations")
        fit_parser.add_argument("--iterations-corrected", type=int, help="Bias-corrected iterations")
        fit_parser.add_argument("--summary-window", type=int, help="Trailing iterations to summarize")
        fit_parser.add_argument(
            "--threads", dest="fit_threads", type=int, help="Worker threads; same as the global --threads"
        )

        summarize_parser = subparsers.add_parser("summarize", help="Summarize a stored trace")
        summarize_parser.add_argument("--trace", required=True, help="Trace file (trace.ndjson)")
        summarize_parser.add_argument("--window", help="Record window START:END (half-open)")
        summarize_parser.add_argument("--config", help="YAML config file (for the default window)")
        summarize_parser.add_argument("--out", required=True, help="Output directory")
        return parser

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Run the CLI and return the process exit code."""
        parser = self.build_parser()
        args = parser.parse_args(argv)
        self._configure_logging(args)

        if args.command is None:
            parser.print_help()
            return 1
        try:
            if args.command == "simulate":
                self._simulate(args)
            elif args.command == "fit":
                self._fit(args)
            elif args.command == "summarize":
                self._summarize(args)
        except OccuflowError as e:
            logger.error(f"{type(e).__name__}: {e}")
            print(f"Error: {e}", file=sys.stderr)
            return e.exit_code
        return 0

    def _configure_logging(self, args: argparse.Namespace) -> None:
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
        if args.log_file:
            handlers.append(logging.FileHandler(args.log_file))
        logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)

    def _progress(self, args: argparse.Namespace) -> bool:
        return not args.no_progress and sys.stderr.isatty()

    def _simulate(self, args: argparse.Namespace) -> None:
        config = load_config(args.config)
        seed = require_seed(args.seed, config.seed)
        config = apply_overrides(config, {
            "seed": seed,
            "simulation.seed": seed,
            "simulation.districts": args.districts,
            "simulation.days": args.days,
            "simulation.inflow_family": args.inflow_family,
            "simulation.theta": args.theta,
        })
        spec = config.simulation
        panel, truth = gen_dataset(spec)

        repository = RunRepository(args.out)
        repository.save_panel(panel)
        repository.save_ground_truth(truth, panel.dates, panel.districts, spec)
        repository.save_config(config)
        print(f"Simulated {panel.n_districts} districts x {panel.n_days} days into {args.out}")

    def _fit(self, args: argparse.Namespace) -> None:
        config = load_config(args.config)
        config = apply_overrides(config, {
            "seed": require_seed(args.seed, config.seed),
            "sem.max_lag": args.max_lag,
            "sem.iterations_pre": args.iterations_pre,
            "sem.iterations_corrected": args.iterations_corrected,
            "sem.summary_window": args.summary_window,
        })
        flag = args.fit_threads if args.fit_threads is not None else args.threads
        threads = resolve_threads(flag, config)
        panel = load_panel(args.panel, config.panel)
        region_map = load_region_map(args.region_map) if args.region_map else None

        repository = RunRepository(args.out)
        repository.save_config(config)
        engine = SemEngine(panel, config, threads)
        with repository.trace_writer(engine.trace) as writer:
            engine.sink = writer
            try:
                trace = engine.run(self._progress(args))
            except SemAbortedError:
                logger.error(f"Partial trace kept at {repository.trace_path}")
                raise

        summary = summarize_chain(trace, default_window(trace, config.sem.summary_window))
        los = write_summary(repository, trace, summary)

        inflow, outflow = median_flows(trace.flow_draws)
        repository.save_flows(engine.deltas.dates, panel.districts, inflow, outflow)
        if region_map is not None:
            regions = region_flow_medians(trace.flow_draws, region_map, engine.deltas.dates)
            repository.save_region_flows(regions)
        if args.ground_truth:
            truth, _, truth_districts = RunRepository(args.ground_truth).load_ground_truth()
            if truth_districts != panel.districts:
                raise ConfigError("Ground-truth districts do not match the panel")
            repository.save_flow_comparison(engine.deltas.dates, panel.districts, truth, inflow, outflow)

        self._print_summary(trace, summary, los)

    def _summarize(self, args: argparse.Namespace) -> None:
        trace = read_trace(args.trace)
        window = parse_window(args.window)
        if window is None:
            window = default_window(trace, load_config(args.config).sem.summary_window)
        summary = summarize_chain(trace, window)
        repository = RunRepository(args.out)
        los = write_summary(repository, trace, summary)
        self._print_summary(trace, summary, los)

    def _print_summary(self, trace: SemTrace, summary: ChainSummary, los: Dict) -> None:
        rows = [
            [name, summary.point_estimates[i], summary.std_devs[i]]
            for i, name in enumerate(summary.coefficient_names)
            if name in trace.parametric
        ]
        print(tabulate.tabulate(rows, headers=["Coefficient", "Estimate", "Std. dev."], floatfmt=".4f"))
        print()
        rows = [
            [lag + 1, summary.omega_median[lag], summary.omega_lo[lag], summary.omega_hi[lag]]
            for lag in range(summary.omega_median.size)
        ]
        print(tabulate.tabulate(rows, headers=["Lag", "Exit rate", "2.5%", "97.5%"], floatfmt=".4f"))
        print()
        print(
            f"Mean length of stay {los['mean_los']:.2f} days; half have left by day {los['quantile_days'][0.5]} "
            f"(window {summary.window[0]}:{summary.window[1]})"
        )
