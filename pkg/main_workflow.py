"""
Main Workflow - Mixed p-spin Gibbs toolkit
Runs one configured experiment from disorder draws to the written report
"""
import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from alert_system import (
    failed_check_alerts,
    no_theorem_alerts,
    send_run_alerts,
    surrogate_alert,
    swap_acceptance_alerts,
)
from config import LOG_LEVEL, LOGS_DIR, OUTPUT_DIR
from errors import EXIT_OK, ConfigError, exit_code_for
from exact import OverlapMonomial, gibbs_table, log_partition, overlap_moment_factorized
from export_manager import FORMATS, emit_report, log_run_metadata
from identities import (
    GGQuery,
    analytic_total,
    concentration_scan,
    convexity_secant_bound,
    delta_bound_check,
    derivative_identity_check,
    free_energy_curve,
    gap_derivative_check,
    gg_residual,
    over_realizations,
)
from model import hamiltonian_p_batch
from run_config import EXPERIMENTS, ReportRow, load_run_config
from sampler import EstimateWithError, collect_replica_arrays

logger = logging.getLogger(__name__)


def setup_logging(level=LOG_LEVEL):
    """Console and file handlers for a CLI run"""
    LOGS_DIR.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(LOGS_DIR / 'workflow.log'),
            logging.StreamHandler()
        ],
        force=True,
    )


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    alerts: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add(self, config, params, quantity, estimate, p=None, n=None):
        self.rows.append(ReportRow.build(
            config.experiment, params, config.mode, quantity, estimate, config.master_seed, p, n,
        ))


def _exact_value(value, n_samples):
    """A derived number reported without a sampling error"""
    return EstimateWithError(float(value), 0.0 if math.isfinite(value) else math.nan, n_samples)


def _summarise(per_realization):
    """List of {quantity: value} dicts (one per realization) -> {quantity: EstimateWithError}"""
    names = list(per_realization[0])
    return {name: EstimateWithError.from_samples([values[name] for values in per_realization]) for name in names}


def _overlap_powers(params):
    return sorted(set(params.degrees) | {2})


def _exact_values(disorder, params, budgets):
    N = params.N
    table = gibbs_table(disorder, params, budgets.exact_n_cap)
    sample = log_partition(disorder, params, table=table)
    values = {
        "psi": sample.psi,
        "log_partition": sample.log_partition,
        "magnetization": table.mean(table.spins.sum(axis=1)) / N,
    }
    for p in params.degrees:
        values[f"energy_density_p{p}"] = table.mean(table.hamiltonians[p]) / N
    for p in _overlap_powers(params):
        monomial = OverlapMonomial(2, {(0, 1): p})
        values[f"overlap_moment_p{p}"] = overlap_moment_factorized(
            monomial, disorder, params, budgets.moment_cap, table,
        )
    return values


def run_exact_eval(config, params, budgets, result):
    for quantity, estimate in _summarise(over_realizations(params, budgets, _exact_values, params, budgets)).items():
        result.add(config, params, quantity, estimate)


def _mc_values(disorder, params, budgets):
    N = params.N
    spins, _, sampler = collect_replica_arrays(budgets.n_replicas, disorder, params, budgets.schedule)
    s = spins.astype(np.float64)
    overlaps = np.einsum("si,si->s", s[:, 0, :], s[:, 1, :]) / N
    values = {"magnetization": float(s.mean())}
    for p in params.degrees:
        values[f"energy_density_p{p}"] = float(np.mean(hamiltonian_p_batch(s.reshape(-1, N), disorder, p))) / N
    for p in _overlap_powers(params):
        values[f"overlap_moment_p{p}"] = float(np.mean(overlaps ** p))
    values["flip_acceptance"] = sampler.flip_acceptance()
    return values, sampler.swap_acceptance()


def run_mc(config, params, budgets, result):
    outcomes = over_realizations(params, budgets, _mc_values, params, budgets)
    for quantity, estimate in _summarise([values for values, _ in outcomes]).items():
        result.add(config, params, quantity, estimate)

    if budgets.schedule.ladder is not None:
        with np.errstate(invalid="ignore"):
            rates = np.nanmean(np.array([swap for _, swap in outcomes]), axis=0)
        for pair, rate in enumerate(rates):
            result.add(config, params, f"swap_acceptance:{pair}-{pair + 1}", _exact_value(rate, config.n_disorder))
        result.alerts += swap_acceptance_alerts(rates)
        result.notes["swap_acceptance"] = [None if math.isnan(r) else float(r) for r in rates]


def run_gg_scan(config, params, budgets, result):
    spec = config.gg
    for N in spec.N_list:
        sized = params.with_size(N)
        for p in spec.p_list:
            for n in spec.n_list:
                for function in spec.functions:
                    f = function.build(n)
                    estimate = gg_residual(GGQuery(p, n, f), sized, config.mode, budgets)
                    result.add(config, sized, f"gg_residual:{f.label}", estimate, p=p, n=n)


def run_concentration_scan(config, params, budgets, result):
    spec = config.concentration
    scan = concentration_scan(spec.p, spec.N_list, params, config.mode, budgets)
    for report, analytic in zip(scan.reports, scan.table["analytic_total"]):
        sized = params.with_size(report.N)
        result.add(config, sized, "concentration_total", report.total, p=spec.p)
        result.add(config, sized, "concentration_thermal", report.thermal, p=spec.p)
        result.add(config, sized, "concentration_disorder", report.disorder, p=spec.p)
        if not math.isnan(analytic):
            result.add(config, sized, "concentration_analytic", _exact_value(analytic_total(report.N), 0), p=spec.p)
    largest = params.with_size(spec.N_list[-1])
    result.add(
        config, largest, "surrogate:total_decreasing",
        _exact_value(float(scan.surrogate_decreasing), len(spec.N_list)), p=spec.p,
    )
    result.alerts += surrogate_alert(scan)
    result.notes["centre"] = scan.reports[0].metadata["centre"]


def run_fe_curve(config, params, budgets, result):
    spec = config.fe_curve
    curve = free_energy_curve(spec.p, spec.x_grid, params, config.mode, budgets)
    for k, x in enumerate(curve.x):
        at_x = params.with_coefficient(spec.p, x)
        for name in ("F", "F_prime", "F_second", "psi_abs_deviation"):
            result.add(config, at_x, name, getattr(curve, name)[k], p=spec.p)
    if config.mode == "exact":
        check = derivative_identity_check(curve)
        for name, value in vars(check).items():
            result.add(config, params, f"derivative_check:{name}", _exact_value(value, len(curve.x)), p=spec.p)
        if not check.passes():
            result.alerts.append({
                "type": "CHECK_FAILED",
                "message": f"derivative identities off: {vars(check)}",
                "check": "derivative_identity",
            })


def run_proof_checks(config, params, budgets, result):
    spec = config.proof
    p = spec.p
    reports = []
    for beta, beta_prime in spec.intervals:
        at = params.with_coefficient(p, beta)
        tag = f"{beta:g}..{beta_prime:g}"
        bound = delta_bound_check(p, beta, beta_prime, params, config.mode, budgets)
        reports.append(bound)
        for name, estimate in bound.estimates.items():
            result.add(config, at, f"delta_bound:{name}@{tag}", estimate, p=p)
        for name in ("rhs", "slack"):
            result.add(config, at, f"delta_bound:{name}@{tag}", _exact_value(getattr(bound, name), config.n_disorder), p=p)
        for name in ("delta_forms_gap", "quadrature_doubling_change"):
            result.add(config, at, f"delta_bound:{name}@{tag}", _exact_value(bound.details[name], config.n_disorder), p=p)

        for gamma in spec.gammas:
            secant = convexity_secant_bound(p, beta, beta_prime, gamma, params, config.mode, budgets)
            reports.append(secant)
            for name in ("lhs", "rhs", "slack"):
                result.add(
                    config, at, f"secant:{name}@{tag};gamma={gamma:g}",
                    _exact_value(getattr(secant, name), config.n_disorder), p=p,
                )

        if config.mode == "exact":
            gap = gap_derivative_check(p, beta, params, budgets)
            reports.append(gap)
            for name in ("identity", "finite_difference"):
                result.add(config, at, f"gap_derivative:{name}", _exact_value(gap.details[name], config.n_disorder), p=p)
    result.alerts += failed_check_alerts(reports)


RUNNERS = {
    "exact-eval": run_exact_eval,
    "mc-run": run_mc,
    "gg-scan": run_gg_scan,
    "concentration-scan": run_concentration_scan,
    "fe-curve": run_fe_curve,
    "proof-checks": run_proof_checks,
}


def touched_degrees(config, params):
    """Every degree the run touches: model terms plus the experiment's own p values"""
    degrees = set(params.degrees)
    if config.gg is not None:
        degrees.update(config.gg.p_list)
    for section in (config.concentration, config.fe_curve, config.proof):
        if section is not None:
            degrees.add(section.p)
    return sorted(degrees)


def execute(config):
    """Compute every row of the configured experiment without writing anything"""
    params = config.model_parameters()
    budgets = config.budgets_for()
    params.check_budget(budgets.max_coupling_entries)
    result = ExperimentResult()
    result.alerts += no_theorem_alerts(touched_degrees(config, params))
    RUNNERS[config.experiment](config, params, budgets, result)
    send_run_alerts(result.alerts)
    return result


def resolve_output(config):
    output = Path(config.output)
    return output if output.is_absolute() else OUTPUT_DIR / output


def run_experiment(config):
    """
    Run the configured experiment, then write the report and its metadata sidecar.

    Returns:
        list: the ReportRow objects, in the order written
    """
    logger.info(f"Starting {config.experiment} ({config.mode} mode, seed {config.master_seed}, M={config.n_disorder})")
    result = execute(config)
    report_path = emit_report(result.rows, config.format, resolve_output(config))
    log_run_metadata(config, result.rows, result.alerts, report_path, {"notes": result.notes})
    logger.info(f"Workflow completed: {len(result.rows)} rows in {report_path}")
    return result.rows


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="JSON run configuration")
    shared.add_argument("--seed", type=int, help="Override master_seed")
    shared.add_argument("--workers", type=int, help="Override the worker count")
    shared.add_argument("--out", help="Override the report path")
    shared.add_argument("--format", choices=FORMATS, help="Override the report format")

    parser = argparse.ArgumentParser(description="Mixed p-spin Gibbs toolkit")
    commands = parser.add_subparsers(dest="command", required=True)
    for experiment in EXPERIMENTS:
        commands.add_parser(experiment, parents=[shared], help=f"run a {experiment} configuration")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        config = load_run_config(args.config)
        if config.experiment != args.command:
            raise ConfigError(f"experiment: config selects {config.experiment!r} but the command is {args.command!r}")
        config = config.with_overrides(
            master_seed=args.seed, workers=args.workers, output=args.out, format=args.format,
        )
        run_experiment(config)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"Workflow failed (exit {code}): {str(e)}", exc_info=True)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
