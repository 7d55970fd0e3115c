"""
`durable-decay` command line.

    durable-decay analytic --lambda 0.5 --service exp:1.0
    durable-decay simulate --discipline fb --customers 1000000 --seed 7
    durable-decay estimate decay-output/simulate-sojourn-fb-seed7.csv
    durable-decay compare --lambda 0.5 --service exp:1.0
    durable-decay validate ordering --lambda 0.5 --service exp:1.0

Exit codes: 0 on success, 1 on a runtime failure (or a failed
validation), 2 on a configuration error.
"""

import argparse
import logging
import numpy as np
import sys
from datetime import datetime, timezone
from log.log import get_logger, set_log_level
from pathlib import Path
from reboot.decay.analytic import (
    analytic_rates,
    busy_period_decay,
    cox_smith_decay,
    fifo_decay,
    h_curve,
)
from reboot.decay.config import ExperimentConfig, load_config
from reboot.decay.errors import ConfigError, DecayError
from reboot.decay.estimator import (
    BUSY_PERIOD_POWER,
    CORRECTIONS,
    estimate_decay,
)
from reboot.decay.output import (
    dumps,
    read_csv_column,
    write_csv,
    write_h_curve,
    write_json,
    write_metadata,
    write_table,
)
from reboot.decay.replications import run_replications
from reboot.decay.schedulers import DISCIPLINES
from reboot.decay.simulator import (
    DEFAULT_WARMUP,
    SimulationRun,
    run_queue,
    sample_busy_periods,
)
from reboot.decay.validation import (
    Verdict,
    calibrate,
    check_D_decomposition,
    check_discipline_ordering,
    check_lifo_busy_period,
    check_lower_bound,
    check_pise_mixture,
    check_sum_decay_lemma,
    check_Vtau_decomposition,
    sojourn_rates,
)
from typing import Any, Callable, Optional

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2

CHECKS = (
    "d-decomp",
    "vtau-decomp",
    "sum-lemma",
    "ordering",
    "pise-mixture",
    "lifo-busy",
    "lower-bound",
)

# Argument destinations that map onto `ExperimentConfig` fields.
_CONFIG_KEYS = set(ExperimentConfig.model_fields) | {"lambda"}


def _floats(text: str) -> list[float]:
    try:
        return [float(item) for item in text.split(",") if item]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"Expected comma separated numbers, got '{text}'"
        )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML config file")
    parser.add_argument(
        "--log-level",
        dest="log_level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
    )
    parser.add_argument("--output-dir", dest="output_dir", type=Path)
    parser.add_argument("--out", type=Path, help="primary output file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--lambda", dest="lambda", type=float)
    parser.add_argument("--service", help="e.g. exp:1.0, trunc(det:1,0.5)")


def _add_simulation(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--customers", type=int)
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--threads", type=int)


def _add_window(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--qlo", dest="q_lo", type=float)
    parser.add_argument("--qhi", dest="q_hi", type=float)
    parser.add_argument("--correction", choices=CORRECTIONS)
    parser.add_argument("--power", type=float)
    parser.add_argument(
        "--poly-correct",
        dest="poly_correct",
        action="store_true",
        help=f"polynomial correction with power {BUSY_PERIOD_POWER}",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="durable-decay",
        description="Decay rates of M/G/1 busy periods and sojourn times.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    analytic = commands.add_parser("analytic", help="analytic decay rates")
    _add_common(analytic)
    analytic.add_argument("--taus", type=_floats, help="e.g. 1,2,4,8")

    simulate = commands.add_parser("simulate", help="simulate the queue")
    _add_common(simulate)
    _add_simulation(simulate)
    simulate.add_argument("--discipline", choices=DISCIPLINES)
    simulate.add_argument("--mode", choices=["sojourn", "busy"])
    simulate.add_argument("--replications", type=int)

    estimate = commands.add_parser("estimate", help="estimate a decay rate")
    _add_common(estimate)
    _add_window(estimate)
    estimate.add_argument(
        "input",
        type=Path,
        metavar="samples",
        help="CSV of samples",
    )
    estimate.add_argument("--column")

    compare = commands.add_parser(
        "compare",
        help="analytic and estimated sojourn decay rates per discipline",
    )
    _add_common(compare)
    _add_simulation(compare)

    validate = commands.add_parser("validate", help="run a named check")
    _add_common(validate)
    _add_simulation(validate)
    validate.add_argument("check", choices=CHECKS)
    validate.add_argument("--samples", type=int)
    validate.add_argument("--tau", type=float)
    validate.add_argument("--alpha", type=float)
    validate.add_argument("--seeds", type=int)

    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key in _CONFIG_KEYS
    }
    if getattr(args, "poly_correct", False):
        overrides["correction"] = "polynomial"
        overrides["power"] = overrides.get("power") or BUSY_PERIOD_POWER
    return overrides


def _output_path(config: ExperimentConfig, default_name: str) -> Path:
    return config.out or config.output_dir / default_name


def cmd_analytic(config: ExperimentConfig, args: argparse.Namespace) -> int:
    model = config.queue_model()
    started = datetime.now(timezone.utc)
    taus = config.taus
    if args.taus is None:
        # The default grid may reach past a bounded service time.
        taus = [tau for tau in taus if model.service.tail(tau) > 0]
    else:
        beyond = [tau for tau in taus if not model.service.tail(tau) > 0]
        if beyond:
            raise ConfigError(
                f"c(tau) needs P(B >= tau) > 0, but '{model.service.spec}' "
                f"has P(B >= tau) = 0 for tau in {beyond}"
            )
    rates = analytic_rates(model, taus)
    cox_smith = cox_smith_decay(model)
    result = {
        "lambda": rates.arrival_rate,
        "service": rates.service,
        "rho": rates.rho,
        "c": rates.c,
        "theta_star": rates.theta_star,
        "zeta": cox_smith.zeta,
        "theta0": rates.theta0,
        "drB": rates.dr_b,
        "tolerance": rates.tolerance,
        "derivative_residual": rates.derivative_residual,
        "c_tau": [[tau, c] for tau, c in rates.c_tau],
    }
    if config.out is not None:
        write_json(config.out, result)
        write_metadata(
            config.out,
            command="analytic",
            config=config,
            started=started,
        )
    print(dumps(result), end="")
    return EXIT_OK


def cmd_simulate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    model = config.queue_model()
    started = datetime.now(timezone.utc)

    if config.mode == "busy":
        lengths = sample_busy_periods(model, config.customers, config.seed)
        path = _output_path(config, f"simulate-busy-seed{config.seed}.csv")
        write_csv(path, {"length": lengths})
        summary: dict[str, Any] = {
            "mode": "busy",
            "busy_periods": len(lengths),
            "mean_length": float(lengths.mean()),
            "out": path,
        }
    else:

        def replicate(seed) -> SimulationRun:
            return run_queue(
                model,
                config.discipline,
                config.customers,
                config.resolved_warmup,
                seed,
            )

        if config.replications == 1:
            runs = [replicate(config.seed)]
        else:
            runs = run_replications(
                replicate,
                config.seed,
                config.replications,
                config.threads,
            )

        columns = {
            "service_time": np.concatenate([run.service_times for run in runs]),
            "sojourn": np.concatenate([run.sojourns for run in runs]),
        }
        if len(runs) > 1:
            columns = {
                "replication": np.concatenate(
                    [
                        np.full(len(run.sojourns), i)
                        for i, run in enumerate(runs)
                    ]
                ),
                **columns,
            }

        path = _output_path(
            config,
            f"simulate-sojourn-{config.discipline}-seed{config.seed}.csv",
        )
        write_csv(path, columns)
        summary = {
            "mode": "sojourn",
            "discipline": config.discipline,
            "replications": len(runs),
            "customers_recorded": len(columns["sojourn"]),
            "customers_served": sum(run.customers_served for run in runs),
            "busy_periods": sum(run.busy_period_count for run in runs),
            "max_backlog": max(run.max_backlog for run in runs),
            "mean_sojourn": float(columns["sojourn"].mean()),
            "out": path,
        }

    write_metadata(path, command="simulate", config=config, started=started)
    print(dumps(summary), end="")
    return EXIT_OK


def cmd_estimate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    started = datetime.now(timezone.utc)
    samples = read_csv_column(args.input, args.column)
    estimate = estimate_decay(
        samples,
        config.q_lo,
        config.q_hi,
        correction=config.correction,
        power=config.power,
    )
    low, high = estimate.confidence_interval()
    result = {"estimate": estimate, "confidence_interval": [low, high]}
    if config.out is not None:
        write_json(config.out, result)
        write_metadata(
            config.out,
            command="estimate",
            config=config,
            started=started,
        )
    print(dumps(result), end="")
    return EXIT_OK


def cmd_compare(config: ExperimentConfig, args: argparse.Namespace) -> int:
    model = config.queue_model()
    started = datetime.now(timezone.utc)

    busy = busy_period_decay(model)
    theta0 = fifo_decay(model, theta_star=busy.theta_star)

    rates = sojourn_rates(
        model,
        config.customers,
        config.seed,
        disciplines=config.disciplines,
        warmup=config.resolved_warmup,
        threads=config.threads,
    )

    rows = []
    for rate in rates:
        low, high = rate.estimate.confidence_interval()
        rows.append(
            [rate.discipline, rate.analytic, rate.estimate.rate, low, high]
        )

    path = _output_path(config, f"compare-seed{config.seed}.csv")
    write_table(
        path,
        ["discipline", "analytic", "estimate", "ci_low", "ci_high"],
        rows,
    )
    write_h_curve(
        path.with_suffix(".h.dat"),
        h_curve(model),
        {"c_fb": busy.c, "c_fifo": theta0, "drB": model.service.mgf_radius},
    )
    write_metadata(path, command="compare", config=config, started=started)

    print(
        dumps(
            [
                {
                    "discipline": discipline,
                    "analytic": analytic,
                    "estimate": estimate,
                    "ci": [low, high],
                } for discipline, analytic, estimate, low, high in rows
            ]
        ),
        end="",
    )
    return EXIT_OK


def _check(
    name: str,
    config: ExperimentConfig,
) -> Callable[[Any], Verdict]:
    model = config.queue_model()
    warmup = config.warmup if config.warmup is not None else DEFAULT_WARMUP

    if name == "d-decomp":
        return lambda seed: check_D_decomposition(model, config.samples, seed)
    elif name == "vtau-decomp":
        return lambda seed: check_Vtau_decomposition(
            model, config.tau, config.samples, seed
        )
    elif name == "ordering":
        return lambda seed: check_discipline_ordering(
            model,
            config.customers,
            seed,
            warmup=config.resolved_warmup,
            threads=config.threads,
        )
    elif name == "pise-mixture":
        return lambda seed: check_pise_mixture(
            model, config.samples, seed, stride=config.stride, warmup=warmup
        )
    elif name == "lifo-busy":
        return lambda seed: check_lifo_busy_period(
            model, config.samples, seed, stride=config.stride, warmup=warmup
        )
    elif name == "lower-bound":
        return lambda seed: check_lower_bound(
            model,
            config.customers,
            seed,
            disciplines=config.disciplines,
            warmup=config.resolved_warmup,
            threads=config.threads,
        )
    raise ConfigError(f"Unknown check '{name}'")


def run_named_check(name: str, config: ExperimentConfig) -> Verdict:
    """Runs check `name`, calibrated over `config.seeds` seeds if > 1."""
    if name == "sum-lemma":
        return check_sum_decay_lemma(
            config.alpha,
            config.samples,
            range(config.seed, config.seed + config.seeds),
        )

    check = _check(name, config)
    if config.seeds == 1:
        return check(config.seed)
    return calibrate(
        check,
        config.seeds,
        seed=config.seed,
        threads=config.threads,
    )


def cmd_validate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    started = datetime.now(timezone.utc)

    report = run_named_check(args.check, config)

    verdict = {"check": args.check, "passed": report.passed, "report": report}

    if config.out is not None:
        write_json(config.out, verdict)
        write_metadata(
            config.out,
            command=f"validate {args.check}",
            config=config,
            started=started,
        )
    print(dumps(verdict), end="")
    return EXIT_OK if report.passed else EXIT_FAILURE


COMMANDS: dict[str, Callable[[ExperimentConfig, argparse.Namespace], int]] = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "validate": cmd_validate,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config, _overrides(args))
        set_log_level(logging.getLevelNamesMapping()[config.log_level])
        print(dumps(config), end="", file=sys.stderr)
        return COMMANDS[args.command](config, args)
    except ConfigError as error:
        print(f"{args.command}: {error}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except DecayError as error:
        print(f"{args.command}: {error}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
