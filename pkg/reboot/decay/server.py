"""
The toolkit as tools of a durable MCP server.

Simulations can take minutes, so their results are computed inside
`at_least_once()`: if the server is rebooted while a tool call is in
flight, the retried call returns the memoized result instead of
simulating again.

Run with:

    rbt dev run --python --application=reboot/decay/server.py
"""

import asyncio
import json
from log.log import get_logger
from reboot.aio.applications import Application
from reboot.aio.workflows import at_least_once
from reboot.decay.analytic import analytic_rates
from reboot.decay.cli import run_named_check
from reboot.decay.config import load_config, server_log_level
from reboot.decay.estimator import estimate_decay
from reboot.decay.output import dumps
from reboot.decay.simulator import run_queue
from reboot.decay.validation import sojourn_rates
from reboot.mcp.server import DurableContext, DurableMCP
from typing import Any, Optional
from uuid7 import create as uuid7  # type: ignore[import-untyped]

logger = get_logger(__name__)

# `DurableMCP` server which will handle HTTP requests at path "/mcp".
mcp = DurableMCP(path="/mcp", log_level=server_log_level())


def _plain(value: Any) -> Any:
    # Our JSON writer spells out infinities, which MCP clients accept.
    return json.loads(dumps(value))


@mcp.tool()
async def analytic(
    arrival_rate: float,
    service: str,
    taus: Optional[list[float]] = None,
) -> dict:
    """
    Analytic decay rates of the M/G/1 queue: c (busy period, FB and LIFO
    sojourn), theta0 (FIFO sojourn), dr(B) and optionally c(tau).
    """
    config = load_config(
        overrides={"lambda": arrival_rate, "service": service},
    )
    return _plain(analytic_rates(config.queue_model(), taus or []))


@mcp.tool()
async def simulate_summary(
    arrival_rate: float,
    service: str,
    discipline: str,
    customers: int,
    context: DurableContext,
    seed: int = 0,
) -> dict:
    """Simulates the queue and summarizes sojourn times and busy periods."""
    config = load_config(
        overrides={
            "lambda": arrival_rate,
            "service": service,
            "discipline": discipline,
            "customers": customers,
            "seed": seed,
        },
    )

    async def simulate() -> str:
        run = await asyncio.to_thread(
            run_queue,
            config.queue_model(),
            config.discipline,
            config.customers,
            config.resolved_warmup,
            config.seed,
        )
        return dumps(
            {
                "run_id": str(uuid7()),
                "discipline": run.discipline,
                "customers_recorded": len(run.sojourns),
                "customers_served": run.customers_served,
                "busy_periods": run.busy_period_count,
                "max_backlog": run.max_backlog,
                "mean_sojourn": float(run.sojourns.mean()),
                "mean_busy_period": float(run.busy_periods.mean()),
            }
        )

    summary = await at_least_once(
        f"Simulate {config.discipline} with seed {config.seed}",
        context,
        simulate,
        type=str,
    )

    result = json.loads(summary)

    await context.info(
        f"Simulated {customers} customers under {discipline} "
        f"(run {result['run_id']})"
    )

    return result


@mcp.tool()
async def estimate(
    samples: list[float],
    q_lo: float = 0.9,
    q_hi: float = 0.999,
    correction: str = "none",
    power: float = 1.5,
) -> dict:
    """Estimates the decay rate of the tail of `samples`."""
    config = load_config(
        overrides={
            "q_lo": q_lo,
            "q_hi": q_hi,
            "correction": correction,
            "power": power,
        },
    )
    result = estimate_decay(
        samples,
        config.q_lo,
        config.q_hi,
        correction=config.correction,
        power=config.power,
    )
    return _plain(
        {
            "estimate": result,
            "confidence_interval": result.confidence_interval(),
        }
    )


@mcp.tool()
async def compare(
    arrival_rate: float,
    service: str,
    customers: int,
    context: DurableContext,
    seed: int = 0,
) -> list[dict]:
    """
    Analytic and estimated sojourn-time decay rates under FB, FIFO,
    preemptive LIFO and PS, all driven by the same arrivals.
    """
    config = load_config(
        overrides={
            "lambda": arrival_rate,
            "service": service,
            "customers": customers,
            "seed": seed,
        },
    )
    model = config.queue_model()

    rows = []
    for i, discipline in enumerate(config.disciplines):

        async def estimate_discipline() -> str:
            (rate,) = await asyncio.to_thread(
                sojourn_rates,
                model,
                config.customers,
                config.seed,
                disciplines=[discipline],
                warmup=config.resolved_warmup,
            )
            return dumps(rate)

        row = await at_least_once(
            f"Estimate {discipline} sojourn decay",
            context,
            estimate_discipline,
            type=str,
        )
        rows.append(json.loads(row))

        await context.report_progress(
            progress=i + 1,
            total=len(config.disciplines),
        )

    return rows


@mcp.tool()
async def validate(
    check: str,
    arrival_rate: float,
    service: str,
    context: DurableContext,
    samples: int = 100_000,
    customers: int = 1_000_000,
    tau: float = 1.0,
    alpha: float = 1.0,
    seed: int = 0,
    seeds: int = 1,
) -> dict:
    """
    Runs a named check: d-decomp, vtau-decomp, sum-lemma, ordering,
    pise-mixture, lifo-busy or lower-bound.
    """
    config = load_config(
        overrides={
            "lambda": arrival_rate,
            "service": service,
            "samples": samples,
            "customers": customers,
            "tau": tau,
            "alpha": alpha,
            "seed": seed,
            "seeds": seeds,
        },
    )

    async def run() -> str:
        report = await asyncio.to_thread(run_named_check, check, config)
        return dumps(
            {"check": check, "passed": report.passed, "report": report}
        )

    verdict = await at_least_once(
        f"Validate {check} with seed {seed}",
        context,
        run,
        type=str,
    )

    await context.info(f"Check {check} finished")

    return json.loads(verdict)


# Reboot application that runs everything necessary for `DurableMCP`.
application: Application = mcp.application()


async def main():
    await application.run()


if __name__ == '__main__':
    asyncio.run(main())
