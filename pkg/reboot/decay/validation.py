"""
Executable checks of the distributional identities and decay-rate
relations of the M/G/1 queue.

"Equal in distribution" claims are tested with a two-sample
Kolmogorov-Smirnov test at level 0.05; "same decay rate" claims by
comparing tail estimates against the analytic rates.
"""

import math
import numpy as np
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from log.log import get_logger
from reboot.decay.analytic import (
    QueueModel,
    busy_period_decay,
    fifo_decay,
)
from reboot.decay.errors import ConfigError, PreconditionViolated
from reboot.decay.estimator import (
    BUSY_PERIOD_POWER,
    DEFAULT_Q_HI,
    DEFAULT_Q_LO,
    Correction,
    DecayEstimate,
    estimate_decay,
)
from reboot.decay.replications import run_replications
from reboot.decay.schedulers import DISCIPLINES, Discipline
from reboot.decay.simulator import (
    DEFAULT_STRIDE,
    DEFAULT_WARMUP,
    FirstService,
    Seed,
    conditional_sojourn_fb,
    generators,
    run_queue,
    sample_busy_periods,
    sample_residual_busy,
    sample_time_to_empty,
    spawn,
)
from scipy import stats
from typing import Callable, Optional, Protocol, Sequence

logger = get_logger(__name__)

# Asymptotic critical value of the two-sample KS statistic at level 0.05.
KS_CRITICAL_005 = 1.358

# A calibrated check passes in at least this fraction of seeds.
CALIBRATION_PASS_RATIO = 0.9

# Absolute tolerance on empirical "finds the system busy" fractions.
BUSY_FRACTION_TOLERANCE = 0.01

# Relative tolerance of sojourn decay estimates against analytic rates.
RATE_TOLERANCE = 0.15


@dataclass(kw_only=True, frozen=True)
class SojournFit:
    """Tail estimator settings for the sojourn times of one discipline."""
    correction: Correction = "none"
    power: float = BUSY_PERIOD_POWER
    q_lo: float = DEFAULT_Q_LO
    q_hi: float = DEFAULT_Q_HI


# FB sojourns only reach their x^{-3/2} prefactor deep in the tail.
# LIFO sojourns are distributed as busy periods.
SOJOURN_FITS: dict[Discipline, SojournFit] = {
    "fb": SojournFit(correction="polynomial", q_lo=0.99, q_hi=0.9995),
    "lifo": SojournFit(correction="busy-shape"),
    "fifo": SojournFit(),
    "ps": SojournFit(),
}


class Verdict(Protocol):
    passed: bool


@dataclass(kw_only=True, frozen=True)
class KSReport:
    statistic: float
    n: int
    m: int
    threshold: float
    passed: bool


def ks_two_sample(a, b) -> KSReport:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise PreconditionViolated(
            f"KS test needs two nonempty samples, got sizes {a.size} and "
            f"{b.size}"
        )
    n, m = a.size, b.size
    statistic = float(stats.ks_2samp(a, b).statistic)
    threshold = KS_CRITICAL_005 * math.sqrt((n + m) / (n * m))
    return KSReport(
        statistic=statistic,
        n=n,
        m=m,
        threshold=threshold,
        passed=statistic < threshold,
    )


@dataclass(kw_only=True, frozen=True)
class DecompositionReport:
    ks: KSReport
    # Empirical and exact probability that the (tau-)queue is found busy.
    busy_fraction: float
    expected_busy_fraction: float
    passed: bool


def _decomposition_report(
    direct: np.ndarray,
    composed: np.ndarray,
    busy_fraction: float,
    expected: float,
) -> DecompositionReport:
    ks = ks_two_sample(direct, composed)
    return DecompositionReport(
        ks=ks,
        busy_fraction=busy_fraction,
        expected_busy_fraction=expected,
        passed=(
            ks.passed and
            abs(busy_fraction - expected) <= BUSY_FRACTION_TOLERANCE
        ),
    )


def check_D_decomposition(
    model: QueueModel,
    n: int,
    seed: Seed = 0,
) -> DecompositionReport:
    """
    D, the time from an arrival until the system empties, against
    A L~ + L with A ~ Bernoulli(rho) and L~, L independent.
    """
    direct_seed, residual_seed, busy_seed, bernoulli_seed = spawn(seed, 4)

    direct = sample_time_to_empty(model, n, direct_seed)

    (rng,) = generators(bernoulli_seed, 1)
    found_busy = rng.random(n) < model.rho
    composed = (
        found_busy * sample_residual_busy(model, n, residual_seed) +
        sample_busy_periods(model, n, busy_seed)
    )

    report = _decomposition_report(
        direct.samples,
        composed,
        direct.busy_fraction,
        model.rho,
    )
    logger.info(f"D decomposition: {report}")
    return report


def _tau_queue(model: QueueModel, tau: float) -> QueueModel:
    if tau >= model.service.endpoint:
        return model
    return model.truncated(tau)


def check_Vtau_decomposition(
    model: QueueModel,
    tau: float,
    n: int,
    seed: Seed = 0,
) -> DecompositionReport:
    """
    Sojourn V(tau) of an FB customer of size tau against
    A(tau) L~(tau) + L*(tau), all in the tau-queue.
    """
    if not model.service.tail(tau) > 0:
        raise PreconditionViolated(
            f"V(tau) needs P(B >= tau) > 0, got tau = {tau!r}"
        )

    direct_seed, residual_seed, busy_seed, bernoulli_seed = spawn(seed, 4)

    direct = conditional_sojourn_fb(model, tau, n, direct_seed)

    tau_queue = _tau_queue(model, tau)
    (rng,) = generators(bernoulli_seed, 1)
    found_busy = rng.random(n) < tau_queue.rho
    composed = (
        found_busy * sample_residual_busy(tau_queue, n, residual_seed) +
        sample_busy_periods(
            tau_queue,
            n,
            busy_seed,
            first_service=FirstService.exactly(tau),
        )
    )

    report = _decomposition_report(
        direct.sojourns,
        composed,
        float(direct.found_busy.mean()),
        tau_queue.rho,
    )
    logger.info(f"V(tau) decomposition at tau={tau!r}: {report}")
    return report


@dataclass(kw_only=True, frozen=True)
class SumLemmaReport:
    alpha: float
    estimates: list[float]
    tolerance: float
    passes: int
    passed: bool


def check_sum_decay_lemma(
    alpha: float,
    n: int,
    seeds: Sequence[int],
    *,
    tolerance: float = 0.05,
    degenerate: bool = False,
) -> SumLemmaReport:
    """
    For X, Y independent with decay rate alpha, dr(X + Y) = alpha.

    X and Y are exponential(alpha); with `degenerate` X is 0. The exact
    tail of X + Y is (1 + alpha x) e^{-alpha x}, hence the polynomial
    correction with power -1.
    """
    if not alpha > 0:
        raise ConfigError(f"Need alpha > 0, got {alpha}")

    estimates = []
    for seed in seeds:
        x_rng, y_rng = generators(seed, 2)
        y = y_rng.exponential(1 / alpha, n)
        if degenerate:
            estimate = estimate_decay(y)
        else:
            x = x_rng.exponential(1 / alpha, n)
            estimate = estimate_decay(x + y, correction="polynomial", power=-1)
        estimates.append(estimate.rate)

    passes = sum(
        1 for rate in estimates if abs(rate - alpha) <= tolerance * alpha
    )
    return SumLemmaReport(
        alpha=alpha,
        estimates=estimates,
        tolerance=tolerance,
        passes=passes,
        passed=passes >= CALIBRATION_PASS_RATIO * len(estimates),
    )


def _strided(samples: np.ndarray, n: int, stride: int) -> np.ndarray:
    return samples[::stride][:n]


def check_lifo_busy_period(
    model: QueueModel,
    n: int,
    seed: Seed = 0,
    *,
    stride: int = DEFAULT_STRIDE,
    warmup: int = DEFAULT_WARMUP,
) -> KSReport:
    """Preemptive LIFO sojourns against independent busy periods."""
    queue_seed, busy_seed = spawn(seed, 2)
    run = run_queue(model, "lifo", n * stride + warmup, warmup, queue_seed)
    report = ks_two_sample(
        _strided(run.sojourns, n, stride),
        sample_busy_periods(model, n, busy_seed),
    )
    logger.info(f"LIFO sojourns against busy periods: {report}")
    return report


def check_pise_mixture(
    model: QueueModel,
    n: int,
    seed: Seed = 0,
    *,
    stride: int = DEFAULT_STRIDE,
    warmup: int = DEFAULT_WARMUP,
) -> KSReport:
    """
    Tagged FB sojourns V(tau) with tau drawn from B, against the
    sojourns of ordinary FB customers.
    """
    tagged_seed, queue_seed = spawn(seed, 2)
    mixed = conditional_sojourn_fb(model, None, n, tagged_seed)
    run = run_queue(model, "fb", n * stride + warmup, warmup, queue_seed)
    report = ks_two_sample(mixed.sojourns, _strided(run.sojourns, n, stride))
    logger.info(f"Mixed tagged FB sojourns against FB sojourns: {report}")
    return report


@dataclass(kw_only=True, frozen=True)
class DisciplineRate:
    discipline: Discipline
    # None where no analytic rate is computed (PS).
    analytic: Optional[float]
    estimate: DecayEstimate


def _analytic_sojourn_rate(
    discipline: Discipline,
    c: float,
    theta0: float,
) -> Optional[float]:
    if discipline in ("fb", "lifo"):
        return c
    elif discipline == "fifo":
        return theta0
    return None


def sojourn_rates(
    model: QueueModel,
    n_customers: int,
    seed: Seed = 0,
    *,
    disciplines: Sequence[Discipline] = DISCIPLINES,
    warmup: int = DEFAULT_WARMUP,
    threads: int = 1,
) -> list[DisciplineRate]:
    """
    Analytic and estimated sojourn decay rates per discipline, with all
    disciplines driven by the same arrivals and service times.
    """
    busy = busy_period_decay(model)
    theta0 = fifo_decay(model, theta_star=busy.theta_star)

    def rate(discipline: Discipline) -> DisciplineRate:
        run = run_queue(model, discipline, n_customers, warmup, seed)
        fit = SOJOURN_FITS[discipline]
        return DisciplineRate(
            discipline=discipline,
            analytic=_analytic_sojourn_rate(discipline, busy.c, theta0),
            estimate=estimate_decay(
                run.sojourns,
                fit.q_lo,
                fit.q_hi,
                correction=fit.correction,
                power=fit.power,
            ),
        )

    if threads == 1:
        return [rate(discipline) for discipline in disciplines]

    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(rate, disciplines))


@dataclass(kw_only=True, frozen=True)
class OrderingReport:
    rates: list[DisciplineRate]
    fb_matches_c: bool
    lifo_matches_c: bool
    fifo_matches_theta0: bool
    fb_below_fifo: bool
    lifo_busy_period: KSReport
    passed: bool


def _within(estimate: float, analytic: float, tolerance: float) -> bool:
    return abs(estimate - analytic) <= tolerance * analytic


def check_discipline_ordering(
    model: QueueModel,
    n_customers: int,
    seed: Seed = 0,
    *,
    ks_samples: Optional[int] = None,
    warmup: int = DEFAULT_WARMUP,
    tolerance: float = RATE_TOLERANCE,
    threads: int = 1,
) -> OrderingReport:
    """
    FB and LIFO sojourns decay at the busy-period rate c, FIFO sojourns
    at theta0 > c, and LIFO sojourns are distributed as busy periods.
    """
    rates = {
        rate.discipline: rate for rate in sojourn_rates(
            model,
            n_customers,
            seed,
            warmup=warmup,
            threads=threads,
        )
    }
    fb, lifo, fifo = rates["fb"], rates["lifo"], rates["fifo"]
    assert fb.analytic is not None and lifo.analytic is not None
    assert fifo.analytic is not None

    lifo_busy_period = check_lifo_busy_period(
        model,
        ks_samples or max(n_customers // (10 * DEFAULT_STRIDE), 1000),
        seed,
        warmup=warmup,
    )

    fb_matches_c = _within(fb.estimate.rate, fb.analytic, tolerance)
    lifo_matches_c = _within(lifo.estimate.rate, lifo.analytic, tolerance)
    fifo_matches_theta0 = _within(
        fifo.estimate.rate,
        fifo.analytic,
        tolerance,
    )
    fb_below_fifo = fb.estimate.rate < fifo.estimate.rate

    return OrderingReport(
        rates=list(rates.values()),
        fb_matches_c=fb_matches_c,
        lifo_matches_c=lifo_matches_c,
        fifo_matches_theta0=fifo_matches_theta0,
        fb_below_fifo=fb_below_fifo,
        lifo_busy_period=lifo_busy_period,
        passed=(
            fb_matches_c and lifo_matches_c and fifo_matches_theta0 and
            fb_below_fifo and lifo_busy_period.passed
        ),
    )


@dataclass(kw_only=True, frozen=True)
class LowerBoundReport:
    c: float
    rates: list[DisciplineRate]
    tolerance: float
    passed: bool


def check_lower_bound(
    model: QueueModel,
    n_customers: int,
    seed: Seed = 0,
    *,
    disciplines: Sequence[Discipline] = DISCIPLINES,
    warmup: int = DEFAULT_WARMUP,
    tolerance: float = RATE_TOLERANCE,
    threads: int = 1,
) -> LowerBoundReport:
    """
    No work-conserving discipline has sojourn times decaying slower than
    the busy period: every estimated rate is at least c (up to
    `tolerance`).
    """
    c = busy_period_decay(model).c
    rates = sojourn_rates(
        model,
        n_customers,
        seed,
        disciplines=disciplines,
        warmup=warmup,
        threads=threads,
    )
    return LowerBoundReport(
        c=c,
        rates=rates,
        tolerance=tolerance,
        passed=all(
            rate.estimate.rate >= c * (1 - tolerance) for rate in rates
        ),
    )


@dataclass(kw_only=True, frozen=True)
class CalibrationReport:
    passes: int
    runs: int
    ratio: float
    reports: list = field(default_factory=list)
    passed: bool = False


def calibrate(
    check: Callable[[np.random.SeedSequence], Verdict],
    seeds: int,
    *,
    seed: int = 0,
    threads: int = 1,
) -> CalibrationReport:
    """
    Runs `check` for `seeds` independent seeds; passes if at least 90%
    of the runs pass.
    """
    reports = run_replications(check, seed, seeds, threads)
    passes = sum(1 for report in reports if report.passed)
    ratio = passes / len(reports)
    logger.info(f"Calibration: {passes}/{len(reports)} runs passed")
    return CalibrationReport(
        passes=passes,
        runs=len(reports),
        ratio=ratio,
        reports=reports,
        passed=ratio >= CALIBRATION_PASS_RATIO,
    )
