"""
Analytic decay rates of the M/G/1 queue.

All rates are derived from the concave function

    h(theta) = theta - lambda (E exp(theta B) - 1)

which is 0 at theta = 0, has slope 1 - rho there and is -inf beyond
the radius of convergence of the service MGF. Its supremum is the
decay rate c of the busy period (and of the FB sojourn time), its
positive root is the FIFO decay rate theta0, and the service radius
dr(B) bounds both.
"""

import math
import numpy as np
from dataclasses import dataclass, field
from log.log import get_logger
from reboot.decay.distributions import ServiceDistribution, Truncated
from reboot.decay.errors import (
    BracketingFailed,
    ConfigError,
    PreconditionViolated,
    UnstableModel,
)
from scipy import optimize
from typing import Callable, Sequence

logger = get_logger(__name__)

# Tolerance on theta of the maximizer and of the roots.
THETA_TOLERANCE = 1e-12

# Step of the central differences used for h' and g'.
DIFFERENCE_STEP = 1e-6

# Golden-section search hands over to derivative bisection once the
# bracket is this narrow.
_GOLDEN_TOLERANCE = 1e-4

_MAX_BRACKET_STEPS = 200

_INVERSE_PHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class QueueModel:
    """An M/G/1 queue: Poisson(arrival_rate) arrivals, iid service."""

    arrival_rate: float
    service: ServiceDistribution

    def __post_init__(self):
        if not self.arrival_rate > 0:
            raise ConfigError(
                f"Arrival rate must be > 0, got {self.arrival_rate}"
            )
        if not self.rho < 1:
            raise UnstableModel(
                f"Queue with arrival rate {self.arrival_rate} and service "
                f"'{self.service.spec}' is unstable: rho = {self.rho:.6g} >= 1"
            )

    @property
    def rho(self) -> float:
        return self.arrival_rate * self.service.mean

    def truncated(self, tau: float) -> 'QueueModel':
        """The tau-queue, i.e., the same queue with service min(B, tau)."""
        return QueueModel(self.arrival_rate, Truncated(self.service, tau))


@dataclass(kw_only=True, frozen=True)
class BusyPeriodDecay:
    c: float
    theta_star: float
    tolerance: float
    # |h'(theta_star)| by central differences.
    derivative_residual: float


@dataclass(kw_only=True, frozen=True)
class CoxSmithDecay:
    c: float
    zeta: float


@dataclass(kw_only=True, frozen=True)
class MM1Rates:
    c_fb: float
    c_fifo: float
    dr_b: float


@dataclass(kw_only=True, frozen=True)
class AnalyticRates:
    arrival_rate: float
    service: str
    rho: float
    c: float
    theta_star: float
    theta0: float
    dr_b: float
    tolerance: float
    derivative_residual: float
    c_tau: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.c < self.theta0 < self.dr_b:
            # Would mean a solver bug, never a property of the model.
            logger.warning(
                f"Rates for '{self.service}' violate 0 < c < theta0 < dr(B): "
                f"c={self.c!r}, theta0={self.theta0!r}, dr(B)={self.dr_b!r}"
            )


def h(model: QueueModel, theta: float) -> float:
    mgf = model.service.mgf(theta)
    if math.isinf(mgf):
        return -math.inf
    return theta - model.arrival_rate * (mgf - 1.0)


def arrival_log_mgf(model: QueueModel, theta: float) -> float:
    """log E exp(theta A(1)) for the work A(1) arriving in unit time."""
    mgf = model.service.mgf(theta)
    if math.isinf(mgf):
        return math.inf
    return model.arrival_rate * (mgf - 1.0)


def _slope(f: Callable[[float], float], theta: float) -> float:
    upper = f(theta + DIFFERENCE_STEP)
    if math.isinf(upper):
        return -math.inf
    return (upper - f(theta - DIFFERENCE_STEP)) / (2 * DIFFERENCE_STEP)


def _golden_section(
    f: Callable[[float], float],
    a: float,
    b: float,
    tolerance: float,
) -> tuple[float, float]:
    """Shrinks [a, b] around the maximum of the unimodal `f`."""
    c = b - _INVERSE_PHI * (b - a)
    d = a + _INVERSE_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tolerance:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INVERSE_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVERSE_PHI * (b - a)
            fd = f(d)
    return a, b


def _maximize_concave(
    f: Callable[[float], float],
    radius: float,
) -> BusyPeriodDecay:
    """
    Maximizes a concave `f` with f(0) = 0 and f'(0) > 0 over
    [0, radius). `f` may return -inf, which is read as "too far".
    """
    # Find an upper end where f is already decreasing.
    upper = None
    for k in range(_MAX_BRACKET_STEPS):
        if math.isinf(radius):
            candidate = 2.0**k
        else:
            # Back off exponentially from the radius.
            candidate = radius - (radius / 2) * 2.0**-k
        if _slope(f, candidate) < 0:
            upper = candidate
            break
    if upper is None:
        raise BracketingFailed(
            f"Could not bracket the maximizer below radius {radius!r}"
        )

    logger.debug(f"Maximizer bracketed in [0, {upper!r}]")

    low, high = _golden_section(f, 0.0, upper, _GOLDEN_TOLERANCE)

    for _ in range(_MAX_BRACKET_STEPS):
        if high - low <= THETA_TOLERANCE:
            break
        middle = (low + high) / 2
        if _slope(f, middle) > 0:
            low = middle
        else:
            high = middle

    theta_star = (low + high) / 2

    return BusyPeriodDecay(
        c=f(theta_star),
        theta_star=theta_star,
        tolerance=THETA_TOLERANCE,
        derivative_residual=abs(_slope(f, theta_star)),
    )


def busy_period_decay(model: QueueModel) -> BusyPeriodDecay:
    """c = dr(L) = sup_theta h(theta), with its maximizer theta*."""
    return _maximize_concave(
        lambda theta: h(model, theta),
        model.service.mgf_radius,
    )


def cramer_decay(model: QueueModel) -> BusyPeriodDecay:
    """sup_theta {theta - log E exp(theta A(1))}, which equals c."""
    return _maximize_concave(
        lambda theta: theta - arrival_log_mgf(model, theta),
        model.service.mgf_radius,
    )


def _laplace_slope(service: ServiceDistribution, s: float) -> float:
    # g'(s) for g(s) = E exp(-s B); -inf once g is infinite nearby.
    lower = service.laplace(s - DIFFERENCE_STEP)
    if math.isinf(lower):
        return -math.inf
    upper = service.laplace(s + DIFFERENCE_STEP)
    return (upper - lower) / (2 * DIFFERENCE_STEP)


def cox_smith_decay(model: QueueModel) -> CoxSmithDecay:
    """
    c = lambda - zeta - lambda g(zeta) where zeta < 0 solves
    g'(zeta) = -1 / lambda and g is the Laplace transform of B.
    """
    lam = model.arrival_rate
    radius = model.service.mgf_radius

    def equation(s: float) -> float:
        return _laplace_slope(model.service, s) + 1.0 / lam

    # g'(0) = -EB > -1/lambda, so look left of 0 for a sign change.
    lower = None
    for k in range(_MAX_BRACKET_STEPS):
        if math.isinf(radius):
            candidate = -(2.0**k)
        else:
            candidate = -(radius - (radius / 2) * 2.0**-k)
        if equation(candidate) < 0:
            lower = candidate
            break
    if lower is None:
        raise BracketingFailed(
            f"Could not bracket the root of g'(s) = -1/lambda for "
            f"'{model.service.spec}'"
        )

    zeta = optimize.bisect(equation, lower, 0.0, xtol=THETA_TOLERANCE)

    return CoxSmithDecay(
        c=lam - zeta - lam * model.service.laplace(zeta),
        zeta=zeta,
    )


def fifo_decay(model: QueueModel, *, theta_star: float | None = None) -> float:
    """
    theta0, the positive root of h, which is the decay rate of the FIFO
    waiting time (and sojourn time).
    """
    if theta_star is None:
        theta_star = busy_period_decay(model).theta_star

    radius = model.service.mgf_radius

    upper = None
    for k in range(_MAX_BRACKET_STEPS):
        if math.isinf(radius):
            candidate = (2 * theta_star + 1) * 2.0**k
        else:
            candidate = radius - (radius - theta_star) * 2.0**-(k + 1)
        if h(model, candidate) < 0:
            upper = candidate
            break
    if upper is None:
        raise BracketingFailed(
            f"Could not bracket the positive root of h for "
            f"'{model.service.spec}'"
        )

    return optimize.bisect(
        lambda theta: h(model, theta),
        theta_star,
        upper,
        xtol=THETA_TOLERANCE / 10,
    )


def workload_transform(model: QueueModel, s: float) -> float:
    """
    E exp(-s W) by the Pollaczek-Khinchin formula,
    s (1 - rho) / (s - lambda + lambda E exp(-s B)).
    """
    if not s > 0:
        raise PreconditionViolated(
            f"Workload transform needs s > 0, got {s!r}"
        )
    lam = model.arrival_rate
    denominator = s - lam + lam * model.service.laplace(s)
    if denominator == 0:
        raise PreconditionViolated(
            f"Workload transform denominator vanishes at s = {s!r}"
        )
    return s * (1 - model.rho) / denominator


def mm1_closed_forms(arrival_rate: float, service_rate: float) -> MM1Rates:
    if not arrival_rate > 0 or not service_rate > 0:
        raise ConfigError(
            f"M/M/1 rates must be > 0, got lambda={arrival_rate}, "
            f"mu={service_rate}"
        )
    if arrival_rate >= service_rate:
        raise UnstableModel(
            f"M/M/1 queue with lambda={arrival_rate} >= mu={service_rate} "
            "is unstable"
        )
    return MM1Rates(
        c_fb=(math.sqrt(service_rate) - math.sqrt(arrival_rate))**2,
        c_fifo=service_rate - arrival_rate,
        dr_b=service_rate,
    )


def truncated_decay_curve(
    model: QueueModel,
    taus: Sequence[float],
) -> list[tuple[float, float]]:
    """
    c(tau), the busy-period decay rate of the tau-queue, for each tau.
    Nonincreasing in tau and equal to c from the endpoint on.
    """
    curve = []
    for tau in taus:
        if not tau > 0 or model.service.tail(tau) == 0:
            raise PreconditionViolated(
                f"c(tau) needs P(B >= tau) > 0, but tau = {tau!r} for "
                f"'{model.service.spec}'"
            )
        if tau >= model.service.endpoint:
            c = busy_period_decay(model).c
        else:
            c = busy_period_decay(model.truncated(tau)).c
        logger.debug(f"c({tau!r}) = {c!r}")
        curve.append((tau, c))
    return curve


def analytic_rates(
    model: QueueModel,
    taus: Sequence[float] = (),
) -> AnalyticRates:
    busy = busy_period_decay(model)
    return AnalyticRates(
        arrival_rate=model.arrival_rate,
        service=model.service.spec,
        rho=model.rho,
        c=busy.c,
        theta_star=busy.theta_star,
        theta0=fifo_decay(model, theta_star=busy.theta_star),
        dr_b=model.service.mgf_radius,
        tolerance=busy.tolerance,
        derivative_residual=busy.derivative_residual,
        c_tau=truncated_decay_curve(model, taus),
    )


def h_curve(
    model: QueueModel,
    thetas: Sequence[float] | None = None,
    *,
    points: int = 201,
) -> list[tuple[float, float]]:
    """
    (theta, h(theta)) pairs for plotting. Without explicit `thetas` the
    grid runs from 0 to just below dr(B), or to 1.5 theta0 when dr(B)
    is infinite. Always contains theta = 0.
    """
    if thetas is None:
        radius = model.service.mgf_radius
        if math.isinf(radius):
            upper = 1.5 * fifo_decay(model)
        else:
            upper = radius * (1 - 1e-3)
        grid = [float(theta) for theta in np.linspace(0.0, upper, points)]
    else:
        grid = sorted(set(float(theta) for theta in thetas) | {0.0})
    return [(theta, h(model, theta)) for theta in grid]


def sojourn_lower_bound(
    model: QueueModel,
    tau0: float,
    *,
    nodes: int = 32,
) -> float:
    """
    P(B >= tau0)^{-1} int_{[tau0, x_F]} c(tau) dF(tau), the rate in the
    FB sojourn lower bound. Integrates c(F^{-1}(u)) over
    u in [F(tau0-), 1] with Gauss-Legendre quadrature.
    """
    tail = model.service.tail(tau0)
    if not tail > 0:
        raise PreconditionViolated(
            f"Lower bound needs P(B >= tau0) > 0, got tau0 = {tau0!r}"
        )
    u_low = 1.0 - tail

    points, weights = np.polynomial.legendre.leggauss(nodes)
    # Map [-1, 1] onto [u_low, 1].
    us = u_low + (points + 1) * (1 - u_low) / 2

    taus = [max(model.service.quantile(float(u)), tau0) for u in us]
    curve = truncated_decay_curve(model, taus)

    return float(np.dot(weights, [c for _, c in curve])) / 2


def mean_busy_period(model: QueueModel) -> float:
    """EL = EB / (1 - rho)."""
    return model.service.mean / (1 - model.rho)


def mean_residual_busy(model: QueueModel) -> float:
    """E L~ = E L^2 / (2 EL) with E L^2 = E B^2 / (1 - rho)^3."""
    service = model.service
    return service.second_moment / (2 * service.mean * (1 - model.rho)**2)
