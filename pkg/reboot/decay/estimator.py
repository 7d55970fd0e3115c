"""
Estimation of decay rates dr(X) = |lim x^{-1} log P(X > x)| from
samples, by regressing the log empirical survival function on x over
a window of upper quantiles.
"""

import math
import numpy as np
from dataclasses import dataclass
from log.log import get_logger
from reboot.decay.errors import ConfigError, EstimationError
from scipy import optimize, special, stats
from typing import Literal

logger = get_logger(__name__)

MIN_SAMPLES = 1000

MIN_POINTS = 10

DEFAULT_Q_LO = 0.90
DEFAULT_Q_HI = 0.999

# Prefactor power of the busy-period tail b x^{-3/2} e^{-cx}.
BUSY_PERIOD_POWER = 1.5

Correction = Literal["none", "polynomial", "busy-shape"]

CORRECTIONS: tuple[Correction, ...] = ("none", "polynomial", "busy-shape")

# Above this the upper incomplete gamma function is evaluated by its
# asymptotic series.
_ASYMPTOTIC_Z = 200.0


class EmpiricalSurvival:
    """x -> fraction of samples strictly greater than x."""

    def __init__(self, samples):
        values = np.asarray(samples, dtype=float)
        if values.size == 0:
            raise EstimationError("Cannot build a survival function of nothing")
        if not np.all(np.isfinite(values)):
            raise EstimationError("Samples must be finite")
        self._sorted = np.sort(values)

    def __len__(self) -> int:
        return len(self._sorted)

    @property
    def sorted(self) -> np.ndarray:
        return self._sorted

    def __call__(self, x):
        n = len(self._sorted)
        return (n - np.searchsorted(self._sorted, x, side="right")) / n


def empirical_survival(samples) -> EmpiricalSurvival:
    return EmpiricalSurvival(samples)


@dataclass(kw_only=True, frozen=True)
class DecayEstimate:
    rate: float
    stderr: float
    window: tuple[float, float]
    points: int
    r_squared: float
    correction: Correction = "none"
    power: float = 0.0

    def confidence_interval(self, level: float = 0.95) -> tuple[float, float]:
        z = float(stats.norm.ppf(0.5 + level / 2))
        return (self.rate - z * self.stderr, self.rate + z * self.stderr)


def log_upper_gamma_minus_half(z):
    """
    log Gamma(-1/2, z), the log survival shape implied by a density
    proportional to x^{-3/2} e^{-cx} (with z = cx).

    Gamma(-1/2, z) = 2 e^{-z} (z^{-1/2} - sqrt(pi) erfcx(sqrt(z))).
    """
    z = np.asarray(z, dtype=float)
    direct = np.minimum(z, _ASYMPTOTIC_Z)
    bracket = direct**-0.5 - math.sqrt(math.pi) * special.erfcx(np.sqrt(direct))
    asymptotic = z**-1.5 / 2 * (
        1 - 3 / (2 * z) + 15 / (4 * z**2) - 105 / (8 * z**3)
    )
    bracket = np.where(z > _ASYMPTOTIC_Z, asymptotic, bracket)
    return math.log(2) - z + np.log(bracket)


def _window(
    samples,
    q_lo: float,
    q_hi: float,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    if not 0 < q_lo < q_hi < 1:
        raise ConfigError(
            f"Need 0 < q_lo < q_hi < 1, got q_lo={q_lo}, q_hi={q_hi}"
        )

    survival = EmpiricalSurvival(samples)

    if len(survival) < MIN_SAMPLES:
        raise EstimationError(
            f"Need at least {MIN_SAMPLES} samples, got {len(survival)}"
        )

    x_lo, x_hi = (
        float(q) for q in np.quantile(survival.sorted, [q_lo, q_hi])
    )

    xs = np.unique(survival.sorted)
    xs = xs[(xs >= x_lo) & (xs <= x_hi)]
    ps = survival(xs)
    keep = ps > 0
    xs, ps = xs[keep], ps[keep]

    if len(xs) < MIN_POINTS:
        raise EstimationError(
            f"Only {len(xs)} distinct points in the window "
            f"[{x_lo:.6g}, {x_hi:.6g}], need {MIN_POINTS}"
        )
    if len(xs) < 5 * MIN_POINTS:
        logger.warning(
            f"Decay estimate rests on only {len(xs)} points in "
            f"[{x_lo:.6g}, {x_hi:.6g}]"
        )

    return xs, np.log(ps), x_lo, x_hi


def _fit_busy_shape(
    xs: np.ndarray,
    ys: np.ndarray,
    initial: float,
) -> tuple[float, float, float]:
    """
    Least squares of ys ~ a + log Gamma(-1/2, c xs) with `a` profiled
    out. Returns (c, stderr of c, r^2).
    """

    def residuals(c: float) -> np.ndarray:
        shape = log_upper_gamma_minus_half(c * xs)
        fitted = shape + np.mean(ys - shape)
        return ys - fitted

    def loss(c: float) -> float:
        return float(np.sum(residuals(c)**2))

    result = optimize.minimize_scalar(
        loss,
        bounds=(initial * 1e-3, initial * 2),
        method="bounded",
        options={"xatol": initial * 1e-10},
    )
    c = float(result.x)

    # Gauss-Newton covariance for the parameters (a, c).
    step = c * 1e-6
    derivative = (
        log_upper_gamma_minus_half((c + step) * xs) -
        log_upper_gamma_minus_half((c - step) * xs)
    ) / (2 * step)
    jacobian = np.column_stack((np.ones_like(xs), derivative))
    sigma2 = loss(c) / max(len(xs) - 2, 1)
    covariance = sigma2 * np.linalg.inv(jacobian.T @ jacobian)
    stderr = math.sqrt(max(float(covariance[1, 1]), 0.0))

    total = float(np.sum((ys - ys.mean())**2))
    r_squared = 1 - loss(c) / total if total > 0 else 1.0

    return c, stderr, r_squared


def estimate_decay(
    samples,
    q_lo: float = DEFAULT_Q_LO,
    q_hi: float = DEFAULT_Q_HI,
    *,
    correction: Correction = "none",
    power: float = BUSY_PERIOD_POWER,
) -> DecayEstimate:
    """
    Estimates dr(X) from iid samples of X.

    Regresses log P^(X > x) on x over the distinct sample points between
    the `q_lo` and `q_hi` empirical quantiles.

    Args:
        correction: "none" fits log P^ ~ a - r x; "polynomial" fits
            log P^ + power log x ~ a - r x, for tails b x^{-power} e^{-rx};
            "busy-shape" fits P^ proportional to Gamma(-1/2, r x), the
            tail of a density b x^{-3/2} e^{-rx}.
        power: prefactor power for the "polynomial" correction.
    """
    if correction not in CORRECTIONS:
        raise ConfigError(
            f"Unknown correction '{correction}', expected one of "
            f"{', '.join(CORRECTIONS)}"
        )

    xs, ys, x_lo, x_hi = _window(samples, q_lo, q_hi)

    if correction in ("polynomial", "busy-shape") and not xs[0] > 0:
        raise EstimationError(
            f"The '{correction}' correction needs a window of positive "
            f"values, got [{x_lo:.6g}, {x_hi:.6g}]"
        )

    if correction == "polynomial":
        fit = stats.linregress(xs, ys + power * np.log(xs))
    else:
        fit = stats.linregress(xs, ys)

    rate = -float(fit.slope)
    stderr = float(fit.stderr)
    r_squared = float(fit.rvalue)**2

    if not (math.isfinite(rate) and rate > 0):
        raise EstimationError(
            f"Fitted slope {fit.slope!r} does not describe a decaying tail"
        )

    if correction == "busy-shape":
        rate, stderr, r_squared = _fit_busy_shape(xs, ys, rate)

    logger.debug(
        f"Decay rate {rate:.6g} +- {stderr:.2g} from {len(xs)} points "
        f"in [{x_lo:.6g}, {x_hi:.6g}] ({correction})"
    )

    return DecayEstimate(
        rate=rate,
        stderr=stderr,
        window=(x_lo, x_hi),
        points=len(xs),
        r_squared=r_squared,
        correction=correction,
        power=power if correction == "polynomial" else 0.0,
    )
