"""
Service-time distributions for the M/G/1 queue.

Every distribution is an immutable value that knows how to sample
itself from a caller supplied `numpy.random.Generator`, how to evaluate
its moment generating function (returning `math.inf` beyond the
radius of convergence rather than raising), and a handful of other
quantities the analytics and the simulator need: mean, endpoint,
survival function, quantiles, truncated moments and the equilibrium
(residual-life) law.

Distributions are written down as short specs, e.g. `exp:1.0`,
`gamma:0.5,1.0` or `trunc(hyper:0.4,1.0,0.6,3.0,5.0)`, see
`parse_service()`.
"""

import math
import numpy as np
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from log.log import get_logger
from reboot.decay.errors import ConfigError, RejectionTooRare, ServiceSpecError
from scipy import integrate, optimize, special

logger = get_logger(__name__)

# Largest argument for which `math.exp()` does not overflow.
_MAX_EXPONENT = 709.0

# Below this |theta * (b - a)| the uniform MGF is evaluated with a
# Taylor expansion instead of `expm1(x) / x`.
_UNIFORM_TAYLOR_THRESHOLD = 1e-4

QUADRATURE_EPSABS = 1e-12
QUADRATURE_LIMIT = 64

# Rejection sampling refuses to run when it would accept less often
# than this.
MIN_ACCEPTANCE = 1e-6


def _exp(x: float) -> float:
    if x > _MAX_EXPONENT:
        return math.inf
    return math.exp(x)


def _uniform_mgf(theta: float, low: float, high: float) -> float:
    if theta == 0.0:
        return 1.0
    if theta * high > _MAX_EXPONENT:
        return math.inf
    x = theta * (high - low)
    if abs(x) < _UNIFORM_TAYLOR_THRESHOLD:
        return _exp(theta * low) * (1 + x / 2 + x * x / 6 + x * x * x / 24)
    return _exp(theta * low) * math.expm1(x) / x


def _exponential_truncated_mgf(rate: float, theta: float, tau: float) -> float:
    # E exp(theta * min(B, tau)) for B ~ Exp(rate):
    #   rate / k * (1 - exp(-k tau)) + exp(-k tau),  k = rate - theta.
    k = rate - theta
    if k == 0.0:
        return rate * tau + 1.0
    if -k * tau > _MAX_EXPONENT:
        return math.inf
    return rate / k * -math.expm1(-k * tau) + math.exp(-k * tau)


class ServiceDistribution(ABC):
    """
    Law of a generic service time B.

    Subclasses are frozen dataclasses; parameters are validated at
    construction so that every method below is total.
    """

    @property
    @abstractmethod
    def spec(self) -> str:
        """Textual spec, parseable by `parse_service()`."""

    @property
    @abstractmethod
    def mean(self) -> float:
        ...

    @property
    @abstractmethod
    def second_moment(self) -> float:
        ...

    @property
    @abstractmethod
    def endpoint(self) -> float:
        """x_F = inf{u >= 0 : F(u) = 1}, possibly `math.inf`."""

    @property
    @abstractmethod
    def mgf_radius(self) -> float:
        """sup{theta : E exp(theta B) < inf}, i.e., dr(B)."""

    @abstractmethod
    def mgf(self, theta: float) -> float:
        """E exp(theta B), or `math.inf` where it diverges."""

    @abstractmethod
    def survival(self, x: float) -> float:
        """P(B > x)."""

    @abstractmethod
    def quantile(self, u: float) -> float:
        """Inverse distribution function, inf{x : F(x) >= u}."""

    @abstractmethod
    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        ...

    @abstractmethod
    def sample_equilibrium_array(
        self,
        rng: np.random.Generator,
        size: int,
    ) -> np.ndarray:
        """
        Draws from the equilibrium law of B, with survival function
        (EB)^{-1} int_x^inf P(B > y) dy.
        """

    def __str__(self) -> str:
        return self.spec

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.sample_array(rng, 1)[0])

    def tail(self, x: float) -> float:
        """P(B >= x). Equal to `survival()` except at atoms."""
        return self.survival(x)

    def pdf(self, x: float) -> float:
        raise NotImplementedError(f"'{self.spec}' has no density")

    def laplace(self, s: float) -> float:
        """g(s) = E exp(-s B)."""
        return self.mgf(-s)

    def truncated_mgf(self, theta: float, tau: float) -> float:
        """
        E exp(theta min(B, tau)) by adaptive quadrature of the density
        on [0, tau] plus the mass at tau.
        """
        if tau >= self.endpoint:
            return self.mgf(theta)
        if theta * tau > _MAX_EXPONENT:
            return math.inf
        body, _ = integrate.quad(
            lambda x: math.exp(theta * x) * self.pdf(x),
            0.0,
            tau,
            epsabs=QUADRATURE_EPSABS,
            limit=QUADRATURE_LIMIT,
        )
        return body + math.exp(theta * tau) * self.tail(tau)

    def truncated_mean(self, tau: float) -> float:
        """E min(B, tau) = int_0^tau P(B > x) dx."""
        if tau >= self.endpoint:
            return self.mean
        value, _ = integrate.quad(
            self.survival,
            0.0,
            tau,
            epsabs=QUADRATURE_EPSABS,
            limit=QUADRATURE_LIMIT,
        )
        return value

    def truncated_second_moment(self, tau: float) -> float:
        """E min(B, tau)^2 = int_0^tau 2 x P(B > x) dx."""
        if tau >= self.endpoint:
            return self.second_moment
        value, _ = integrate.quad(
            lambda x: 2.0 * x * self.survival(x),
            0.0,
            tau,
            epsabs=QUADRATURE_EPSABS,
            limit=QUADRATURE_LIMIT,
        )
        return value


@dataclass(frozen=True)
class Deterministic(ServiceDistribution):
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ConfigError(
                f"Deterministic service time must be > 0, got {self.value}"
            )

    @property
    def spec(self) -> str:
        return f"det:{self.value!r}"

    @property
    def mean(self) -> float:
        return self.value

    @property
    def second_moment(self) -> float:
        return self.value * self.value

    @property
    def endpoint(self) -> float:
        return self.value

    @property
    def mgf_radius(self) -> float:
        return math.inf

    def mgf(self, theta: float) -> float:
        return _exp(theta * self.value)

    def survival(self, x: float) -> float:
        return 1.0 if x < self.value else 0.0

    def tail(self, x: float) -> float:
        return 1.0 if x <= self.value else 0.0

    def quantile(self, u: float) -> float:
        return self.value

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.value)

    def sample_equilibrium_array(
        self,
        rng: np.random.Generator,
        size: int,
    ) -> np.ndarray:
        return self.value * rng.random(size)

    def truncated_mgf(self, theta: float, tau: float) -> float:
        return _exp(theta * min(self.value, tau))

    def truncated_mean(self, tau: float) -> float:
        return min(self.value, tau)

    def truncated_second_moment(self, tau: float) -> float:
        return min(self.value, tau)**2


@dataclass(frozen=True)
class Exponential(ServiceDistribution):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError(f"Exponential rate must be > 0, got {self.rate}")

    @property
    def spec(self) -> str:
        return f"exp:{self.rate!r}"

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    @property
    def second_moment(self) -> float:
        return 2.0 / self.rate**2

    @property
    def endpoint(self) -> float:
        return math.inf

    @property
    def mgf_radius(self) -> float:
        return self.rate

    def mgf(self, theta: float) -> float:
        if theta >= self.rate:
            return math.inf
        return self.rate / (self.rate - theta)

    def survival(self, x: float) -> float:
        if x <= 0:
            return 1.0
        return math.exp(-self.rate * x)

    def pdf(self, x: float) -> float:
        if x < 0:
            return 0.0
        return self.rate * math.exp(-self.rate * x)

    def quantile(self, u: float) -> float:
        return -math.log1p(-u) / self.rate

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        # Inverse distribution function.
        return -np.log1p(-rng.random(size)) / self.rate

    def sample_equilibrium_array(
        self,
        rng: np.random.Generator,
        size: int,
    ) -> np.ndarray:
        # Memoryless.
        return self.sample_array(rng, size)

    def truncated_mgf(self, theta: float, tau: float) -> float:
        return _exponential_truncated_mgf(self.rate, theta, tau)

    def truncated_mean(self, tau: float) -> float:
        return -math.expm1(-self.rate * tau) / self.rate

    def truncated_second_moment(self, tau: float) -> float:
        mu = self.rate
        return 2.0 / mu**2 * (1.0 - math.exp(-mu * tau) * (1.0 + mu * tau))


@dataclass(frozen=True)
class Gamma(ServiceDistribution):
    shape: float
    rate: float

    def __post_init__(self):
        if not self.shape > 0:
            raise ConfigError(f"Gamma shape must be > 0, got {self.shape}")
        if not self.rate > 0:
            raise ConfigError(f"Gamma rate must be > 0, got {self.rate}")

    @property
    def spec(self) -> str:
        return f"gamma:{self.shape!r},{self.rate!r}"

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def second_moment(self) -> float:
        return self.shape * (self.shape + 1) / self.rate**2

    @property
    def endpoint(self) -> float:
        return math.inf

    @property
    def mgf_radius(self) -> float:
        return self.rate

    def mgf(self, theta: float) -> float:
        if theta >= self.rate:
            return math.inf
        return _exp(-self.shape * math.log1p(-theta / self.rate))

    def survival(self, x: float) -> float:
        if x <= 0:
            return 1.0
        return float(special.gammaincc(self.shape, self.rate * x))

    def pdf(self, x: float) -> float:
        if x <= 0:
            return 0.0
        return math.exp(
            self.shape * math.log(self.rate) +
            (self.shape - 1) * math.log(x) - self.rate * x -
            special.gammaln(self.shape)
        )

    def quantile(self, u: float) -> float:
        return float(special.gammaincinv(self.shape, u)) / self.rate

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        # NumPy uses the Marsaglia-Tsang rejection scheme (with the
        # usual boost for shape < 1).
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def sample_equilibrium_array(
        self,
        rng: np.random.Generator,
        size: int,
    ) -> np.ndarray:
        # Uniform fraction of the size-biased law, Gamma(shape + 1, rate).
        size_biased = rng.gamma(self.shape + 1, 1.0 / self.rate, size)
        return rng.random(size) * size_biased

    def truncated_mean(self, tau: float) -> float:
        a, b = self.shape, self.rate
        return float(
            a / b * special.gammainc(a + 1, b * tau) +
            tau * special.gammaincc(a, b * tau)
        )


@dataclass(frozen=True)
class Uniform(ServiceDistribution):
    low: float
    high: float

    def __post_init__(self):
        if not self.low >= 0:
            raise ConfigError(f"Uniform low must be >= 0, got {self.low}")
        if not self.high > self.low:
            raise ConfigError(
                f"Uniform high must be > low, got [{self.low}, {self.high}]"
            )

    @property
    def spec(self) -> str:
        return f"unif:{self.low!r},{self.high!r}"

    @property
    def mean(self) -> float:
        return (self.low + self.high) / 2

    @property
    def second_moment(self) -> float:
        a, b = self.low, self.high
        return (a * a + a * b + b * b) / 3

    @property
    def endpoint(self) -> float:
        return self.high

    @property
    def mgf_radius(self) -> float:
        return math.inf

    def mgf(self, theta: float) -> float:
        return _uniform_mgf(theta, self.low, self.high)

    def survival(self, x: float) -> float:
        if x <= self.low:
            return 1.0
        if x >= self.high:
            return 0.0
        return (self.high - x) / (self.high - self.low)

    def pdf(self, x: float) -> float:
        if self.low <= x <= self.high:
            return 1.0 / (self.high - self.low)
        return 0.0

    def quantile(self, u: float) -> float:
        return self.low + (self.high - self.low) * u

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.low + (self.high - self.low) * rng.random(size)

    def sample_equilibrium_array(
        self,
        rng: np.random.Generator,
        size: int,
    ) -> np.ndarray:
        a2, b2 = self.low**2, self.high**2
        size_biased = np.sqrt(a2 + rng.random(size) * (b2 - a2))
        return rng.random(size) * size_biased

    def truncated_mgf(self, theta: float, tau: float) -> float:
        a, b = self.low, self.high
        if tau >= b:
            return self.mgf(theta)
        if tau <= a:
            return _exp(theta * tau)
        body = (tau - a) / (b - a) * _uniform_mgf(theta, a, tau)
        return body + _exp(theta * tau) * (b - tau) / (b - a)

    def truncated_mean(self, tau: float) -> float:
        a, b = self.low, self.high
        if tau >= b:
            return self.mean
        if tau <= a:
            return tau
        return a + ((b - a)**2 - (b - tau)**2) / (2 * (b - a))


@dataclass(frozen=True)
class HyperExponential(ServiceDistribution):
    weights: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "rates", tuple(self.rates))
        if len(self.weights) == 0 or len(self.weights) != len(self.rates):
            raise ConfigError(
                "Hyperexponential needs one weight per rate, got "
                f"{len(self.weights)} weights and {len(self.rates)} rates"
            )
        if any(not p > 0 for p in self.weights):
            raise ConfigError(
                f"Hyperexponential weights must be > 0, got {self.weights}"
            )
        if abs(math.fsum(self.weights) - 1.0) > 1e-9:
            raise ConfigError(
                f"Hyperexponential weights must sum to 1, got {self.weights}"
            )
        if any(not mu > 0 for mu in self.rates):
            raise ConfigError(
                f"Hyperexponential rates must be > 0, got {self.rates}"
            )

    @property
    def spec(self) -> str:
        pairs = ",".join(
            f"{p!r},{mu!r}" for p, mu in zip(self.weights, self.rates)
        )
        return f"hyper:{pairs}"

    @property
    def mean(self) -> float:
        return math.fsum(p / mu for p, mu in zip(self.weights, self.rates))

    @property
    def second_moment(self) -> float:
        return math.fsum(
            2 * p / mu**2 for p, mu in zip(self.weights, self.rates)
        )

    @property
    def endpoint(self) -> float:
        return math.inf

    @property
    def mgf_radius(self) -> float:
        return min(self.rates)

    def mgf(self, theta: float) -> float:
        if theta >= self.mgf_radius:
            return math.inf
        return math.fsum(
            p * mu / (mu - theta) for p, mu in zip(self.weights, self.rates)
        )

    def survival(self, x: float) -> float:
        if x <= 0:
            return 1.0
        return math.fsum(
            p * math.exp(-mu * x) for p, mu in zip(self.weights, self.rates)
        )

    def pdf(self, x: float) -> float:
        if x < 0:
            return 0.0
        return math.fsum(
            p * mu * math.exp(-mu * x)
            for p, mu in zip(self.weights, self.rates)
        )

    def quantile(self, u: float) -> float:
        if u <= 0:
            return 0.0
        if u >= 1:
            return math.inf
        # Each component has F_i(x) >= u at its own quantile, hence so
        # does the mixture at the largest of them.
        upper = max(-math.log1p(-u) / mu for mu in self.rates)
        return optimize.brentq(
            lambda x: (1.0 - self.survival(x)) - u,
            0.0,
            upper,
            xtol=1e-14,
        )

    def _components(
        self,
        rng: np.random.Generator,
        weights: np.ndarray,
        size: int,
    ) -> np.ndarray:
        cumulative = np.cumsum(weights)
        index = np.searchsorted(cumulative, rng.random(size), side="right")
        return np.minimum(index, len(weights) - 1)

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        rates = np.asarray(self.rates)
        index = self._components(rng, np.asarray(self.weights), size)
        return -np.log1p(-rng.random(size)) / rates[index]

    def sample_equilibrium_array(
        self,
        rng: np.random.Generator,
        size: int,
    ) -> np.ndarray:
        # Mixture of the (memoryless) components reweighted by their means.
        rates = np.asarray(self.rates)
        weights = np.asarray(self.weights) / rates
        index = self._components(rng, weights / weights.sum(), size)
        return -np.log1p(-rng.random(size)) / rates[index]

    def truncated_mgf(self, theta: float, tau: float) -> float:
        return math.fsum(
            p * _exponential_truncated_mgf(mu, theta, tau)
            for p, mu in zip(self.weights, self.rates)
        )

    def truncated_mean(self, tau: float) -> float:
        return math.fsum(
            p * -math.expm1(-mu * tau) / mu
            for p, mu in zip(self.weights, self.rates)
        )


@dataclass(frozen=True)
class Truncated(ServiceDistribution):
    """The law of min(B, tau)."""

    base: ServiceDistribution
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"Truncation point must be > 0, got {self.tau}")

    @property
    def spec(self) -> str:
        return f"trunc({self.base.spec},{self.tau!r})"

    @property
    def mean(self) -> float:
        return self.base.truncated_mean(self.tau)

    @property
    def second_moment(self) -> float:
        return self.base.truncated_second_moment(self.tau)

    @property
    def endpoint(self) -> float:
        return min(self.tau, self.base.endpoint)

    @property
    def mgf_radius(self) -> float:
        return math.inf

    def mgf(self, theta: float) -> float:
        return self.base.truncated_mgf(theta, self.tau)

    def survival(self, x: float) -> float:
        if x >= self.tau:
            return 0.0
        return self.base.survival(x)

    def tail(self, x: float) -> float:
        if x > self.tau:
            return 0.0
        return self.base.tail(x)

    def quantile(self, u: float) -> float:
        return min(self.base.quantile(u), self.tau)

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.minimum(self.base.sample_array(rng, size), self.tau)

    def sample_equilibrium_array(
        self,
        rng: np.random.Generator,
        size: int,
    ) -> np.ndarray:
        # The equilibrium law of min(B, tau) is the equilibrium law of
        # B conditioned to lie below tau.
        if self.tau >= self.base.endpoint:
            return self.base.sample_equilibrium_array(rng, size)

        acceptance = self.mean / self.base.mean

        if acceptance < MIN_ACCEPTANCE:
            raise RejectionTooRare(
                f"Equilibrium draws for '{self.spec}' would be accepted "
                f"with probability {acceptance:.3g}"
            )

        draws = np.empty(size)
        filled = 0
        while filled < size:
            batch = int((size - filled) / acceptance * 1.1) + 16
            candidates = self.base.sample_equilibrium_array(rng, batch)
            accepted = candidates[candidates < self.tau][:size - filled]
            draws[filled:filled + len(accepted)] = accepted
            filled += len(accepted)
        return draws

    def truncated_mgf(self, theta: float, tau: float) -> float:
        return self.base.truncated_mgf(theta, min(self.tau, tau))

    def truncated_mean(self, tau: float) -> float:
        return self.base.truncated_mean(min(self.tau, tau))

    def truncated_second_moment(self, tau: float) -> float:
        return self.base.truncated_second_moment(min(self.tau, tau))


_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")

_ARITY = {"exp": 1, "det": 1, "gamma": 2, "unif": 2}


class _Parser:

    def __init__(self, text: str):
        self._text = text
        self._pos = 0

    def error(self, message: str, position: int | None = None):
        raise ServiceSpecError(
            message,
            spec=self._text,
            position=self._pos if position is None else position,
        )

    def parse(self) -> ServiceDistribution:
        distribution = self._distribution()
        if self._pos != len(self._text):
            self.error("Unexpected trailing input")
        return distribution

    def _peek(self, literal: str) -> bool:
        return self._text.startswith(literal, self._pos)

    def _expect(self, literal: str) -> None:
        if not self._peek(literal):
            self.error(f"Expected '{literal}'")
        self._pos += len(literal)

    def _number(self) -> float:
        match = _NUMBER.match(self._text, self._pos)
        if match is None:
            self.error("Expected a number")
        self._pos = match.end()
        return float(match.group())

    def _pair_follows(self) -> bool:
        # Whether the input continues with ',<number>,<number>'.
        match = re.compile(
            rf",{_NUMBER.pattern},{_NUMBER.pattern}"
        ).match(self._text, self._pos)
        return match is not None

    def _distribution(self) -> ServiceDistribution:
        start = self._pos

        if self._peek("trunc("):
            self._pos += len("trunc(")
            base = self._distribution()
            self._expect(",")
            tau_position = self._pos
            tau = self._number()
            self._expect(")")
            try:
                return Truncated(base, tau)
            except ConfigError as error:
                self.error(str(error), tau_position)

        match = re.compile(r"[a-z]+").match(self._text, self._pos)
        if match is None:
            self.error("Expected a distribution name")
        name = match.group()
        if name not in _ARITY and name != "hyper":
            self.error(f"Unknown distribution '{name}'")
        self._pos = match.end()
        self._expect(":")

        numbers = [self._number()]

        if name == "hyper":
            self._expect(",")
            numbers.append(self._number())
            while self._pair_follows():
                self._expect(",")
                numbers.append(self._number())
                self._expect(",")
                numbers.append(self._number())
        else:
            for _ in range(_ARITY[name] - 1):
                self._expect(",")
                numbers.append(self._number())

        try:
            if name == "exp":
                return Exponential(numbers[0])
            elif name == "det":
                return Deterministic(numbers[0])
            elif name == "gamma":
                return Gamma(numbers[0], numbers[1])
            elif name == "unif":
                return Uniform(numbers[0], numbers[1])
            else:
                return HyperExponential(
                    weights=tuple(numbers[0::2]),
                    rates=tuple(numbers[1::2]),
                )
        except ConfigError as error:
            self.error(str(error), start)

        raise AssertionError("Unreachable")


def parse_service(text: str) -> ServiceDistribution:
    """
    Parse a service distribution spec.

    Grammar (no whitespace):
        exp:<rate> | det:<value> | gamma:<shape>,<rate> |
        unif:<low>,<high> | hyper:<p1>,<rate1>[,<p2>,<rate2>...] |
        trunc(<spec>,<tau>)

    Raises `ServiceSpecError` pointing at the offending position.
    """
    distribution = _Parser(text.strip()).parse()
    logger.debug(f"Parsed service spec '{text}' as {distribution!r}")
    return distribution
