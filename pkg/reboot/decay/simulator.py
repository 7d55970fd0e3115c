"""
Event-driven simulation of the M/G/1 queue.

All randomness comes from `numpy` generators seeded through
`SeedSequence`, with a separate stream per source (arrivals, service
requirements, ...), so equal seeds give identical samples and runs of
different disciplines with the same seed see exactly the same arrival
and service trace.
"""

import math
import numpy as np
from dataclasses import dataclass
from log.log import get_logger
from reboot.decay.analytic import QueueModel
from reboot.decay.distributions import MIN_ACCEPTANCE
from reboot.decay.errors import (
    ConfigError,
    InstabilityDetected,
    PreconditionViolated,
    RejectionTooRare,
)
from reboot.decay.schedulers import (
    Discipline,
    ForegroundBackground,
    Scheduler,
    make_scheduler,
)
from typing import Callable, Literal, Optional

logger = get_logger(__name__)

Seed = int | np.random.SeedSequence

# Abort once more customers than this are present at once.
DEFAULT_BACKLOG_GUARD = 10**6

DEFAULT_WARMUP = 10_000

# Keep every this many-th observation of a single sample path, which
# makes the kept samples close to independent.
DEFAULT_STRIDE = 20

_BLOCK = 4096

# Id of the tagged customer in `conditional_sojourn_fb()`.
_TAG = -1

# Called at every event epoch with (time, attained service per
# customer, customers being served).
Observer = Callable[[float, dict[int, float], set[int]], None]


def spawn(seed: Seed, count: int) -> list[np.random.SeedSequence]:
    """
    `count` independent child seeds of `seed`. Always the same children
    for the same seed: a `SeedSequence` argument is copied rather than
    advanced.
    """
    if isinstance(seed, np.random.SeedSequence):
        sequence = np.random.SeedSequence(
            seed.entropy,
            spawn_key=seed.spawn_key,
            pool_size=seed.pool_size,
        )
    else:
        sequence = np.random.SeedSequence(seed)
    return sequence.spawn(count)


def generators(seed: Seed, count: int) -> list[np.random.Generator]:
    """`count` independent generators derived from `seed`."""
    return [
        np.random.Generator(np.random.PCG64DXSM(child))
        for child in spawn(seed, count)
    ]


def _entropy(seed: Seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.entropy)
    return seed


class _Stream:
    """Draws one value at a time from blocks produced by `draw`."""

    def __init__(self, draw: Callable[[int], np.ndarray]):
        self._draw = draw
        self._block = np.empty(0)
        self._index = 0

    def next(self) -> float:
        if self._index == len(self._block):
            self._block = self._draw(_BLOCK)
            self._index = 0
        value = self._block[self._index]
        self._index += 1
        return float(value)


def _interarrivals(model: QueueModel, rng: np.random.Generator) -> _Stream:
    scale = 1.0 / model.arrival_rate
    return _Stream(lambda size: rng.exponential(scale, size))


def _services(model: QueueModel, rng: np.random.Generator) -> _Stream:
    return _Stream(lambda size: model.service.sample_array(rng, size))


@dataclass(kw_only=True, frozen=True)
class _Event:
    time: float
    arrival: Optional[int] = None
    requirement: float = 0.0
    departed: tuple[int, ...] = ()


class _Queue:
    """A scheduler driven by Poisson arrivals."""

    def __init__(
        self,
        scheduler: Scheduler,
        *,
        interarrivals: _Stream,
        services: _Stream,
        time: float = 0.0,
        first_id: int = 0,
        backlog_guard: int = DEFAULT_BACKLOG_GUARD,
    ):
        self.scheduler = scheduler
        self.time = time
        self.arrived = first_id
        self.max_backlog = len(scheduler)
        self._interarrivals = interarrivals
        self._services = services
        self._next_arrival = time + interarrivals.next()
        self._backlog_guard = backlog_guard

    @property
    def busy(self) -> bool:
        return len(self.scheduler) > 0

    def next_epoch(self) -> float:
        return min(
            self._next_arrival,
            self.time + self.scheduler.time_to_next_event(),
        )

    def advance_to(self, time: float) -> None:
        """Serves until `time`, which must not pass `next_epoch()`."""
        self.scheduler.advance(time - self.time)
        self.time = time

    def step(self) -> _Event:
        dt = self.scheduler.time_to_next_event()

        if self._next_arrival - self.time < dt:
            self.scheduler.advance(self._next_arrival - self.time)
            self.time = self._next_arrival
            customer = self.arrived
            self.arrived += 1
            requirement = self._services.next()
            self.scheduler.enqueue(customer, requirement)
            self._next_arrival = self.time + self._interarrivals.next()

            backlog = len(self.scheduler)
            if backlog > self.max_backlog:
                self.max_backlog = backlog
                if backlog > self._backlog_guard:
                    raise InstabilityDetected(
                        f"{backlog} customers present at time "
                        f"{self.time:.6g}, above the guard of "
                        f"{self._backlog_guard}"
                    )

            return _Event(
                time=self.time,
                arrival=customer,
                requirement=requirement,
            )

        self.time += dt
        return _Event(time=self.time, departed=tuple(self.scheduler.fire()))


@dataclass(kw_only=True, frozen=True, eq=False)
class SimulationRun:
    seed: int
    model: QueueModel
    discipline: Discipline
    warmup: int
    # Per recorded customer, in arrival order.
    arrival_times: np.ndarray
    service_times: np.ndarray
    departure_times: np.ndarray
    # Per recorded busy period.
    busy_period_starts: np.ndarray
    busy_period_ends: np.ndarray
    customers_served: int
    max_backlog: int

    @property
    def sojourns(self) -> np.ndarray:
        return self.departure_times - self.arrival_times

    @property
    def busy_periods(self) -> np.ndarray:
        return self.busy_period_ends - self.busy_period_starts

    @property
    def busy_period_count(self) -> int:
        return len(self.busy_period_starts)


def run_queue(
    model: QueueModel,
    discipline: Discipline,
    n_customers: int,
    warmup: int = DEFAULT_WARMUP,
    seed: Seed = 0,
    *,
    observer: Optional[Observer] = None,
    backlog_guard: int = DEFAULT_BACKLOG_GUARD,
) -> SimulationRun:
    """
    Simulates `n_customers` arrivals to an initially empty queue.

    Statistics start with the first busy period begun by customer
    `warmup` or later. Customers with smaller ids than `n_customers` are
    recorded; arrivals continue until the busy period holding the last
    of them is over.
    """
    if n_customers < 1:
        raise ConfigError(f"Need at least one customer, got {n_customers}")
    if not 0 <= warmup <= n_customers:
        raise ConfigError(
            f"Warmup must be in [0, {n_customers}], got {warmup}"
        )

    arrival_rng, service_rng = generators(seed, 2)

    queue = _Queue(
        make_scheduler(discipline),
        interarrivals=_interarrivals(model, arrival_rng),
        services=_services(model, service_rng),
        backlog_guard=backlog_guard,
    )

    arrival_times = np.full(n_customers, math.nan)
    service_times = np.full(n_customers, math.nan)
    departure_times = np.full(n_customers, math.nan)

    first_recorded: Optional[int] = None
    starts: list[float] = []
    ends: list[float] = []
    served = 0

    while queue.arrived < n_customers or queue.busy:
        idle = not queue.busy
        event = queue.step()

        if event.arrival is not None:
            customer = event.arrival
            if idle and first_recorded is None and customer >= warmup:
                first_recorded = customer
                logger.debug(
                    f"Statistics start with customer {customer} at "
                    f"time {event.time:.6g}"
                )
            if idle and first_recorded is not None:
                starts.append(event.time)
            if customer < n_customers:
                arrival_times[customer] = event.time
                service_times[customer] = event.requirement
        else:
            for customer in event.departed:
                if customer < n_customers:
                    departure_times[customer] = event.time
                if first_recorded is not None:
                    served += 1
            if not queue.busy and first_recorded is not None:
                ends.append(event.time)

        if observer is not None:
            observer(
                event.time,
                queue.scheduler.attained(),
                queue.scheduler.serving(),
            )

    begin = n_customers if first_recorded is None else first_recorded

    logger.debug(
        f"Simulated {queue.arrived} arrivals under {discipline}; "
        f"{len(starts)} busy periods recorded, max backlog "
        f"{queue.max_backlog}"
    )

    return SimulationRun(
        seed=_entropy(seed),
        model=model,
        discipline=discipline,
        warmup=warmup,
        arrival_times=arrival_times[begin:],
        service_times=service_times[begin:],
        departure_times=departure_times[begin:],
        busy_period_starts=np.asarray(starts),
        busy_period_ends=np.asarray(ends),
        customers_served=served,
        max_backlog=queue.max_backlog,
    )


@dataclass(kw_only=True, frozen=True)
class FirstService:
    """How the service time of the customer opening a busy period is drawn."""

    kind: Literal["generic", "exactly", "at_least"] = "generic"
    tau: Optional[float] = None

    def __post_init__(self):
        if self.kind == "generic":
            if self.tau is not None:
                raise ConfigError("A generic first service takes no tau")
        elif self.tau is None or not self.tau > 0:
            raise ConfigError(
                f"First service '{self.kind}' needs tau > 0, got {self.tau}"
            )

    @classmethod
    def generic(cls) -> 'FirstService':
        return cls()

    @classmethod
    def exactly(cls, tau: float) -> 'FirstService':
        return cls(kind="exactly", tau=tau)

    @classmethod
    def at_least(cls, tau: float) -> 'FirstService':
        return cls(kind="at_least", tau=tau)


def _clear(
    work: float,
    interarrivals: _Stream,
    services: _Stream,
) -> float:
    """
    Time until `work` present at time 0 is cleared, with Poisson
    arrivals adding their service requirements meanwhile.
    """
    end = work
    t = interarrivals.next()
    while t < end:
        end += services.next()
        t += interarrivals.next()
    return end


def sample_busy_periods(
    model: QueueModel,
    n: int,
    seed: Seed = 0,
    first_service: FirstService = FirstService(),
) -> np.ndarray:
    """
    `n` iid busy-period lengths. `FirstService.exactly(tau)` opens each
    with a service of exactly tau, `FirstService.at_least(tau)` with a
    service conditioned to be at least tau.
    """
    if n < 1:
        raise ConfigError(f"Need at least one busy period, got {n}")

    arrival_rng, service_rng, first_rng = generators(seed, 3)
    interarrivals = _interarrivals(model, arrival_rng)
    services = _services(model, service_rng)

    if first_service.kind == "generic":
        firsts = services
    elif first_service.kind == "exactly":
        tau = first_service.tau
        firsts = _Stream(lambda size: np.full(size, tau))
    else:
        tau = first_service.tau
        acceptance = model.service.tail(tau)
        if acceptance < MIN_ACCEPTANCE:
            raise RejectionTooRare(
                f"P(B >= {tau!r}) = {acceptance:.3g} for "
                f"'{model.service.spec}' is too small to condition on"
            )
        candidates = _services(model, first_rng)

        def draw(size: int) -> np.ndarray:
            accepted: list[float] = []
            while len(accepted) < size:
                value = candidates.next()
                if value >= tau:
                    accepted.append(value)
            return np.asarray(accepted)

        firsts = _Stream(draw)

    lengths = np.empty(n)
    for i in range(n):
        lengths[i] = _clear(firsts.next(), interarrivals, services)
    return lengths


def length_biased_residuals(
    lengths: np.ndarray,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Residual-life draws from a pool of busy-period lengths: pick a
    length with probability proportional to it, keep a uniform fraction.
    """
    lengths = np.asarray(lengths, dtype=float)
    if len(lengths) == 0 or not lengths.sum() > 0:
        raise PreconditionViolated("Need a nonempty pool of positive lengths")
    picked = rng.choice(lengths, size=n, p=lengths / lengths.sum())
    return rng.random(n) * picked


def sample_residual_busy(
    model: QueueModel,
    n: int,
    seed: Seed = 0,
    *,
    method: Literal["workload", "length_biased"] = "workload",
    pool: Optional[int] = None,
) -> np.ndarray:
    """
    `n` draws of the residual busy period L~, whose survival function is
    (EL)^{-1} int_x^inf P(L > y) dy.

    The default "workload" method observes a busy system at a Poisson
    epoch: the workload found there is a geometric sum (parameter rho,
    at least one term) of equilibrium service draws, and L~ is the time
    to clear it. "length_biased" resamples a pool of simulated busy
    periods instead.
    """
    if n < 1:
        raise ConfigError(f"Need at least one sample, got {n}")

    if method == "length_biased":
        pool_rng, residual_rng = generators(seed, 2)
        lengths = sample_busy_periods(
            model,
            pool or max(n, 10_000),
            seed=int(pool_rng.integers(2**63)),
        )
        return length_biased_residuals(lengths, n, residual_rng)

    if method != "workload":
        raise ConfigError(f"Unknown residual method '{method}'")

    arrival_rng, service_rng, count_rng, equilibrium_rng = generators(seed, 4)
    interarrivals = _interarrivals(model, arrival_rng)
    services = _services(model, service_rng)

    counts = count_rng.geometric(1 - model.rho, size=n)
    equilibrium = model.service.sample_equilibrium_array(
        equilibrium_rng,
        int(counts.sum()),
    )
    workloads = np.add.reduceat(
        equilibrium,
        np.concatenate(([0], np.cumsum(counts)[:-1])),
    )

    residuals = np.empty(n)
    for i, work in enumerate(workloads):
        residuals[i] = _clear(float(work), interarrivals, services)
    return residuals


@dataclass(kw_only=True, frozen=True, eq=False)
class TimeToEmpty:
    # Time from an arrival until the system first empties.
    samples: np.ndarray
    # Fraction of those arrivals that found the system busy.
    busy_fraction: float


def sample_time_to_empty(
    model: QueueModel,
    n: int,
    seed: Seed = 0,
    *,
    stride: int = DEFAULT_STRIDE,
    warmup: int = DEFAULT_WARMUP,
) -> TimeToEmpty:
    """
    D, the time from a Poisson arrival until the system is first empty.

    D does not depend on the discipline, so it is read off the workload
    process (Lindley's recursion) of a single long run, keeping every
    `stride`-th arrival after `warmup`.
    """
    if n < 1:
        raise ConfigError(f"Need at least one sample, got {n}")
    if stride < 1:
        raise ConfigError(f"Stride must be >= 1, got {stride}")

    arrival_rng, service_rng = generators(seed, 2)
    interarrivals = _interarrivals(model, arrival_rng)
    services = _services(model, service_rng)

    samples = np.empty(n)
    found_busy = 0
    kept = 0
    # (Sample index, arrival epoch) of kept arrivals whose busy period
    # is not over yet.
    pending: list[tuple[int, float]] = []

    t = 0.0
    work = 0.0  # Right after the latest arrival.
    k = 0
    while kept < n or pending:
        gap = interarrivals.next()
        before = work - gap
        if before <= 0.0:
            end = t + work
            for index, arrived in pending:
                samples[index] = end - arrived
            pending = []
            before = 0.0
        t += gap
        work = before + services.next()

        if kept < n and k >= warmup and (k - warmup) % stride == 0:
            if before > 0.0:
                found_busy += 1
            pending.append((kept, t))
            kept += 1
        k += 1

    return TimeToEmpty(samples=samples, busy_fraction=found_busy / n)


@dataclass(kw_only=True, frozen=True, eq=False)
class ConditionalSojourns:
    sojourns: np.ndarray
    # Sizes of the tagged customers.
    sizes: np.ndarray
    # Whether each tag found a customer younger than its size, i.e.,
    # found its tau-queue busy.
    found_busy: np.ndarray


def conditional_sojourn_fb(
    model: QueueModel,
    tau: Optional[float],
    n: int,
    seed: Seed = 0,
    *,
    warmup: int = DEFAULT_WARMUP,
    stride: int = DEFAULT_STRIDE,
    backlog_guard: int = DEFAULT_BACKLOG_GUARD,
) -> ConditionalSojourns:
    """
    Sojourn times V(tau) of tagged customers of size `tau` arriving to
    the stationary FB queue.

    A stationary FB queue runs undisturbed; at Poisson epochs (rate
    lambda / `stride`) a private copy of its state receives the tagged
    customer and is simulated with fresh arrivals until the tag leaves.
    Each sample thus sees the stationary state (PASTA) and samples are
    nearly independent. With `tau=None` each tag's size is drawn from B.
    """
    if n < 1:
        raise ConfigError(f"Need at least one sample, got {n}")
    if tau is not None and not model.service.tail(tau) > 0:
        raise PreconditionViolated(
            f"V(tau) needs P(B >= tau) > 0, got tau = {tau!r} for "
            f"'{model.service.spec}'"
        )

    (
        arrival_rng,
        service_rng,
        inspection_rng,
        size_rng,
        side_arrival_rng,
        side_service_rng,
    ) = generators(seed, 6)

    main = _Queue(
        ForegroundBackground(),
        interarrivals=_interarrivals(model, arrival_rng),
        services=_services(model, service_rng),
        backlog_guard=backlog_guard,
    )
    inspection_scale = stride / model.arrival_rate
    inspections = _Stream(
        lambda size: inspection_rng.exponential(inspection_scale, size)
    )
    sizes_stream = _services(model, size_rng)
    side_interarrivals = _interarrivals(model, side_arrival_rng)
    side_services = _services(model, side_service_rng)

    while main.arrived < warmup:
        main.step()

    sojourns = np.empty(n)
    sizes = np.empty(n)
    found_busy = np.zeros(n, dtype=bool)

    inspect_at = main.time + inspections.next()
    for i in range(n):
        while main.next_epoch() <= inspect_at:
            main.step()
        main.advance_to(inspect_at)

        size = sizes_stream.next() if tau is None else tau
        scheduler = main.scheduler
        assert isinstance(scheduler, ForegroundBackground)
        found_busy[i] = scheduler.youngest_age() < size

        side_scheduler = scheduler.copy()
        side_scheduler.enqueue(_TAG, size)
        side = _Queue(
            side_scheduler,
            interarrivals=side_interarrivals,
            services=side_services,
            time=inspect_at,
            first_id=main.arrived,
            backlog_guard=backlog_guard,
        )
        while True:
            event = side.step()
            if _TAG in event.departed:
                break

        sojourns[i] = side.time - inspect_at
        sizes[i] = size
        inspect_at += inspections.next()

    logger.debug(
        f"Collected {n} tagged FB sojourns; fraction finding the "
        f"tau-queue busy {found_busy.mean():.4f}"
    )

    return ConditionalSojourns(
        sojourns=sojourns,
        sizes=sizes,
        found_busy=found_busy,
    )
