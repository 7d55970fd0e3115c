"""
Work-conserving single-server scheduling disciplines.

A scheduler only tracks the customers currently present. The event
loop in `reboot.decay.simulator` asks it for the time until its next
internal event (a departure, or for FB a cohort merge), lets it
`advance()` by less than that when an arrival comes first, and
otherwise `fire()`s the event, which returns the ids that departed.
Events are fired by setting state to exact target values, never by
integrating, so ties (equal ages, equal virtual finish times) stay
exact ties.
"""

import heapq
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Literal

Discipline = Literal["fb", "fifo", "lifo", "ps"]

DISCIPLINES: tuple[Discipline, ...] = ("fb", "fifo", "lifo", "ps")


class Scheduler(ABC):

    @abstractmethod
    def __len__(self) -> int:
        ...

    @abstractmethod
    def enqueue(self, customer: int, requirement: float) -> None:
        ...

    @abstractmethod
    def time_to_next_event(self) -> float:
        """Time until the next internal event, `math.inf` when empty."""

    @abstractmethod
    def advance(self, dt: float) -> None:
        """Serves for `dt`, which must not exceed `time_to_next_event()`."""

    @abstractmethod
    def fire(self) -> list[int]:
        """Advances to the next internal event; returns departed ids."""

    @abstractmethod
    def serving(self) -> set[int]:
        """Ids currently receiving a positive service rate."""

    @abstractmethod
    def attained(self) -> dict[int, float]:
        """Attained service of every present customer."""

    @abstractmethod
    def copy(self) -> 'Scheduler':
        ...


@dataclass
class _Cohort:
    # Attained service shared by every member.
    age: float
    # Heap of (requirement, id).
    members: list[tuple[float, int]] = field(default_factory=list)


class ForegroundBackground(Scheduler):
    """
    FB (least attained service): the customers with the smallest
    attained service share the server equally.

    Customers with equal attained service form a cohort that ages
    jointly. Cohorts are kept on a stack, youngest on top, and only the
    top cohort is served; when it catches up with the one below the two
    merge.
    """

    def __init__(self):
        self._cohorts: list[_Cohort] = []
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def enqueue(self, customer: int, requirement: float) -> None:
        if self._cohorts and self._cohorts[-1].age == 0.0:
            heapq.heappush(self._cohorts[-1].members, (requirement, customer))
        else:
            self._cohorts.append(_Cohort(0.0, [(requirement, customer)]))
        self._size += 1

    def _target_age(self, top: _Cohort) -> float:
        target = top.members[0][0]
        if len(self._cohorts) > 1:
            target = min(target, self._cohorts[-2].age)
        return target

    def time_to_next_event(self) -> float:
        if not self._cohorts:
            return float("inf")
        top = self._cohorts[-1]
        return max(len(top.members) * (self._target_age(top) - top.age), 0.0)

    def advance(self, dt: float) -> None:
        if self._cohorts and dt > 0:
            top = self._cohorts[-1]
            top.age += dt / len(top.members)

    def fire(self) -> list[int]:
        top = self._cohorts[-1]
        top.age = self._target_age(top)

        departed = []
        while top.members and top.members[0][0] <= top.age:
            departed.append(heapq.heappop(top.members)[1])
        self._size -= len(departed)

        if not top.members:
            self._cohorts.pop()
        elif len(self._cohorts) > 1 and self._cohorts[-2].age <= top.age:
            self._cohorts.pop()
            below = self._cohorts[-1]
            below.members.extend(top.members)
            heapq.heapify(below.members)

        return departed

    def youngest_age(self) -> float:
        """Smallest attained service present, `math.inf` when empty."""
        if not self._cohorts:
            return float("inf")
        return self._cohorts[-1].age

    def serving(self) -> set[int]:
        if not self._cohorts:
            return set()
        return {customer for _, customer in self._cohorts[-1].members}

    def attained(self) -> dict[int, float]:
        return {
            customer: cohort.age
            for cohort in self._cohorts
            for _, customer in cohort.members
        }

    def copy(self) -> 'ForegroundBackground':
        clone = ForegroundBackground()
        clone._cohorts = [
            _Cohort(cohort.age, list(cohort.members))
            for cohort in self._cohorts
        ]
        clone._size = self._size
        return clone


class ProcessorSharing(Scheduler):
    """
    PS: every present customer is served at rate 1/n.

    Tracks the virtual time v (service received by each customer present
    throughout), which grows at rate 1/n; a customer arriving at virtual
    time v_a with requirement B leaves when v reaches v_a + B.
    """

    def __init__(self):
        self._virtual_time = 0.0
        # Heap of (virtual finish time, id).
        self._finishes: list[tuple[float, int]] = []
        self._entered: dict[int, float] = {}

    def __len__(self) -> int:
        return len(self._finishes)

    def enqueue(self, customer: int, requirement: float) -> None:
        heapq.heappush(
            self._finishes,
            (self._virtual_time + requirement, customer),
        )
        self._entered[customer] = self._virtual_time

    def time_to_next_event(self) -> float:
        if not self._finishes:
            return float("inf")
        return max(
            len(self._finishes) * (self._finishes[0][0] - self._virtual_time),
            0.0,
        )

    def advance(self, dt: float) -> None:
        if self._finishes and dt > 0:
            self._virtual_time += dt / len(self._finishes)

    def fire(self) -> list[int]:
        self._virtual_time = self._finishes[0][0]
        departed = []
        while self._finishes and self._finishes[0][0] <= self._virtual_time:
            _, customer = heapq.heappop(self._finishes)
            del self._entered[customer]
            departed.append(customer)
        if not self._finishes:
            # Restart the clock each busy period.
            self._virtual_time = 0.0
        return departed

    def serving(self) -> set[int]:
        return set(self._entered)

    def attained(self) -> dict[int, float]:
        return {
            customer: self._virtual_time - entered
            for customer, entered in self._entered.items()
        }

    def copy(self) -> 'ProcessorSharing':
        clone = ProcessorSharing()
        clone._virtual_time = self._virtual_time
        clone._finishes = list(self._finishes)
        clone._entered = dict(self._entered)
        return clone


@dataclass
class _Job:
    customer: int
    requirement: float
    remaining: float


class FirstInFirstOut(Scheduler):
    """FIFO, nonpreemptive: the oldest arrival is served alone."""

    def __init__(self):
        self._jobs: deque[_Job] = deque()

    def __len__(self) -> int:
        return len(self._jobs)

    def enqueue(self, customer: int, requirement: float) -> None:
        self._jobs.append(_Job(customer, requirement, requirement))

    def time_to_next_event(self) -> float:
        if not self._jobs:
            return float("inf")
        return max(self._jobs[0].remaining, 0.0)

    def advance(self, dt: float) -> None:
        if self._jobs:
            self._jobs[0].remaining -= dt

    def fire(self) -> list[int]:
        return [self._jobs.popleft().customer]

    def serving(self) -> set[int]:
        return {self._jobs[0].customer} if self._jobs else set()

    def attained(self) -> dict[int, float]:
        return {
            job.customer: job.requirement - job.remaining
            for job in self._jobs
        }

    def copy(self) -> 'FirstInFirstOut':
        clone = FirstInFirstOut()
        clone._jobs = deque(
            _Job(job.customer, job.requirement, job.remaining)
            for job in self._jobs
        )
        return clone


class PreemptiveLastInFirstOut(Scheduler):
    """Preemptive LIFO: the most recent arrival is served alone."""

    def __init__(self):
        self._stack: list[_Job] = []

    def __len__(self) -> int:
        return len(self._stack)

    def enqueue(self, customer: int, requirement: float) -> None:
        self._stack.append(_Job(customer, requirement, requirement))

    def time_to_next_event(self) -> float:
        if not self._stack:
            return float("inf")
        return max(self._stack[-1].remaining, 0.0)

    def advance(self, dt: float) -> None:
        if self._stack:
            self._stack[-1].remaining -= dt

    def fire(self) -> list[int]:
        return [self._stack.pop().customer]

    def serving(self) -> set[int]:
        return {self._stack[-1].customer} if self._stack else set()

    def attained(self) -> dict[int, float]:
        return {
            job.customer: job.requirement - job.remaining
            for job in self._stack
        }

    def copy(self) -> 'PreemptiveLastInFirstOut':
        clone = PreemptiveLastInFirstOut()
        clone._stack = [
            _Job(job.customer, job.requirement, job.remaining)
            for job in self._stack
        ]
        return clone


def make_scheduler(discipline: Discipline) -> Scheduler:
    if discipline == "fb":
        return ForegroundBackground()
    elif discipline == "fifo":
        return FirstInFirstOut()
    elif discipline == "lifo":
        return PreemptiveLastInFirstOut()
    elif discipline == "ps":
        return ProcessorSharing()
    raise ValueError(
        f"Unknown discipline '{discipline}', expected one of "
        f"{', '.join(DISCIPLINES)}"
    )
