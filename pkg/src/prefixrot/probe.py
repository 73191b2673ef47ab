"""Deterministic, rate-limited probe scheduling over an abstract transport.

A campaign is a permuted schedule of :class:`ProbeSpec` items fed through a
token bucket into a :class:`Transport`; every spec yields exactly one
:class:`Observation`.  Observation logs are JSON-lines (or CSV) with the
columns ``ts, run, target, responder, class``.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import random
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import (
    IO,
    Iterable,
    Iterator,
    NamedTuple,
    Optional,
    Protocol,
    Sequence,
    runtime_checkable,
)

from .addr import format_addr, parse_addr

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 2.0
OBSERVATION_FIELDS = ("ts", "run", "target", "responder", "class")


class ResponseClass(str, enum.Enum):
    AdminProhibited = "AdminProhibited"
    NoRoute = "NoRoute"
    AddrUnreachable = "AddrUnreachable"
    HopLimitExceeded = "HopLimitExceeded"
    EchoReply = "EchoReply"
    Silent = "Silent"


SILENT = ResponseClass.Silent


class ProbeSpec(NamedTuple):
    target: int
    run_id: str
    sequence: int


class Observation(NamedTuple):
    ts: float
    run: str
    target: int
    responder: Optional[int]
    cls: ResponseClass

    def to_json(self) -> str:
        return json.dumps(
            {
                "ts": self.ts,
                "run": self.run,
                "target": format_addr(self.target),
                "responder": None if self.responder is None else format_addr(self.responder),
                "class": self.cls.value,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        responder = d.get("responder")
        klass = ResponseClass(d["class"])
        obs = cls(
            float(d["ts"]),
            str(d["run"]),
            parse_addr(d["target"]),
            parse_addr(responder) if responder else None,
            klass,
        )
        if (obs.responder is None) != (klass is SILENT):
            raise ValueError(f"responder/class mismatch in {d!r}")
        return obs


class TransportError(Exception):
    """A single probe could not be issued or its outcome is unknown."""


@runtime_checkable
class Transport(Protocol):
    """Anything that can answer a probe.

    ``probe`` returns ``(responder, ResponseClass)`` or
    ``(responder, ResponseClass, rtt_seconds)``; it raises
    :class:`TransportError` on failure.  ``concurrent`` declares whether
    calls may overlap.
    """

    concurrent: bool

    def probe(self, target: int) -> tuple: ...


class IndexPermutation:
    """Keyed bijection on ``range(n)`` with O(1) state.

    A few rounds of odd-multiply, add and xorshift form a permutation of a
    2**k domain; values >= n are cycle-walked until they land in range.
    """

    ROUNDS = 3

    def __init__(self, n: int, seed) -> None:
        if n <= 0:
            raise ValueError("permutation domain must be non-empty")
        self.n = n
        self.bits = max(1, (n - 1).bit_length())
        self.mask = (1 << self.bits) - 1
        self.shift = max(1, (self.bits + 1) // 2)
        rng = random.Random(seed)
        self.keys = tuple(
            (rng.getrandbits(self.bits) | 1, rng.getrandbits(self.bits))
            for _ in range(self.ROUNDS)
        )
        modulus = self.mask + 1
        self._inverse_keys = tuple((pow(mul, -1, modulus), add) for mul, add in reversed(self.keys))

    def _mix(self, x: int) -> int:
        mask, shift = self.mask, self.shift
        for mul, add in self.keys:
            x = (x * mul + add) & mask
            x ^= x >> shift
        return x

    def _unmix(self, x: int) -> int:
        # the xorshift is its own inverse because 2 * shift >= bits
        mask, shift = self.mask, self.shift
        for inv, add in self._inverse_keys:
            x ^= x >> shift
            x = ((x - add) * inv) & mask
        return x

    def inverse(self, j: int) -> int:
        """Position ``i`` with ``self(i) == j``."""
        if not 0 <= j < self.n:
            raise IndexError(j)
        x = self._unmix(j)
        while x >= self.n:
            x = self._unmix(x)
        return x

    def __call__(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexError(i)
        x = self._mix(i)
        while x >= self.n:
            x = self._mix(x)
        return x

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[int]:
        n, mask, shift = self.n, self.mask, self.shift
        (m0, a0), (m1, a1), (m2, a2) = self.keys
        for x in range(n):
            while True:
                x = (x * m0 + a0) & mask
                x ^= x >> shift
                x = (x * m1 + a1) & mask
                x ^= x >> shift
                x = (x * m2 + a2) & mask
                x ^= x >> shift
                if x < n:
                    break
            yield x


class Schedule:
    """A seeded permutation of a target sequence, iterable as ProbeSpecs.

    ``targets`` may be any sequence supporting ``len`` and indexing, so
    lazily generated target spaces need not be materialised.
    """

    def __init__(self, targets: Sequence[int], seed, run_id: str = "run0") -> None:
        if len(targets) == 0:
            raise ValueError("cannot schedule an empty target list")
        self.targets = targets
        self.seed = seed
        self.run_id = run_id
        self.permutation = IndexPermutation(len(targets), seed)

    def __len__(self) -> int:
        return len(self.targets)

    def with_run(self, run_id: str) -> "Schedule":
        return Schedule(self.targets, self.seed, run_id)

    def target_order(self) -> Iterator[int]:
        targets = self.targets
        for j in self.permutation:
            yield targets[j]

    def __iter__(self) -> Iterator[ProbeSpec]:
        run_id = self.run_id
        for seq, target in enumerate(self.target_order()):
            yield ProbeSpec(target, run_id, seq)


def permuted_schedule(targets: Sequence[int], seed, run_id: str = "run0") -> Schedule:
    """Every target exactly once, in an order fixed by ``seed``."""
    return Schedule(targets, seed, run_id)


class SimClock:
    """Virtual clock: ``sleep`` advances time instantly."""

    def __init__(self, start: float = 0.0) -> None:
        self.t = start

    def now(self) -> float:
        return self.t

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.t += seconds


class WallClock:
    def __init__(self) -> None:
        self._offset = time.time() - time.monotonic()

    def now(self) -> float:
        return time.monotonic() + self._offset

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class TokenBucket:
    """Token bucket pacing ``rate`` sends/second with one second of burst.

    The bucket starts with a single token so a fresh campaign does not open
    with a full-second burst.
    """

    def __init__(self, rate: float, clock=None, capacity: Optional[float] = None) -> None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)
        self.capacity = float(capacity) if capacity is not None else max(1.0, self.rate)
        self.clock = clock or WallClock()
        self.tokens = 1.0
        self.last = self.clock.now()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Take one token, waiting as needed; returns the send time."""
        with self._lock:
            now = self.clock.now()
            self.tokens = min(self.capacity, self.tokens + (now - self.last) * self.rate)
            self.last = now
            if self.tokens < 1.0:
                wait = (1.0 - self.tokens) / self.rate
                self.clock.sleep(wait)
                now = self.clock.now()
                self.tokens = 1.0
                self.last = now
            self.tokens -= 1.0
            return now


@dataclass
class CampaignStats:
    sent: int = 0
    responses: int = 0
    errors: int = 0
    timeouts: int = 0


def _classify(reply, timeout: float, stats: CampaignStats):
    responder, cls = reply[0], reply[1]
    if len(reply) > 2 and reply[2] is not None and reply[2] > timeout:
        stats.timeouts += 1
        return None, SILENT
    if responder is None or cls is SILENT:
        return None, SILENT
    stats.responses += 1
    return responder, ResponseClass(cls)


def run_campaign(
    schedule: Iterable[ProbeSpec],
    transport: Transport,
    rate: float,
    in_flight: int = 1,
    clock=None,
    timeout: float = DEFAULT_TIMEOUT,
    stats: Optional[CampaignStats] = None,
) -> Iterator[Observation]:
    """Probe every spec in ``schedule`` and yield one Observation each.

    Sends are paced by a :class:`TokenBucket` on ``clock`` (wall time when
    omitted; pass a :class:`SimClock` for simulated time).  Failed probes
    become Silent observations and bump ``stats.errors``.  Up to
    ``in_flight`` probes overlap only if ``transport.concurrent`` is true;
    output order always follows the schedule.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if in_flight < 1:
        raise ValueError("in_flight must be >= 1")
    stats = stats if stats is not None else CampaignStats()
    bucket = TokenBucket(rate, clock)
    if in_flight > 1 and getattr(transport, "concurrent", False):
        yield from _run_concurrent(schedule, transport, bucket, in_flight, timeout, stats)
        return

    probe = transport.probe
    acquire = bucket.acquire
    for target, run_id, _seq in schedule:
        ts = acquire()
        stats.sent += 1
        try:
            reply = probe(target)
        except TransportError as exc:
            log.debug("probe to %s failed: %s", format_addr(target), exc)
            stats.errors += 1
            yield Observation(ts, run_id, target, None, SILENT)
            continue
        responder, cls = _classify(reply, timeout, stats)
        yield Observation(ts, run_id, target, responder, cls)


def _run_concurrent(schedule, transport, bucket, in_flight, timeout, stats):
    pending: deque = deque()

    def finish(item) -> Observation:
        ts, spec, fut = item
        try:
            responder, cls = _classify(fut.result(), timeout, stats)
        except TransportError:
            stats.errors += 1
            responder, cls = None, SILENT
        return Observation(ts, spec.run_id, spec.target, responder, cls)

    with ThreadPoolExecutor(max_workers=in_flight) as pool:
        for spec in schedule:
            if len(pending) >= in_flight:
                yield finish(pending.popleft())
            ts = bucket.acquire()
            stats.sent += 1
            pending.append((ts, spec, pool.submit(transport.probe, spec.target)))
        while pending:
            yield finish(pending.popleft())


def expected_probes_to_hit(pool_len: int, alloc_len: int) -> float:
    """Expected probes to reach one CPE placed uniformly in a pool.

    With ``k = alloc_len - pool_len`` candidate-block bits this is
    ``2**(k-1)``; a pool that is itself one allocation needs one probe.
    """
    if alloc_len > 64:
        raise ValueError("allocations are at most /64")
    if alloc_len < pool_len:
        raise ValueError("allocation larger than pool")
    k = alloc_len - pool_len
    return 1.0 if k == 0 else float(2 ** (k - 1))


class ReplayTransport:
    """Answers probes from a recorded observation log.

    With ``run`` given (or selected later via :meth:`use_run`) only that
    run's answers are used; otherwise later runs override earlier ones.
    Targets missing from the log answer Silent and are counted in
    ``misses``.
    """

    concurrent = True

    def __init__(self, observations: Iterable[Observation], run: Optional[str] = None) -> None:
        self.by_run: dict[str, dict[int, tuple]] = {}
        self.merged: dict[int, tuple] = {}
        for obs in observations:
            answer = (obs.responder, obs.cls)
            self.by_run.setdefault(obs.run, {})[obs.target] = answer
            self.merged[obs.target] = answer
        self.answers = self.merged
        self.misses = 0
        if run is not None:
            self.use_run(run)

    def use_run(self, run: str) -> None:
        """Answer from ``run`` if the log holds it, else from every run."""
        self.answers = self.by_run.get(run, self.merged)

    def probe(self, target: int) -> tuple:
        answer = self.answers.get(target)
        if answer is None:
            self.misses += 1
            return (None, SILENT)
        return answer


class Icmpv6RawTransport:
    """Live ICMPv6 Echo Request prober; interface only, deliberately absent.

    A working implementation would open a raw ``AF_INET6``/``IPPROTO_ICMPV6``
    socket, send Echo Requests, and map Destination Unreachable codes 1/0/3
    and Time Exceeded to :class:`ResponseClass`, reporting the round-trip
    time as the third reply element.  It is not shipped.
    """

    concurrent = True

    def __init__(self, *args, **kwargs) -> None:
        raise NotImplementedError("live Internet probing is not provided by this package")

    def probe(self, target: int) -> tuple:  # pragma: no cover
        raise NotImplementedError


def write_jsonl(observations: Iterable[Observation], fh: IO[str]) -> int:
    n = 0
    for obs in observations:
        fh.write(obs.to_json())
        fh.write("\n")
        n += 1
    return n


def read_jsonl(fh: IO[str]) -> Iterator[Observation]:
    for line in fh:
        line = line.strip()
        if line:
            yield Observation.from_dict(json.loads(line))


def write_csv(observations: Iterable[Observation], fh: IO[str]) -> int:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(OBSERVATION_FIELDS)
    n = 0
    for obs in observations:
        writer.writerow(
            [
                repr(obs.ts),
                obs.run,
                format_addr(obs.target),
                "" if obs.responder is None else format_addr(obs.responder),
                obs.cls.value,
            ]
        )
        n += 1
    return n


def read_csv(fh: IO[str]) -> Iterator[Observation]:
    for row in csv.DictReader(fh):
        yield Observation.from_dict(row)


def load_log(path) -> list[Observation]:
    with open(path) as fh:
        if str(path).endswith(".csv"):
            return list(read_csv(fh))
        return list(read_jsonl(fh))


def save_log(observations: Iterable[Observation], path) -> int:
    with open(path, "w", newline="") as fh:
        if str(path).endswith(".csv"):
            return write_csv(observations, fh)
        return write_jsonl(observations, fh)
