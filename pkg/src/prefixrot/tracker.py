"""Targeted tracking of EUI-64 IIDs across prefix rotations.

A plan sends one probe into every allocation-sized block of the inferred
rotation pool, in a seeded random order, and stops as soon as the target
IID answers.  Days on which the IID is not found are charged the full
budget.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .addr import LOW64_MASK, Ipv6Prefix, PrefixToAsTable, format_addr, format_iid
from .inference import AllocationInference, PoolInference
from .probe import CampaignStats, SimClock, permuted_schedule, run_campaign

DEFAULT_STOP_AFTER_DAYS_UNSEEN = 7
M64 = (1 << 64) - 1


class MissingInference(LookupError):
    pass


@dataclass(frozen=True)
class TrackingPlan:
    target_iid: int
    pool: Ipv6Prefix
    alloc_len: int
    stop_after_days_unseen: int = DEFAULT_STOP_AFTER_DAYS_UNSEEN

    def __post_init__(self) -> None:
        if not self.pool.length <= self.alloc_len <= 64:
            raise ValueError(f"/{self.alloc_len} allocations cannot tile {self.pool}")

    @property
    def daily_budget(self) -> int:
        return 1 << (self.alloc_len - self.pool.length)

    def to_dict(self) -> dict:
        return {
            "iid": format_iid(self.target_iid),
            "pool": str(self.pool),
            "alloc_len": self.alloc_len,
            "daily_budget": self.daily_budget,
            "stop_after_days_unseen": self.stop_after_days_unseen,
        }


def make_plan(
    iid: int,
    alloc_inference: Optional[AllocationInference],
    pool_inference: Optional[PoolInference],
    last_seen: int,
    stop_after_days_unseen: int = DEFAULT_STOP_AFTER_DAYS_UNSEEN,
) -> TrackingPlan:
    """Plan daily probing for ``iid`` from its AS's inferences.

    The pool is the inferred pool length around ``last_seen`` (the IID's
    most recent WAN address).  A pool narrower than one allocation is
    widened to the allocation.
    """
    if alloc_inference is None or alloc_inference.median_alloc_len is None:
        raise MissingInference("no allocation-size inference for this AS; run inference first")
    if pool_inference is None or pool_inference.median_pool_len is None:
        raise MissingInference("no rotation-pool inference for this AS; run inference first")
    alloc_len = alloc_inference.median_alloc_len
    pool_len = min(pool_inference.median_pool_len, alloc_len)
    return TrackingPlan(iid, Ipv6Prefix.of(last_seen, pool_len), alloc_len, stop_after_days_unseen)


class BlockTargets(Sequence[int]):
    """One pseudo-random address inside each allocation block of a plan."""

    def __init__(self, plan: TrackingPlan, salt: int) -> None:
        self.plan = plan
        self.shift = 128 - plan.alloc_len
        self.base_block = plan.pool.base >> self.shift
        self.host_mask = (1 << self.shift) - 1
        self.salt = salt & M64

    def __len__(self) -> int:
        return self.plan.daily_budget

    def __getitem__(self, i):  # type: ignore[override]
        if not 0 <= i < len(self):
            raise IndexError(i)
        hi = _splitmix(self.salt ^ (2 * i))
        lo = _splitmix(self.salt ^ (2 * i + 1))
        return ((self.base_block + i) << self.shift) | (((hi << 64) | lo) & self.host_mask)

    def block_of(self, addr: int) -> int:
        return (addr >> self.shift) - self.base_block


def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & M64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class DayRecord:
    iid: int
    day: int
    found: bool
    probes: int
    responder: Optional[int] = None
    errors: int = 0

    @property
    def prefix64(self) -> Optional[Ipv6Prefix]:
        return None if self.responder is None else Ipv6Prefix.of(self.responder, 64)

    def to_dict(self) -> dict:
        return {
            "iid": format_iid(self.iid),
            "day": self.day,
            "found": self.found,
            "probes": self.probes,
            "prefix": None if self.responder is None else str(self.prefix64),
            "responder": None if self.responder is None else format_addr(self.responder),
            "errors": self.errors,
        }


def _schedule_for(plan: TrackingPlan, seed):
    key = f"{seed}:{plan.target_iid:x}:{plan.pool}:{plan.alloc_len}"
    targets = BlockTargets(plan, random.Random(key).getrandbits(64))
    run_id = f"track-{format_iid(plan.target_iid)}"
    return permuted_schedule(targets, key, run_id), targets


def track_day(
    plan: TrackingPlan,
    transport,
    seed,
    day: int = 0,
    rate: float = 10_000.0,
    clock=None,
) -> DayRecord:
    """Sweep the plan's blocks in permuted order until the IID answers."""
    schedule, _ = _schedule_for(plan, seed)
    stats = CampaignStats()
    probes = 0
    for obs in run_campaign(schedule, transport, rate, clock=clock or SimClock(day * 86400.0), stats=stats):
        probes += 1
        if obs.responder is not None and (obs.responder & LOW64_MASK) == plan.target_iid:
            return DayRecord(plan.target_iid, day, True, probes, obs.responder, stats.errors)
    return DayRecord(plan.target_iid, day, False, plan.daily_budget, None, stats.errors)


def block_position(plan: TrackingPlan, seed, block: int) -> int:
    """Zero-based position at which ``block`` is probed by :func:`track_day`."""
    schedule, _ = _schedule_for(plan, seed)
    try:
        return schedule.permutation.inverse(block)
    except IndexError:
        raise ValueError(f"block {block} outside plan") from None


def track(
    plans: Iterable[TrackingPlan],
    transport,
    days: int,
    seed,
    advance: Optional[Callable[[], None]] = None,
    first_day: int = 0,
    rate: float = 10_000.0,
) -> list[DayRecord]:
    """Track every plan for ``days`` days, calling ``advance`` between days.

    A target unseen for ``stop_after_days_unseen`` consecutive days is
    dropped from further probing.
    """
    plans = list(plans)
    unseen = {p.target_iid: 0 for p in plans}
    records: list[DayRecord] = []
    for d in range(days):
        if d and advance is not None:
            advance()
        for plan in plans:
            if unseen[plan.target_iid] >= plan.stop_after_days_unseen:
                continue
            rec = track_day(plan, transport, seed, first_day + d, rate)
            unseen[plan.target_iid] = 0 if rec.found else unseen[plan.target_iid] + 1
            records.append(rec)
    return records


@dataclass
class TargetSummary:
    iid: int
    days: int
    days_found: int
    mean_probes: float
    stddev_probes: float
    mean_probes_hits: Optional[float]
    distinct_64_prefixes: int
    records: list[DayRecord] = field(default_factory=list)
    bgp_len: Optional[int] = None
    asn: Optional[int] = None
    country: str = ""

    def table_row(self) -> dict:
        return {
            "iid": format_iid(self.iid),
            "mean_probes": round(self.mean_probes, 1),
            "stddev_probes": round(self.stddev_probes, 1),
            "bgp_prefix": "" if self.bgp_len is None else f"/{self.bgp_len}",
            "asn": "" if self.asn is None else self.asn,
            "cc": self.country,
            "days": self.days_found,
            "n_64_prefixes": self.distinct_64_prefixes,
            "mean_probes_hits": "" if self.mean_probes_hits is None else round(self.mean_probes_hits, 1),
        }


TABLE_COLUMNS = (
    "iid",
    "mean_probes",
    "stddev_probes",
    "bgp_prefix",
    "asn",
    "cc",
    "days",
    "n_64_prefixes",
    "mean_probes_hits",
)


@dataclass
class TrackingReport:
    targets: dict[int, TargetSummary]

    def mean_daily_hits(self) -> float:
        per_day: dict[int, int] = defaultdict(int)
        for t in self.targets.values():
            for r in t.records:
                per_day[r.day] += r.found
        return sum(per_day.values()) / len(per_day) if per_day else 0.0

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(out, TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for iid in self.targets:
            writer.writerow(self.targets[iid].table_row())
        return out.getvalue()

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_dict(), sort_keys=True) + "\n"
            for t in self.targets.values()
            for r in t.records
        )


def summarize(records: Iterable[DayRecord], bgp: Optional[PrefixToAsTable] = None) -> TrackingReport:
    """Per-target tracking statistics.

    ``mean_probes``/``stddev_probes`` cover every tracked day, charging
    missed days the full budget; ``stddev`` is the population deviation.
    ``mean_probes_hits`` averages found days only.
    """
    grouped: dict[int, list[DayRecord]] = defaultdict(list)
    for r in records:
        grouped[r.iid].append(r)
    if not grouped:
        raise ValueError("no day records to summarize")
    targets = {}
    for iid, recs in grouped.items():
        counts = [r.probes for r in recs]
        mean = sum(counts) / len(counts)
        std = math.sqrt(sum((c - mean) ** 2 for c in counts) / len(counts))
        hits = [r for r in recs if r.found]
        prefixes = {r.responder >> 64 for r in hits}
        summary = TargetSummary(
            iid=iid,
            days=len(recs),
            days_found=len(hits),
            mean_probes=mean,
            stddev_probes=std,
            mean_probes_hits=sum(r.probes for r in hits) / len(hits) if hits else None,
            distinct_64_prefixes=len(prefixes),
            records=sorted(recs, key=lambda r: r.day),
        )
        if bgp is not None and hits:
            entry = bgp.lookup(hits[-1].responder)
            if entry is not None:
                summary.bgp_len = entry.prefix.length
                summary.asn = entry.asn
                summary.country = entry.country
        targets[iid] = summary
    return TrackingReport(targets)
