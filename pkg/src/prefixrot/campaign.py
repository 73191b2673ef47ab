"""The three-stage discovery pipeline plus daily runs and persistence.

Stages:

1. seed expansion: one random address per /48 of every seed prefix;
   /48s answering with an EUI-64 address no other /48 produced are kept;
2. density: one probe per /56 of each kept /48, classified by the density
   of unique EUI-64 responders;
3. rotation detection: one probe per /64 of each high-density /48, twice,
   one day apart, in the same order.

A campaign directory holds ``state.json``, a lock file and one JSON-lines
observation log per run.
"""

from __future__ import annotations

import bisect
import json
import logging
import os
import random
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from filelock import FileLock, Timeout

from .addr import Ipv6Prefix, PrefixToAsTable, is_eui64_addr
from .inference import (
    DensityClass,
    DensityEntry,
    RotationVerdict,
    ScheduleMismatch,
    classify_density,
    detect_rotation,
)
from .probe import Observation, SimClock, permuted_schedule, run_campaign
from .sim import SimTransport

log = logging.getLogger(__name__)

DAY_SECONDS = 86400
DEFAULT_RATE = 10_000.0
M64 = (1 << 64) - 1


class CampaignError(RuntimeError):
    pass


class Stage(IntEnum):
    Init = 0
    SeedExpansion = 1
    Density = 2
    RotationDetect = 3
    Daily = 4


# -- target spaces ------------------------------------------------------------

def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & M64
    return x ^ (x >> 31)


class GridTargets(Sequence[int]):
    """One pseudo-random address in every /``grid_len`` cell of each prefix.

    Addresses are generated on demand from the index, so a 61M-target space
    costs nothing until probed.
    """

    def __init__(self, prefixes: Iterable[Ipv6Prefix], grid_len: int, seed) -> None:
        self.prefixes = list(prefixes)
        self.grid_len = grid_len
        self.shift = 128 - grid_len
        self.host_mask = (1 << self.shift) - 1
        self.salt = random.Random(f"grid:{seed}:{grid_len}").getrandbits(64)
        self._starts: list[int] = []
        total = 0
        for p in self.prefixes:
            if p.length > grid_len:
                raise ValueError(f"{p} is smaller than the /{grid_len} grid")
            self._starts.append(total)
            total += 1 << (grid_len - p.length)
        self._len = total

    def __len__(self) -> int:
        return self._len

    def __getitem__(self, i):  # type: ignore[override]
        if not 0 <= i < self._len:
            raise IndexError(i)
        k = bisect.bisect_right(self._starts, i) - 1
        cell = i - self._starts[k]
        base = self.prefixes[k].base | (cell << self.shift)
        hi = _splitmix(self.salt ^ (2 * i))
        lo = _splitmix(self.salt ^ (2 * i + 1))
        return base | (((hi << 64) | lo) & self.host_mask)


def parse_seed_list(text: str) -> tuple[list[Ipv6Prefix], list[tuple[int, str]]]:
    """Parse a seed list: one CIDR per line, ``#`` comments.

    Returns the prefixes and a list of ``(line_number, message)`` errors for
    lines that could not be used.
    """
    prefixes: list[Ipv6Prefix] = []
    errors: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            p = Ipv6Prefix.parse(line, strict=False)
        except ValueError as exc:
            errors.append((lineno, f"unparseable prefix {line!r}: {exc}"))
            continue
        if not 32 <= p.length <= 48:
            errors.append((lineno, f"{p} must be between /32 and /48"))
            continue
        prefixes.append(p)
    return prefixes, errors


def _probe_all(targets, transport, seed, run_id, rate, day, in_flight=1) -> list[Observation]:
    if hasattr(transport, "use_run"):
        transport.use_run(run_id)
    schedule = permuted_schedule(targets, seed, run_id)
    return list(run_campaign(schedule, transport, rate, in_flight, clock=SimClock(day * DAY_SECONDS)))


def expansion_targets(seeds: Sequence[Ipv6Prefix], seed) -> GridTargets:
    return GridTargets(seeds, 48, seed)


def expand_seeds(
    seeds: Sequence[Ipv6Prefix],
    transport,
    seed=0,
    rate: float = DEFAULT_RATE,
    day: int = 0,
    run_id: str = "expand",
) -> tuple[list[Ipv6Prefix], list[Observation]]:
    """Probe one random address per /48 and keep /48s with a unique EUI-64 answer."""
    if not seeds:
        raise CampaignError("seed list is empty")
    obs = _probe_all(expansion_targets(seeds, seed), transport, seed, run_id, rate, day)
    return retained_48s(obs), obs


def retained_48s(observations: Iterable[Observation]) -> list[Ipv6Prefix]:
    """/48s whose EUI-64 responder was not also produced by another /48."""
    owners: dict[int, set[int]] = defaultdict(set)
    for o in observations:
        if o.responder is not None and is_eui64_addr(o.responder):
            owners[o.responder].add(o.target >> 80)
    keep = sorted({next(iter(s)) for s in owners.values() if len(s) == 1})
    return [Ipv6Prefix(k << 80, 48) for k in keep]


def run_density_stage(
    prefixes: Sequence[Ipv6Prefix],
    transport,
    seed=0,
    rate: float = DEFAULT_RATE,
    day: int = 0,
    run_id: str = "density",
) -> tuple[dict[Ipv6Prefix, DensityEntry], list[Observation]]:
    """One probe per /56 of each /48, then density classification."""
    if not prefixes:
        return {}, []
    obs = _probe_all(GridTargets(prefixes, 56, seed), transport, seed, run_id, rate, day)
    return classify_density(obs, 56, prefixes), obs


@dataclass
class RotationSummary:
    by_asn: dict[int, int]
    by_country: dict[str, int]
    unattributed: int = 0

    @property
    def total(self) -> int:
        return sum(self.by_asn.values()) + self.unattributed

    def table(self, top: int = 5) -> list[tuple[str, int, str, int]]:
        """Rows of (ASN, #/48, country, #/48): top entries, an "Other" row, and a total."""
        asns = sorted(self.by_asn.items(), key=lambda kv: (-kv[1], kv[0]))
        ccs = sorted(self.by_country.items(), key=lambda kv: (-kv[1], kv[0]))
        rows = []
        for i in range(min(top, max(len(asns), len(ccs)))):
            a = asns[i] if i < len(asns) else ("", 0)
            c = ccs[i] if i < len(ccs) else ("", 0)
            rows.append((str(a[0]), a[1], c[0], c[1]))
        rest_a, rest_c = asns[top:], ccs[top:]
        if rest_a or rest_c:
            rows.append(
                (
                    f"{len(rest_a)} Other ASNs" if rest_a else "",
                    sum(v for _, v in rest_a),
                    f"{len(rest_c)} Other Countries" if rest_c else "",
                    sum(v for _, v in rest_c),
                )
            )
        rows.append(("Total", sum(self.by_asn.values()), "Total", sum(self.by_country.values())))
        return rows

    def format(self, top: int = 5) -> str:
        lines = [f"{'ASN':<16}{'# /48':>8}  {'Country':<20}{'# /48':>8}"]
        for a, na, c, nc in self.table(top):
            lines.append(f"{a:<16}{na:>8,}  {c:<20}{nc:>8,}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "by_asn": {str(k): v for k, v in sorted(self.by_asn.items())},
            "by_country": dict(sorted(self.by_country.items())),
            "unattributed": self.unattributed,
        }


def summarize_rotation(verdicts: dict[Ipv6Prefix, RotationVerdict], bgp: Optional[PrefixToAsTable]) -> RotationSummary:
    by_asn: Counter[int] = Counter()
    by_cc: Counter[str] = Counter()
    unattributed = 0
    for prefix, v in verdicts.items():
        if not v.verdict:
            continue
        entry = bgp.lookup(prefix.base) if bgp is not None else None
        if entry is None:
            unattributed += 1
            continue
        by_asn[entry.asn] += 1
        by_cc[entry.country or "??"] += 1
    return RotationSummary(dict(by_asn), dict(by_cc), unattributed)


def run_rotation_stage(
    prefixes: Sequence[Ipv6Prefix],
    transport,
    seed=0,
    rate: float = DEFAULT_RATE,
    day: int = 0,
    advance: Optional[Callable[[], None]] = None,
    bgp: Optional[PrefixToAsTable] = None,
) -> tuple[dict[Ipv6Prefix, RotationVerdict], RotationSummary, list[Observation], list[Observation]]:
    """Two same-order /64 sweeps one day apart, compared per /48."""
    if not prefixes:
        return {}, RotationSummary({}, {}), [], []
    targets = GridTargets(prefixes, 64, seed)
    snap_a = _probe_all(targets, transport, seed, "rotation-a", rate, day)
    if advance is not None:
        advance()
    snap_b = _probe_all(targets, transport, seed, "rotation-b", rate, day + 1)
    try:
        verdicts = detect_rotation(snap_a, snap_b)
    except ScheduleMismatch as exc:
        raise CampaignError(f"rotation snapshots violate the same-order protocol: {exc}") from exc
    return verdicts, summarize_rotation(verdicts, bgp), snap_a, snap_b


def daily_run(
    prefixes: Sequence[Ipv6Prefix],
    transport,
    seed,
    day: int,
    rate: float = DEFAULT_RATE,
) -> list[Observation]:
    """Sweep every /64 of the rotating /48s; same order every day."""
    return _probe_all(GridTargets(prefixes, 64, seed), transport, seed, f"daily-{day:03d}", rate, day)


# -- persisted state ----------------------------------------------------------

@dataclass
class RunRecord:
    kind: str
    day: int
    path: str
    count: int


@dataclass
class CampaignState:
    stage: Stage = Stage.Init
    schedule_seed: int = 0
    sim_day: int = 0
    seeds: list[str] = field(default_factory=list)
    validated_48s: list[str] = field(default_factory=list)
    high_density_48s: list[str] = field(default_factory=list)
    rotating_48s: list[str] = field(default_factory=list)
    stage_days: dict[str, int] = field(default_factory=dict)
    runs: dict[str, RunRecord] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)

    def advance_to(self, stage: Stage) -> None:
        """Stages only move forward; re-running an earlier stage keeps the later mark."""
        if stage > self.stage:
            self.stage = stage

    def require(self, stage: Stage) -> None:
        if self.stage < stage:
            raise CampaignError(f"stage {stage.name} has not completed (current: {self.stage.name})")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage"] = self.stage.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignState":
        d = dict(d)
        d["stage"] = Stage[d.get("stage", "Init")]
        d["runs"] = {k: RunRecord(**v) for k, v in d.get("runs", {}).items()}
        return cls(**d)


class CampaignDir:
    """A campaign state directory, owned by one process at a time."""

    STATE = "state.json"
    LOCK = "campaign.lock"

    def __init__(self, path, seed: Optional[int] = None) -> None:
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.path / self.LOCK))
        self.state = CampaignState()
        self._seed_override = seed

    def __enter__(self) -> "CampaignDir":
        try:
            self._lock.acquire(timeout=0)
        except Timeout:
            raise CampaignError(f"{self.path} is locked by another process") from None
        state_file = self.path / self.STATE
        if state_file.exists():
            self.state = CampaignState.from_dict(json.loads(state_file.read_text()))
            if self._seed_override is not None and self._seed_override != self.state.schedule_seed:
                if self.state.stage > Stage.Init:
                    raise CampaignError(
                        f"campaign uses schedule seed {self.state.schedule_seed}; refusing --seed {self._seed_override}"
                    )
                self.state.schedule_seed = self._seed_override
        elif self._seed_override is not None:
            self.state.schedule_seed = self._seed_override
        return self

    def __exit__(self, *exc) -> None:
        try:
            if exc[0] is None:
                self.save()
        finally:
            self._lock.release()

    def save(self) -> None:
        tmp = self.path / (self.STATE + ".tmp")
        tmp.write_text(json.dumps(self.state.to_dict(), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.path / self.STATE)

    def log_path(self, run_id: str) -> Path:
        return self.path / "runs" / f"{run_id}.jsonl"

    def record_run(self, run_id: str, kind: str, day: int, observations: list[Observation]) -> Path:
        path = self.log_path(run_id)
        path.parent.mkdir(exist_ok=True)
        with open(path, "w") as fh:
            for o in observations:
                fh.write(o.to_json())
                fh.write("\n")
        self.state.runs[run_id] = RunRecord(kind, day, str(path.relative_to(self.path)), len(observations))
        return path

    def load_run(self, run_id: str) -> list[Observation]:
        rec = self.state.runs.get(run_id)
        if rec is None:
            raise CampaignError(f"no run {run_id!r} in campaign")
        with open(self.path / rec.path) as fh:
            return [Observation.from_dict(json.loads(line)) for line in fh if line.strip()]

    def runs_of_kind(self, kind: str) -> list[str]:
        return sorted(r for r, rec in self.state.runs.items() if rec.kind == kind)

    def write_json(self, name: str, doc) -> Path:
        path = self.path / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        self.state.files[name.rsplit(".", 1)[0]] = name
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.path / name
        path.write_text(text)
        self.state.files[name.replace(".", "_")] = name
        return path


def prefixes_of(texts: Iterable[str]) -> list[Ipv6Prefix]:
    return [Ipv6Prefix.parse(t) for t in texts]


def density_over_time(world, pool: Ipv6Prefix, hours: int, seed=0, grid_len: int = 64) -> dict[str, list[tuple[float, float]]]:
    """Hourly unique EUI-64 responder counts per /48 of ``pool``.

    Drives ``world`` in hourly mode, so rotations land inside the early
    morning window rather than all at midnight.
    """
    series: dict[str, list[tuple[float, float]]] = {str(p): [] for p in pool.subprefixes(48)} if pool.length <= 48 else {}
    targets = GridTargets([pool], grid_len, seed)
    for h in range(hours):
        if h:
            world.advance_hour()
        counts: dict[str, set[int]] = defaultdict(set)
        transport = SimTransport(world)
        for t in targets:
            r = transport.probe(t)[0]
            if r is not None and is_eui64_addr(r):
                counts[str(Ipv6Prefix.of(t, 48))].add(r)
        for name in series:
            series[name].append((float(h), float(len(counts.get(name, ())))))
    return series
