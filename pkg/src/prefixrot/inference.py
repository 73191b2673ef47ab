"""Allocation-size, rotation-pool, density and rotation inference.

All functions take plain observation collections and treat them with set
semantics: reordering or duplicating observations never changes a result.

Range-to-bits mapping is ``ceil(log2(max - min + 1))`` over /64 network
numbers, so an IID seen across exactly 2**k contiguous /64s scores k bits
and an IID seen in a single /64 scores 0.  Medians over an even number of
IIDs take the lower middle value.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

from .addr import Ipv6Prefix, PrefixToAsTable, format_iid, is_eui64_addr, range_bits, LOW64_MASK
from .probe import Observation

log = logging.getLogger(__name__)

DENSITY_THRESHOLD = 0.01
ResponseTargetMap = dict  # responder address -> set of target addresses


def lower_median(values: Iterable[int]) -> int:
    ordered = sorted(values)
    if not ordered:
        raise ValueError("median of empty sequence")
    return ordered[(len(ordered) - 1) // 2]


def response_target_map(observations: Iterable[Observation], run: Optional[str] = None) -> ResponseTargetMap:
    """Map each responder address to the targets that elicited it.

    Allocation inference is only meaningful within a single run, so a log
    holding several runs must name one.
    """
    m: dict[int, set[int]] = defaultdict(set)
    runs = set()
    for obs in observations:
        if run is not None and obs.run != run:
            continue
        runs.add(obs.run)
        if obs.responder is not None:
            m[obs.responder].add(obs.target)
    if len(runs) > 1:
        raise ValueError(f"observations span {len(runs)} runs; pass run= to choose one")
    return dict(m)


def _bits_by_iid(groups: Mapping[int, Iterable[int]]) -> dict[int, int]:
    out = {}
    for iid, addrs in groups.items():
        nets = [a >> 64 for a in addrs]
        out[iid] = range_bits(max(nets) - min(nets))
    return out


@dataclass
class AllocationInference:
    per_iid_bits: dict[int, int]
    median_bits: Optional[int]
    median_alloc_len: Optional[int]
    sample_count: int

    @property
    def empty(self) -> bool:
        return self.sample_count == 0

    def histogram(self) -> dict[int, int]:
        """IID counts per inferred allocation length."""
        hist: dict[int, int] = defaultdict(int)
        for bits in self.per_iid_bits.values():
            hist[64 - bits] += 1
        return dict(sorted(hist.items()))


def allocation_size(m: ResponseTargetMap, exclude_iids: Iterable[int] = ()) -> AllocationInference:
    """Infer the customer allocation size from a responder -> targets map.

    Targets are pooled per EUI-64 IID; each IID's span of target /64s gives
    its allocation bits, and the result is the median over IIDs.
    """
    excluded = set(exclude_iids)
    targets_by_iid: dict[int, set[int]] = defaultdict(set)
    for responder, targets in m.items():
        if not is_eui64_addr(responder):
            continue
        iid = responder & LOW64_MASK
        if iid in excluded or not targets:
            continue
        targets_by_iid[iid].update(targets)
    bits = _bits_by_iid(targets_by_iid)
    if not bits:
        return AllocationInference({}, None, None, 0)
    med = lower_median(bits.values())
    return AllocationInference(bits, med, 64 - med, len(bits))


@dataclass
class PoolInference:
    per_iid_bits: dict[int, int]
    median_bits: Optional[int]
    median_pool_len: Optional[int]
    bgp_len: Optional[int]
    sample_count: int

    @property
    def empty(self) -> bool:
        return self.sample_count == 0


def rotation_pool_size(
    responders: Iterable[int],
    bgp: Optional[PrefixToAsTable] = None,
    exclude_iids: Iterable[int] = (),
) -> PoolInference:
    """Infer the rotation pool from the spread of each IID's WAN /64s.

    ``bgp_len`` is the shortest covering BGP prefix among the responders,
    for comparison with the pool.
    """
    excluded = set(exclude_iids)
    by_iid: dict[int, set[int]] = defaultdict(set)
    for r in set(responders):
        if is_eui64_addr(r) and (r & LOW64_MASK) not in excluded:
            by_iid[r & LOW64_MASK].add(r)
    bits = _bits_by_iid(by_iid)
    bgp_len = None
    if bgp is not None:
        lens = [e.prefix.length for e in map(bgp.lookup, {a for s in by_iid.values() for a in s}) if e]
        bgp_len = min(lens) if lens else None
    if not bits:
        return PoolInference({}, None, None, bgp_len, 0)
    med = lower_median(bits.values())
    return PoolInference(bits, med, 64 - med, bgp_len, len(bits))


class DensityClass(str, Enum):
    High = "High"
    Low = "Low"
    Unresponsive = "Unresponsive"


@dataclass
class DensityEntry:
    prefix: Ipv6Prefix
    probes_sent: int
    unique_eui_responders: int
    responses: int
    density: float
    cls: DensityClass

    def to_dict(self) -> dict:
        return {
            "prefix": str(self.prefix),
            "probes_sent": self.probes_sent,
            "unique_eui_responders": self.unique_eui_responders,
            "responses": self.responses,
            "density": self.density,
            "class": self.cls.value,
        }


def classify_density(
    observations: Iterable[Observation],
    grid_len: int = 56,
    expected: Iterable[Ipv6Prefix] = (),
) -> dict[Ipv6Prefix, DensityEntry]:
    """Per-/48 unique-EUI-64-responder density and High/Low/Unresponsive class.

    ``grid_len`` is the probing granularity; a /48 that received a
    different number of probes than one per grid cell is logged.  /48s in
    ``expected`` with no probes are dropped with a warning.
    """
    probes: dict[int, set[int]] = defaultdict(set)
    eui: dict[int, set[int]] = defaultdict(set)
    answered: dict[int, int] = defaultdict(int)
    for obs in observations:
        key = obs.target >> 80
        probes[key].add(obs.target)
        if obs.responder is not None:
            answered[key] += 1
            if is_eui64_addr(obs.responder):
                eui[key].add(obs.responder)
    for p in expected:
        if p.length != 48:
            raise ValueError(f"{p} is not a /48")
        if p.key not in probes:
            log.warning("no probes recorded for %s; excluded", p)
    per_48 = 1 << (grid_len - 48)
    report = {}
    for key in sorted(probes):
        sent = len(probes[key])
        if sent != per_48:
            log.info("/48 %x received %d probes, grid expects %d", key, sent, per_48)
        n_eui = len(eui[key])
        density = n_eui / sent
        if answered[key] == 0:
            cls = DensityClass.Unresponsive
        elif density < DENSITY_THRESHOLD:
            cls = DensityClass.Low
        else:
            cls = DensityClass.High
        prefix = Ipv6Prefix(key << 80, 48)
        report[prefix] = DensityEntry(prefix, sent, n_eui, answered[key], density, cls)
    return report


@dataclass
class RotationVerdict:
    prefix: Ipv6Prefix
    changed_pairs: int
    verdict: bool

    def to_dict(self) -> dict:
        return {"prefix": str(self.prefix), "changed_pairs": self.changed_pairs, "verdict": self.verdict}


class ScheduleMismatch(ValueError):
    """Two snapshots did not probe the same targets in the same order."""


def detect_rotation(
    snapshot_a: Iterable[Observation], snapshot_b: Iterable[Observation]
) -> dict[Ipv6Prefix, RotationVerdict]:
    """Compare two same-order scans and flag /48s whose EUI-64 answers changed.

    Only <target, response> pairs with an EUI-64 response in either scan
    are kept, pairs common to both scans are removed, and any /48 left with
    a pair is flagged.  EUI-64 to Silent and EUI-64 to non-EUI transitions
    count as changes.
    """
    a = list(snapshot_a)
    b = list(snapshot_b)
    if [o.target for o in a] != [o.target for o in b]:
        raise ScheduleMismatch("snapshots differ in target set or order")
    pairs_a = {(o.target, o.responder) for o in a if o.responder is not None and is_eui64_addr(o.responder)}
    pairs_b = {(o.target, o.responder) for o in b if o.responder is not None and is_eui64_addr(o.responder)}
    changed: dict[int, int] = defaultdict(int)
    for target, _ in pairs_a ^ pairs_b:
        changed[target >> 80] += 1
    keys = sorted({o.target >> 80 for o in a})
    return {
        Ipv6Prefix(k << 80, 48): RotationVerdict(Ipv6Prefix(k << 80, 48), changed[k], changed[k] > 0)
        for k in keys
    }


@dataclass
class PathologyReport:
    # IID -> ASNs seen concurrently
    multi_as_iids: dict[int, list[int]] = field(default_factory=dict)
    # IID -> [(asn, first_day, last_day), ...] in time order
    provider_changers: dict[int, list[tuple[int, int, int]]] = field(default_factory=dict)

    @property
    def multi_or_changer(self) -> set[int]:
        return set(self.multi_as_iids) | set(self.provider_changers)

    def to_dict(self) -> dict:
        return {
            "multi_as_iids": {format_iid(i): asns for i, asns in sorted(self.multi_as_iids.items())},
            "provider_changers": {
                format_iid(i): [{"asn": a, "first_day": f, "last_day": l} for a, f, l in spans]
                for i, spans in sorted(self.provider_changers.items())
            },
        }


def day_of(ts: float, day_seconds: int = 86400) -> int:
    return int(ts // day_seconds)


def pathology_scan(
    observations: Iterable[Observation], bgp: PrefixToAsTable, day_seconds: int = 86400
) -> PathologyReport:
    """Find EUI-64 IIDs attributed to more than one AS.

    An IID whose per-AS activity windows (first to last day seen) are
    disjoint in time is a provider changer; any overlap makes it a
    multi-AS IID.
    """
    spans: dict[int, dict[int, list[int]]] = defaultdict(dict)
    for obs in observations:
        r = obs.responder
        if r is None or not is_eui64_addr(r):
            continue
        asn = bgp.asn_of(r)
        if asn is None:
            continue
        d = day_of(obs.ts, day_seconds)
        span = spans[r & LOW64_MASK].get(asn)
        if span is None:
            spans[r & LOW64_MASK][asn] = [d, d]
        else:
            if d < span[0]:
                span[0] = d
            if d > span[1]:
                span[1] = d
    report = PathologyReport()
    for iid, per_as in spans.items():
        if len(per_as) < 2:
            continue
        ordered = sorted(((f, l, asn) for asn, (f, l) in per_as.items()))
        disjoint = all(prev[1] < nxt[0] for prev, nxt in zip(ordered, ordered[1:]))
        if disjoint:
            report.provider_changers[iid] = [(asn, f, l) for f, l, asn in ordered]
        else:
            report.multi_as_iids[iid] = sorted(per_as)
    return report


@dataclass
class AsInference:
    asn: int
    country: str
    alloc: AllocationInference
    pool: PoolInference
    iid_count: int

    def row(self) -> dict:
        return {
            "asn": self.asn,
            "alloc_len": self.alloc.median_alloc_len,
            "pool_len": self.pool.median_pool_len,
            "bgp_len": self.pool.bgp_len,
            "iid_count": self.iid_count,
        }

    def to_dict(self) -> dict:
        d = self.row()
        d["country"] = self.country
        d["alloc_histogram"] = {str(k): v for k, v in self.alloc.histogram().items()}
        return d


def infer_per_as(
    observations: Iterable[Observation],
    bgp: PrefixToAsTable,
    alloc_run: Optional[str] = None,
    exclude_iids: Iterable[int] = (),
    day_seconds: int = 86400,
) -> dict[int, AsInference]:
    """Run allocation and pool inference for every AS seen in the log.

    Allocation uses the single run ``alloc_run`` (default: the first run in
    the log); pool inference uses every run.  IIDs seen in more than one AS
    are always excluded, plus any in ``exclude_iids``.
    """
    obs = list(observations)
    if alloc_run is None and obs:
        alloc_run = obs[0].run
    excluded = set(exclude_iids) | pathology_scan(obs, bgp, day_seconds).multi_or_changer
    by_as_resp: dict[int, set[int]] = defaultdict(set)
    by_as_map: dict[int, dict[int, set[int]]] = defaultdict(lambda: defaultdict(set))
    asn_cache: dict[int, Optional[int]] = {}
    for o in obs:
        r = o.responder
        if r is None or not is_eui64_addr(r):
            continue
        asn = asn_cache.get(r, -1)
        if asn == -1:
            asn = asn_cache[r] = bgp.asn_of(r)
        if asn is None:
            continue
        by_as_resp[asn].add(r)
        if o.run == alloc_run:
            by_as_map[asn][r].add(o.target)
    result = {}
    for asn in sorted(by_as_resp):
        entry = next((e for e in bgp if e.asn == asn), None)
        alloc = allocation_size(by_as_map.get(asn, {}), excluded)
        pool = rotation_pool_size(by_as_resp[asn], bgp, excluded)
        iids = {r & LOW64_MASK for r in by_as_resp[asn]} - excluded
        result[asn] = AsInference(asn, entry.country if entry else "", alloc, pool, len(iids))
    return result


INFERENCE_COLUMNS = ("asn", "alloc_len", "pool_len", "bgp_len", "iid_count")


def inference_csv(results: Mapping[int, AsInference]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, INFERENCE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for asn in sorted(results):
        writer.writerow({k: ("" if v is None else v) for k, v in results[asn].row().items()})
    return out.getvalue()


def inference_json(results: Mapping[int, AsInference]) -> str:
    return json.dumps([results[a].to_dict() for a in sorted(results)], indent=2, sort_keys=True)
