"""Ground-truth ISP simulator and simulated probe transport.

A :class:`SimConfig` describes one or more provider ASes, each with rotation
pools carved into allocation-sized blocks and a fleet of CPE routers.
:func:`build_world` places the fleet, :func:`advance_day` rotates it, and
:func:`probe` answers a probe the way a CPE does: any destination inside
its delegated prefix draws an ICMPv6 error sourced from the CPE's WAN
address.

The WAN address of a CPE is the first /64 of its delegated prefix joined
with its IID, so the WAN /64 moves whenever the delegation moves.
"""

from __future__ import annotations

import copy
import enum
import json
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

from .addr import (
    AsEntry,
    Ipv6Prefix,
    MacAddr,
    PrefixToAsTable,
    format_addr,
    is_eui64,
    mac_to_eui64_iid,
)
from .probe import ResponseClass

M64 = (1 << 64) - 1
DAY_SECONDS = 86400
ROTATION_HOURS = 6  # reassignment window 00:00-06:00


class SimConfigError(ValueError):
    pass


class RotationKind(str, enum.Enum):
    NONE = "none"
    DAILY_INCREMENT = "daily_increment"
    DAILY_UNIFORM = "daily_uniform"
    PERIODIC_UNIFORM = "periodic_uniform"


@dataclass(frozen=True)
class RotationSchedule:
    kind: RotationKind = RotationKind.NONE
    step: int = 1  # /64s per day, DAILY_INCREMENT only
    period_days: int = 1  # PERIODIC_UNIFORM only

    def rotates_on(self, day: int) -> bool:
        if self.kind is RotationKind.NONE:
            return False
        if self.kind is RotationKind.PERIODIC_UNIFORM:
            return day % self.period_days == 0
        return True

    @classmethod
    def from_dict(cls, d) -> "RotationSchedule":
        if d is None:
            return cls()
        if isinstance(d, str):
            return cls(RotationKind(d))
        return cls(
            RotationKind(d.get("kind", "none")),
            int(d.get("step", 1)),
            int(d.get("period_days", 1)),
        )

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kind is RotationKind.DAILY_INCREMENT:
            d["step"] = self.step
        if self.kind is RotationKind.PERIODIC_UNIFORM:
            d["period_days"] = self.period_days
        return d


NO_ROTATION = RotationSchedule()
DAILY_UNIFORM = RotationSchedule(RotationKind.DAILY_UNIFORM)


def daily_increment(step: int = 1) -> RotationSchedule:
    return RotationSchedule(RotationKind.DAILY_INCREMENT, step=step)


def periodic_uniform(period_days: int) -> RotationSchedule:
    return RotationSchedule(RotationKind.PERIODIC_UNIFORM, period_days=period_days)


@dataclass(frozen=True)
class PoolSpec:
    prefix: Ipv6Prefix
    alloc_len: int
    rotation: RotationSchedule = NO_ROTATION

    @property
    def num_blocks(self) -> int:
        return 1 << (self.alloc_len - self.prefix.length)


class IidMode(str, enum.Enum):
    EUI64 = "eui64"
    PRIVACY = "privacy"


@dataclass(frozen=True)
class ProviderChange:
    day: int
    asn: int
    pool: int = 0


@dataclass(frozen=True)
class CpeSpec:
    mac: MacAddr
    pool: int = 0
    iid_mode: IidMode = IidMode.EUI64
    # None means silently drop every probe
    response: Optional[ResponseClass] = ResponseClass.AdminProhibited
    drop_prob: float = 0.0
    join_day: Optional[int] = None
    leave_day: Optional[int] = None
    provider_change: Optional[ProviderChange] = None
    initial_block: Optional[int] = None

    def active_on(self, day: int) -> bool:
        if self.join_day is not None and day < self.join_day:
            return False
        return self.leave_day is None or day < self.leave_day


@dataclass
class AsConfig:
    asn: int
    bgp_prefix: Ipv6Prefix
    pools: list[PoolSpec] = field(default_factory=list)
    fleet: list[CpeSpec] = field(default_factory=list)
    country: str = ""
    # answer for probes into unallocated space: "silent" or "noroute"
    unallocated: str = "silent"

    @property
    def router_addr(self) -> int:
        return self.bgp_prefix.base | 1


@dataclass
class SimConfig:
    ases: list[AsConfig]
    seed: int = 0

    @classmethod
    def single(cls, asn: int, bgp_prefix, pools, fleet, seed: int = 0, **kw) -> "SimConfig":
        bgp = bgp_prefix if isinstance(bgp_prefix, Ipv6Prefix) else Ipv6Prefix.parse(bgp_prefix)
        return cls([AsConfig(asn, bgp, list(pools), list(fleet), **kw)], seed)

    def as_index(self, asn: int) -> int:
        for i, a in enumerate(self.ases):
            if a.asn == asn:
                return i
        raise SimConfigError(f"no AS{asn} in config")

    def bgp_table(self) -> PrefixToAsTable:
        return PrefixToAsTable(AsEntry(a.bgp_prefix, a.asn, a.country) for a in self.ases)

    def validate(self) -> None:
        seen_asn = set()
        all_pools: list[tuple[int, Ipv6Prefix]] = []
        for a in self.ases:
            if a.asn in seen_asn:
                raise SimConfigError(f"duplicate AS{a.asn}")
            seen_asn.add(a.asn)
            if a.unallocated not in ("silent", "noroute"):
                raise SimConfigError(f"AS{a.asn}: unallocated must be silent or noroute")
            for i, p in enumerate(a.pools):
                name = f"AS{a.asn} pool {i} ({p.prefix})"
                if p.prefix not in a.bgp_prefix:
                    raise SimConfigError(f"{name} is outside {a.bgp_prefix}")
                if not p.prefix.length <= p.alloc_len <= 64:
                    raise SimConfigError(f"{name}: allocation /{p.alloc_len} invalid")
                if p.rotation.kind is RotationKind.DAILY_INCREMENT:
                    unit = 1 << (64 - p.alloc_len)
                    if p.rotation.step <= 0 or p.rotation.step % unit:
                        raise SimConfigError(
                            f"{name}: step {p.rotation.step} is not a multiple of the /{p.alloc_len} block"
                        )
                if p.rotation.kind is RotationKind.PERIODIC_UNIFORM and p.rotation.period_days < 1:
                    raise SimConfigError(f"{name}: period_days must be >= 1")
                for other_asn, other in all_pools:
                    if other in p.prefix or p.prefix in other:
                        raise SimConfigError(f"{name} overlaps pool {other} of AS{other_asn}")
                all_pools.append((a.asn, p.prefix))
            for c in a.fleet:
                if not 0 <= c.pool < len(a.pools):
                    raise SimConfigError(f"AS{a.asn}: CPE {c.mac} names missing pool {c.pool}")
                if not 0.0 <= c.drop_prob <= 1.0:
                    raise SimConfigError(f"CPE {c.mac}: drop_prob outside [0,1]")
                if c.provider_change is not None:
                    dst = self.ases[self.as_index(c.provider_change.asn)]
                    if not 0 <= c.provider_change.pool < len(dst.pools):
                        raise SimConfigError(f"CPE {c.mac}: provider change to missing pool")
        # capacity: every CPE that may ever sit in a pool must fit at once
        demand: dict[tuple[int, int], int] = {}
        for ai, a in enumerate(self.ases):
            for c in a.fleet:
                demand[(ai, c.pool)] = demand.get((ai, c.pool), 0) + 1
                if c.provider_change is not None:
                    key = (self.as_index(c.provider_change.asn), c.provider_change.pool)
                    demand[key] = demand.get(key, 0) + 1
        for (ai, pi), n in demand.items():
            pool = self.ases[ai].pools[pi]
            if n > pool.num_blocks:
                raise SimConfigError(
                    f"AS{self.ases[ai].asn} pool {pi} ({pool.prefix}) overfull: "
                    f"{n} CPEs for {pool.num_blocks} /{pool.alloc_len} blocks"
                )


# -- JSON documents -----------------------------------------------------------

def _cpe_from_dict(d: dict) -> CpeSpec:
    resp = d.get("response", ResponseClass.AdminProhibited.value)
    pc = d.get("provider_change")
    return CpeSpec(
        mac=MacAddr.parse(d["mac"]),
        pool=int(d.get("pool", 0)),
        iid_mode=IidMode(d.get("iid_mode", "eui64")),
        response=None if resp in (None, "SilentDrop") else ResponseClass(resp),
        drop_prob=float(d.get("drop_prob", 0.0)),
        join_day=d.get("join_day"),
        leave_day=d.get("leave_day"),
        provider_change=ProviderChange(int(pc["day"]), int(pc["asn"]), int(pc.get("pool", 0))) if pc else None,
        initial_block=d.get("initial_block"),
    )


def _cpe_to_dict(c: CpeSpec) -> dict:
    d: dict = {"mac": str(c.mac), "pool": c.pool, "iid_mode": c.iid_mode.value}
    d["response"] = "SilentDrop" if c.response is None else c.response.value
    if c.drop_prob:
        d["drop_prob"] = c.drop_prob
    for name in ("join_day", "leave_day", "initial_block"):
        if getattr(c, name) is not None:
            d[name] = getattr(c, name)
    if c.provider_change:
        pc = c.provider_change
        d["provider_change"] = {"day": pc.day, "asn": pc.asn, "pool": pc.pool}
    return d


def generate_fleet(
    count: int,
    rng: random.Random,
    pool: int = 0,
    vendors: Optional[dict[str, float]] = None,
    privacy_fraction: float = 0.0,
    silent_fraction: float = 0.0,
    response: ResponseClass = ResponseClass.AdminProhibited,
    drop_prob: float = 0.0,
) -> list[CpeSpec]:
    """Random CPEs with MACs drawn from a weighted OUI mix.

    ``vendors`` maps OUI text (``"38:10:d5"``) to a weight; omitted means
    random universally administered OUIs.
    """
    ouis: list[int] = []
    weights: list[float] = []
    for oui_text, w in (vendors or {}).items():
        ouis.append(int(oui_text.replace(":", "").replace("-", ""), 16))
        weights.append(float(w))
    fleet = []
    used: set[int] = set()
    for _ in range(count):
        while True:
            if ouis:
                oui = rng.choices(ouis, weights)[0]
            else:
                oui = rng.getrandbits(24) & ~0x030000  # unicast, universal
            mac = (oui << 24) | rng.getrandbits(24)
            if mac not in used:
                used.add(mac)
                break
        mode = IidMode.PRIVACY if rng.random() < privacy_fraction else IidMode.EUI64
        resp = None if rng.random() < silent_fraction else response
        fleet.append(CpeSpec(MacAddr(mac), pool, mode, resp, drop_prob))
    return fleet


def config_from_dict(doc: dict) -> SimConfig:
    """Build a SimConfig from its JSON document.

    Accepts ``{"seed", "ases": [...]}`` or a single-AS document with
    ``asn`` at top level.  Fleet items are explicit CPEs or
    ``{"generate": {...}}`` blocks expanded with a per-AS seeded RNG.
    """
    seed = int(doc.get("seed", 0))
    as_docs = doc["ases"] if "ases" in doc else [doc]
    ases = []
    for ad in as_docs:
        asn = int(ad["asn"])
        pools = [
            PoolSpec(
                Ipv6Prefix.parse(p["prefix"]),
                int(p["alloc_len"]),
                RotationSchedule.from_dict(p.get("rotation")),
            )
            for p in ad.get("pools", [])
        ]
        fleet: list[CpeSpec] = []
        for gi, item in enumerate(ad.get("fleet", [])):
            if "generate" in item:
                g = dict(item["generate"])
                rng = random.Random(f"{seed}:fleet:{asn}:{gi}")
                if "response" in g:
                    g["response"] = ResponseClass(g["response"])
                fleet.extend(generate_fleet(rng=rng, **g))
            else:
                fleet.append(_cpe_from_dict(item))
        ases.append(
            AsConfig(
                asn,
                Ipv6Prefix.parse(ad["bgp_prefix"]),
                pools,
                fleet,
                ad.get("country", "").upper(),
                ad.get("unallocated", "silent"),
            )
        )
    config = SimConfig(ases, seed)
    config.validate()
    return config


def config_to_dict(config: SimConfig) -> dict:
    return {
        "seed": config.seed,
        "ases": [
            {
                "asn": a.asn,
                "country": a.country,
                "bgp_prefix": str(a.bgp_prefix),
                "unallocated": a.unallocated,
                "pools": [
                    {"prefix": str(p.prefix), "alloc_len": p.alloc_len, "rotation": p.rotation.to_dict()}
                    for p in a.pools
                ],
                "fleet": [_cpe_to_dict(c) for c in a.fleet],
            }
            for a in config.ases
        ],
    }


def load_config(path) -> SimConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# -- world --------------------------------------------------------------------

class _Pool:
    __slots__ = ("as_idx", "asn", "spec", "shift", "pshift", "pkey", "nblocks", "base_block", "occupied")

    def __init__(self, as_idx: int, asn: int, spec: PoolSpec) -> None:
        self.as_idx = as_idx
        self.asn = asn
        self.spec = spec
        self.shift = 128 - spec.alloc_len
        self.pshift = 128 - spec.prefix.length
        self.pkey = spec.prefix.base >> self.pshift
        self.nblocks = spec.num_blocks
        self.base_block = spec.prefix.base >> self.shift
        self.occupied: dict[int, int] = {}  # absolute block number -> cpe index


class _Cpe:
    __slots__ = ("spec", "as_idx", "pool", "block", "iid", "responder", "rot_hour")

    def __init__(self, spec: CpeSpec, as_idx: int, pool: int) -> None:
        self.spec = spec
        self.as_idx = as_idx
        self.pool = pool  # global pool index
        self.block: Optional[int] = None
        self.iid = mac_to_eui64_iid(spec.mac) if spec.iid_mode is IidMode.EUI64 else 0
        self.responder: Optional[int] = None
        self.rot_hour = 0


@dataclass(frozen=True)
class Allocation:
    day: int
    hour: int
    cpe: int
    prefix: Optional[Ipv6Prefix]


def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & M64
    return x ^ (x >> 31)


class SimWorld:
    """Mutable simulated state.  Use :func:`build_world` to construct."""

    def __init__(self, config: SimConfig) -> None:
        config.validate()
        self.config = config
        self.day = 0
        self.hour = 0
        self.rng = random.Random(config.seed)
        self.pools: list[_Pool] = []
        self._pool_index: dict[tuple[int, int], int] = {}
        for ai, a in enumerate(config.ases):
            for pi, p in enumerate(a.pools):
                self._pool_index[(ai, pi)] = len(self.pools)
                self.pools.append(_Pool(ai, a.asn, p))
        self.cpes: list[_Cpe] = []
        for ai, a in enumerate(config.ases):
            for c in a.fleet:
                self.cpes.append(_Cpe(c, ai, self._pool_index[(ai, c.pool)]))
        self.history: list[Allocation] = []
        self.collisions: list[tuple[int, int, int]] = []  # (day, cpe, probes)
        self._privacy_seen: set[int] = set()
        self._drop_salt = _splitmix(config.seed & M64)
        self._as_keys = [(a.bgp_prefix.length, a.bgp_prefix.key, ai) for ai, a in enumerate(config.ases)]
        self._noroute = [a.unallocated == "noroute" for a in config.ases]

    # -- placement helpers

    def _new_privacy_iid(self) -> int:
        while True:
            iid = self.rng.getrandbits(64) & ~(0x02 << 56)
            if not is_eui64(iid) and iid not in self._privacy_seen:
                self._privacy_seen.add(iid)
                return iid

    def _release(self, idx: int) -> None:
        cpe = self.cpes[idx]
        if cpe.block is not None:
            occupied = self.pools[cpe.pool].occupied
            if occupied.get(cpe.block) == idx:
                del occupied[cpe.block]

    def _set_block(self, idx: int, block: Optional[int]) -> None:
        """Release the CPE's block (if held) and assign ``block``."""
        cpe = self.cpes[idx]
        pool = self.pools[cpe.pool]
        self._release(idx)
        moved = block != cpe.block
        cpe.block = block
        if block is None:
            cpe.responder = None
        else:
            if block in pool.occupied:
                raise AssertionError("double allocation")
            pool.occupied[block] = idx
            if cpe.spec.iid_mode is IidMode.PRIVACY and (moved or not cpe.iid):
                cpe.iid = self._new_privacy_iid()
            cpe.responder = ((block << (64 - pool.spec.alloc_len)) << 64) | cpe.iid
        if moved:
            self.history.append(Allocation(self.day, self.hour, idx, self.allocation_of(idx)))

    def _random_free_block(self, pool: _Pool) -> int:
        if len(pool.occupied) >= pool.nblocks:
            raise SimConfigError(f"pool {pool.spec.prefix} is full")
        if len(pool.occupied) * 2 < pool.nblocks:
            while True:
                b = pool.base_block + self.rng.randrange(pool.nblocks)
                if b not in pool.occupied:
                    return b
        free = [pool.base_block + i for i in range(pool.nblocks) if pool.base_block + i not in pool.occupied]
        return self.rng.choice(free)

    def _next_free_block(self, pool: _Pool, start: int) -> tuple[int, int]:
        for k in range(pool.nblocks):
            b = pool.base_block + (start - pool.base_block + k) % pool.nblocks
            if b not in pool.occupied:
                return b, k
        raise SimConfigError(f"pool {pool.spec.prefix} is full")

    def _place(self, idx: int) -> None:
        self._set_block(idx, self._random_free_block(self.pools[self.cpes[idx].pool]))

    def _increment_target(self, idx: int) -> int:
        cpe = self.cpes[idx]
        pool = self.pools[cpe.pool]
        step_blocks = pool.spec.rotation.step >> (64 - pool.spec.alloc_len)
        return pool.base_block + (cpe.block - pool.base_block + step_blocks) % pool.nblocks

    # -- lifecycle

    def _initial_placement(self) -> None:
        for idx, cpe in enumerate(self.cpes):
            cpe.rot_hour = self.rng.randrange(ROTATION_HOURS)
        for idx, cpe in enumerate(self.cpes):
            if cpe.spec.active_on(0) and cpe.spec.initial_block is not None:
                pool = self.pools[cpe.pool]
                if not 0 <= cpe.spec.initial_block < pool.nblocks:
                    raise SimConfigError(f"CPE {cpe.spec.mac}: initial_block outside pool")
                self._set_block(idx, pool.base_block + cpe.spec.initial_block)
        for pool_idx, pool in enumerate(self.pools):
            members = [
                i
                for i, c in enumerate(self.cpes)
                if c.pool == pool_idx and c.block is None and c.spec.active_on(0)
                and not (c.spec.provider_change and c.spec.provider_change.day <= 0)
            ]
            free = pool.nblocks - len(pool.occupied)
            if len(members) > free:
                raise SimConfigError(f"pool {pool.spec.prefix} overfull")
            if not members:
                continue
            if pool.occupied:
                for i in members:
                    self._place(i)
            else:
                picks = self.rng.sample(range(pool.nblocks), len(members))
                for i, off in zip(members, picks):
                    self._set_block(i, pool.base_block + off)

    def _day_events(self) -> None:
        day = self.day
        for idx, cpe in enumerate(self.cpes):
            spec = cpe.spec
            if spec.leave_day is not None and spec.leave_day == day and cpe.block is not None:
                self._set_block(idx, None)
            pc = spec.provider_change
            if pc is not None and pc.day == day and spec.active_on(day):
                self._set_block(idx, None)
                cpe.as_idx = self.config.as_index(pc.asn)
                cpe.pool = self._pool_index[(cpe.as_idx, pc.pool)]
                if spec.iid_mode is IidMode.PRIVACY:
                    cpe.iid = 0
                self._place(idx)
            elif spec.join_day is not None and spec.join_day == day and cpe.block is None and spec.active_on(day):
                self._place(idx)

    def _rotating_cpes(self, hour: Optional[int] = None) -> list[int]:
        out = []
        for idx, cpe in enumerate(self.cpes):
            if cpe.block is None:
                continue
            if not self.pools[cpe.pool].spec.rotation.rotates_on(self.day):
                continue
            if hour is not None and cpe.rot_hour != hour:
                continue
            out.append(idx)
        return out

    def _rotate_all(self, idxs: list[int]) -> None:
        increment, uniform = [], []
        for i in idxs:
            kind = self.pools[self.cpes[i].pool].spec.rotation.kind
            (increment if kind is RotationKind.DAILY_INCREMENT else uniform).append(i)
        # increments move together: release all first so a CPE is not
        # blocked by a neighbour's stale position
        targets = {i: self._increment_target(i) for i in increment}
        for i in increment:
            self._release(i)
        for i in increment:
            block, k = self._next_free_block(self.pools[self.cpes[i].pool], targets[i])
            if k:
                self.collisions.append((self.day, i, k))
            self._set_block(i, block)
        for i in uniform:
            self._release(i)
        for i in uniform:
            self._set_block(i, self._random_free_block(self.pools[self.cpes[i].pool]))

    # -- public API (also exposed as module functions)

    def allocation_of(self, idx: int) -> Optional[Ipv6Prefix]:
        cpe = self.cpes[idx]
        if cpe.block is None:
            return None
        pool = self.pools[cpe.pool]
        return Ipv6Prefix(cpe.block << pool.shift, pool.spec.alloc_len)

    def advance_day(self) -> "SimWorld":
        if self.hour != 0:
            raise RuntimeError("advance_day called mid-day; use advance_hour")
        self.day += 1
        self._day_events()
        self._rotate_all(self._rotating_cpes())
        return self

    def advance_hour(self) -> "SimWorld":
        """Hourly mode: each rotating CPE moves at its own hour in 00-06."""
        self.hour += 1
        if self.hour == 24:
            self.hour = 0
            self.day += 1
            self._day_events()
        self._rotate_all(self._rotating_cpes(self.hour))
        return self

    def probe(self, target: int) -> tuple:
        for pool in self.pools:
            if target >> pool.pshift != pool.pkey:
                continue
            idx = pool.occupied.get(target >> pool.shift)
            if idx is None:
                break
            cpe = self.cpes[idx]
            spec = cpe.spec
            if spec.response is None:
                return (None, ResponseClass.Silent)
            if spec.drop_prob:
                h = _splitmix(((target ^ (target >> 64)) + self._drop_salt + self.day * 24 + self.hour) & M64)
                if h < spec.drop_prob * 2.0 ** 64:
                    return (None, ResponseClass.Silent)
            return (cpe.responder, spec.response)
        return self._unallocated(target)

    def _unallocated(self, target: int) -> tuple:
        for length, key, ai in self._as_keys:
            if target >> (128 - length) == key:
                if self._noroute[ai]:
                    return (self.config.ases[ai].router_addr, ResponseClass.NoRoute)
                break
        return (None, ResponseClass.Silent)

    # -- ground truth views

    def active_cpes(self) -> list[int]:
        return [i for i, c in enumerate(self.cpes) if c.block is not None]

    def responder_of(self, idx: int) -> Optional[int]:
        return self.cpes[idx].responder

    def asn_of_cpe(self, idx: int) -> int:
        return self.config.ases[self.cpes[idx].as_idx].asn

    def pool_of_cpe(self, idx: int) -> PoolSpec:
        return self.pools[self.cpes[idx].pool].spec

    def find_cpe(self, mac: MacAddr, asn: Optional[int] = None) -> int:
        for i, c in enumerate(self.cpes):
            if c.spec.mac == mac and (asn is None or self.asn_of_cpe(i) == asn):
                return i
        raise KeyError(str(mac))

    def check_disjoint(self) -> None:
        seen: list[Ipv6Prefix] = []
        for i in self.active_cpes():
            p = self.allocation_of(i)
            pool = self.pool_of_cpe(i)
            if p not in pool.prefix:
                raise AssertionError(f"CPE {i} allocation {p} escaped {pool.prefix}")
            seen.append(p)
        seen.sort()
        for a, b in zip(seen, seen[1:]):
            if b.base <= a.last:
                raise AssertionError(f"overlap {a} {b}")

    def summary(self) -> dict:
        return {
            "day": self.day,
            "hour": self.hour,
            "allocations": [
                {
                    "mac": str(c.spec.mac),
                    "asn": self.asn_of_cpe(i),
                    "prefix": str(self.allocation_of(i)),
                    "responder": format_addr(c.responder),
                }
                for i, c in enumerate(self.cpes)
                if c.block is not None
            ],
        }


def build_world(config: SimConfig) -> SimWorld:
    """Place every day-0 CPE on a distinct, uniformly random block of its pool."""
    world = SimWorld(config)
    world._initial_placement()
    return world


def advance_day(world: SimWorld) -> SimWorld:
    return world.advance_day()


def probe(world: SimWorld, target: int) -> tuple:
    return world.probe(target)


def world_at_day(config: SimConfig, day: int) -> SimWorld:
    world = build_world(config)
    for _ in range(day):
        world.advance_day()
    return world


class SimTransport:
    """Probe transport backed by a :class:`SimWorld`.

    ``probe`` only reads the world, so calls may overlap; the world must not
    be advanced while a campaign is running.
    """

    concurrent = True

    def __init__(self, world: SimWorld) -> None:
        self.world = world
        self.probe = world.probe


# -- pathology injection ------------------------------------------------------

@dataclass(frozen=True)
class PathologySpec:
    # one MAC cloned into this many ASes (0 disables)
    duplicate_mac_ases: int = 0
    duplicate_mac: MacAddr = MacAddr(0)
    # CPEs that move to the next AS's first pool on change_day
    provider_changers: int = 0
    change_day: int = 5

    @property
    def empty(self) -> bool:
        return self.duplicate_mac_ases == 0 and self.provider_changers == 0


def inject_pathologies(config: SimConfig, spec: PathologySpec) -> SimConfig:
    """Return a copy of ``config`` whose fleets exhibit the requested pathologies.

    The duplicate MAC is added to pool 0 of the first ``duplicate_mac_ases``
    ASes.  Provider changers are the first EUI-64 CPEs of AS *i*, moved to
    AS *i+1* (cyclically) on ``change_day``.
    """
    if spec.empty:
        return config
    out = copy.deepcopy(config)
    n_as = len(out.ases)
    if spec.duplicate_mac_ases:
        if spec.duplicate_mac_ases > n_as:
            raise SimConfigError(
                f"cannot place a MAC in {spec.duplicate_mac_ases} ASes; config has {n_as}"
            )
        for a in out.ases[: spec.duplicate_mac_ases]:
            if not a.pools:
                raise SimConfigError(f"AS{a.asn} has no pools")
            a.fleet.append(CpeSpec(spec.duplicate_mac, 0))
    if spec.provider_changers:
        if n_as < 2:
            raise SimConfigError("provider changes need at least two ASes")
        eligible = [
            (ai, ci)
            for ai, a in enumerate(out.ases)
            for ci, c in enumerate(a.fleet)
            if c.iid_mode is IidMode.EUI64 and c.provider_change is None
            and c.mac != spec.duplicate_mac and c.leave_day is None
        ]
        if spec.provider_changers > len(eligible):
            raise SimConfigError(
                f"{spec.provider_changers} provider changers requested, {len(eligible)} eligible CPEs"
            )
        # spread changers across ASes round-robin
        by_as: dict[int, list[int]] = {}
        for ai, ci in eligible:
            by_as.setdefault(ai, []).append(ci)
        picks: list[tuple[int, int]] = []
        while len(picks) < spec.provider_changers:
            for ai in sorted(by_as):
                if by_as[ai] and len(picks) < spec.provider_changers:
                    picks.append((ai, by_as[ai].pop(0)))
        for ai, ci in picks:
            dst = out.ases[(ai + 1) % n_as]
            if not dst.pools:
                raise SimConfigError(f"AS{dst.asn} has no pools")
            a = out.ases[ai]
            a.fleet[ci] = replace(a.fleet[ci], provider_change=ProviderChange(spec.change_day, dst.asn, 0))
    out.validate()
    return out
