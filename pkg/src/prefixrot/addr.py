"""IPv6 address, prefix, MAC and EUI-64 arithmetic.

Addresses are plain ``int`` values in ``[0, 2**128)``; interface identifiers
are ``int`` values in ``[0, 2**64)``.  Text conversion goes through the
standard library so parsing accepts every RFC 4291 form and formatting is
the RFC 5952 canonical form.
"""

from __future__ import annotations

import csv
import io
import ipaddress
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, TextIO, Union

ADDR_BITS = 128
ADDR_MAX = (1 << ADDR_BITS) - 1
LOW64_MASK = (1 << 64) - 1

# bytes 3 and 4 (0-based) of an EUI-64 IID
_FFFE_SHIFT = 24
_FFFE_MASK = 0xFFFF << _FFFE_SHIFT
_FFFE_VALUE = 0xFFFE << _FFFE_SHIFT
_UL_BIT_IID = 0x02 << 56


def parse_addr(text: str) -> int:
    """Parse IPv6 text (any valid form, any case) into a 128-bit integer."""
    return int(ipaddress.IPv6Address(text.strip()))


def format_addr(value: int) -> str:
    """Canonical RFC 5952 text for a 128-bit integer."""
    return str(ipaddress.IPv6Address(value))


def high64(addr: int) -> int:
    return addr >> 64


def low64(addr: int) -> int:
    return addr & LOW64_MASK


def join64(prefix64: int, iid: int) -> int:
    """Build an address from a /64 network number and an IID."""
    return (prefix64 << 64) | (iid & LOW64_MASK)


def format_iid(iid: int) -> str:
    """Colon-hex form of an IID, e.g. ``3a10:d5ff:feaa:bbcc``."""
    return ":".join("%04x" % ((iid >> s) & 0xFFFF) for s in (48, 32, 16, 0))


def parse_iid(text: str) -> int:
    text = text.strip().lower()
    if text.startswith("::"):
        return int(ipaddress.IPv6Address(text)) & LOW64_MASK
    groups = text.split(":")
    if len(groups) == 1 and len(text) == 16:
        return int(text, 16)
    if len(groups) != 4:
        raise ValueError(f"invalid IID {text!r}")
    value = 0
    for g in groups:
        part = int(g, 16)
        if not 0 <= part <= 0xFFFF:
            raise ValueError(f"invalid IID {text!r}")
        value = (value << 16) | part
    return value


@dataclass(frozen=True, order=True)
class Ipv6Prefix:
    base: int
    length: int

    def __post_init__(self) -> None:
        if not 0 <= self.length <= ADDR_BITS:
            raise ValueError(f"prefix length {self.length} out of range")
        if not 0 <= self.base <= ADDR_MAX:
            raise ValueError("prefix base out of range")
        if self.base & self.hostmask:
            raise ValueError(
                f"{format_addr(self.base)}/{self.length} has host bits set"
            )

    @classmethod
    def parse(cls, text: str, strict: bool = True) -> "Ipv6Prefix":
        net = ipaddress.IPv6Network(text.strip(), strict=strict)
        return cls(int(net.network_address), net.prefixlen)

    @classmethod
    def of(cls, addr: int, length: int) -> "Ipv6Prefix":
        """The prefix of ``length`` bits covering ``addr``."""
        shift = ADDR_BITS - length
        return cls((addr >> shift) << shift, length)

    @property
    def hostmask(self) -> int:
        return (1 << (ADDR_BITS - self.length)) - 1

    @property
    def last(self) -> int:
        return self.base | self.hostmask

    @property
    def key(self) -> int:
        """The network bits alone, ``base >> (128 - length)``."""
        return self.base >> (ADDR_BITS - self.length)

    def contains(self, addr: int) -> bool:
        shift = ADDR_BITS - self.length
        return (addr >> shift) == (self.base >> shift)

    def __contains__(self, addr: object) -> bool:
        if isinstance(addr, Ipv6Prefix):
            return addr.length >= self.length and self.contains(addr.base)
        return isinstance(addr, int) and self.contains(addr)

    def num_subprefixes(self, length: int) -> int:
        if length < self.length:
            raise ValueError(f"/{length} is larger than /{self.length}")
        return 1 << (length - self.length)

    def subprefix(self, index: int, length: int) -> "Ipv6Prefix":
        """The ``index``-th /``length`` inside this prefix."""
        count = self.num_subprefixes(length)
        if not 0 <= index < count:
            raise IndexError(index)
        return Ipv6Prefix(self.base | (index << (ADDR_BITS - length)), length)

    def subprefixes(self, length: int) -> Iterator["Ipv6Prefix"]:
        for i in range(self.num_subprefixes(length)):
            yield self.subprefix(i, length)

    def index_of(self, addr: int, length: int) -> int:
        """Index of the /``length`` containing ``addr`` within this prefix."""
        if not self.contains(addr):
            raise ValueError(f"{format_addr(addr)} not in {self}")
        return (addr & self.hostmask) >> (ADDR_BITS - length)

    def __str__(self) -> str:
        return f"{format_addr(self.base)}/{self.length}"


PrefixLike = Union[Ipv6Prefix, str]


def as_prefix(value: PrefixLike) -> Ipv6Prefix:
    return value if isinstance(value, Ipv6Prefix) else Ipv6Prefix.parse(value)


@dataclass(frozen=True, order=True)
class MacAddr:
    """A 48-bit MAC address held as an integer."""

    value: int

    def __post_init__(self) -> None:
        if not 0 <= self.value < (1 << 48):
            raise ValueError("MAC out of range")

    @classmethod
    def parse(cls, text: str) -> "MacAddr":
        digits = text.strip().replace(":", "").replace("-", "").replace(".", "")
        if len(digits) != 12:
            raise ValueError(f"invalid MAC {text!r}")
        return cls(int(digits, 16))

    @classmethod
    def from_bytes(cls, octets: bytes) -> "MacAddr":
        if len(octets) != 6:
            raise ValueError("MAC needs 6 octets")
        return cls(int.from_bytes(octets, "big"))

    @property
    def octets(self) -> bytes:
        return self.value.to_bytes(6, "big")

    def oui(self) -> bytes:
        return self.octets[:3]

    @property
    def oui_int(self) -> int:
        return self.value >> 24

    @property
    def is_local(self) -> bool:
        """Universal/local bit: bit 1 of the first octet."""
        return bool((self.value >> 40) & 0x02)

    def __str__(self) -> str:
        return ":".join("%02x" % b for b in self.octets)


def mac_to_eui64_iid(mac: Union[MacAddr, int]) -> int:
    """Modified EUI-64 IID: flip the U/L bit and splice ff:fe after the OUI."""
    m = mac.value if isinstance(mac, MacAddr) else mac
    return (((m >> 24) << 40) | _FFFE_VALUE | (m & 0xFFFFFF)) ^ _UL_BIT_IID


def is_eui64(iid: int) -> bool:
    return (iid & _FFFE_MASK) == _FFFE_VALUE


def is_eui64_addr(addr: int) -> bool:
    return (addr & _FFFE_MASK) == _FFFE_VALUE


def eui64_iid_to_mac(iid: int) -> Optional[MacAddr]:
    """Recover the MAC embedded in an EUI-64 IID, or None for any other IID."""
    if (iid & _FFFE_MASK) != _FFFE_VALUE:
        return None
    iid ^= _UL_BIT_IID
    return MacAddr(((iid >> 40) << 24) | (iid & 0xFFFFFF))


def random_target_in(prefix: Ipv6Prefix, rng_seed) -> int:
    """Uniformly random address inside ``prefix``, deterministic per seed.

    ``rng_seed`` may be anything :class:`random.Random` accepts, or an
    existing ``random.Random`` instance to draw from.
    """
    rng = rng_seed if isinstance(rng_seed, random.Random) else random.Random(rng_seed)
    host_bits = ADDR_BITS - prefix.length
    return prefix.base | rng.getrandbits(host_bits) if host_bits else prefix.base


def prefix_distance_bits(a: int, b: int) -> int:
    """Bits needed to span the /64 networks of ``a`` and ``b``.

    ``ceil(log2(|high64(a) - high64(b)| + 1))``, so a range covering
    exactly 2**k /64s maps to k.
    """
    return range_bits(abs((a >> 64) - (b >> 64)))


def range_bits(span: int) -> int:
    """``ceil(log2(span + 1))`` computed exactly on integers."""
    if span < 0:
        raise ValueError("negative span")
    return span.bit_length() if span & (span + 1) else (span + 1).bit_length() - 1


@dataclass(frozen=True)
class AsEntry:
    prefix: Ipv6Prefix
    asn: int
    country: str = ""


class PrefixToAsTable:
    """Longest-prefix-match attribution of addresses to origin ASes.

    Entries are bucketed by prefix length; a lookup probes each populated
    length from most to least specific.
    """

    def __init__(self, entries: Iterable[AsEntry] = ()) -> None:
        self._by_len: dict[int, dict[int, AsEntry]] = {}
        self._lengths: list[int] = []
        self._count = 0
        for entry in entries:
            self.add(entry)

    def add(self, entry: AsEntry) -> None:
        bucket = self._by_len.get(entry.prefix.length)
        if bucket is None:
            bucket = self._by_len[entry.prefix.length] = {}
            self._lengths = sorted(self._by_len, reverse=True)
        if entry.prefix.key not in bucket:
            self._count += 1
        bucket[entry.prefix.key] = entry

    def __len__(self) -> int:
        return self._count

    def __iter__(self) -> Iterator[AsEntry]:
        for length in sorted(self._by_len):
            yield from self._by_len[length].values()

    def lookup(self, addr: int) -> Optional[AsEntry]:
        for length in self._lengths:
            entry = self._by_len[length].get(addr >> (ADDR_BITS - length))
            if entry is not None:
                return entry
        return None

    def asn_of(self, addr: int) -> Optional[int]:
        entry = self.lookup(addr)
        return entry.asn if entry else None

    @classmethod
    def from_csv(cls, stream: TextIO) -> "PrefixToAsTable":
        """Read ``prefix,asn,country`` rows (header required)."""
        reader = csv.DictReader(stream)
        missing = {"prefix", "asn"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"BGP snapshot missing columns: {sorted(missing)}")
        table = cls()
        for row in reader:
            table.add(
                AsEntry(
                    Ipv6Prefix.parse(row["prefix"], strict=False),
                    int(row["asn"]),
                    (row.get("country") or "").strip().upper(),
                )
            )
        return table

    @classmethod
    def load(cls, path) -> "PrefixToAsTable":
        with open(path, newline="") as fh:
            return cls.from_csv(fh)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["prefix", "asn", "country"])
        for entry in self:
            writer.writerow([str(entry.prefix), entry.asn, entry.country])
        return out.getvalue()
