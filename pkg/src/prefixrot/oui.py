"""IEEE OUI registry ingestion and per-AS manufacturer homogeneity."""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Optional, Union

from .addr import MacAddr, eui64_iid_to_mac

log = logging.getLogger(__name__)

UNKNOWN_VENDOR = "<unknown>"
MIN_IIDS = 100


class OuiLoadError(ValueError):
    pass


def _parse_oui(text: str) -> int:
    digits = text.strip().replace(":", "").replace("-", "").replace(".", "")
    if len(digits) != 6:
        raise ValueError(text)
    return int(digits, 16)


@dataclass
class OuiRegistry:
    entries: dict[int, str] = field(default_factory=dict)
    skipped_rows: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, oui: Union[int, str, bytes, MacAddr]) -> Optional[str]:
        if isinstance(oui, MacAddr):
            key = oui.oui_int
        elif isinstance(oui, bytes):
            key = int.from_bytes(oui[:3], "big")
        elif isinstance(oui, str):
            key = _parse_oui(oui)
        else:
            key = oui
        return self.entries.get(key)

    def vendor_of_iid(self, iid: int) -> Optional[str]:
        """Vendor for an EUI-64 IID; None if the IID is not EUI-64."""
        mac = eui64_iid_to_mac(iid)
        if mac is None:
            return None
        return self.entries.get(mac.oui_int, UNKNOWN_VENDOR)


def load_registry(source: Union[BinaryIO, bytes, str]) -> OuiRegistry:
    """Load an IEEE MA-L CSV or a compact ``oui,organization`` CSV.

    The IEEE layout is recognised by its ``Assignment`` and
    ``Organization Name`` header columns.  Any other first row is treated
    as the compact layout; a header row there is tolerated and skipped.
    """
    if isinstance(source, str):
        text = source
    else:
        raw = source if isinstance(source, bytes) else source.read()
        text = raw.decode("utf-8-sig", errors="replace")

    rows = csv.reader(io.StringIO(text))
    first = next(rows, None)
    if first is None:
        raise OuiLoadError("empty OUI source")

    registry = OuiRegistry()
    header = [c.strip() for c in first]
    if "Assignment" in header and "Organization Name" in header:
        oui_col = header.index("Assignment")
        org_col = header.index("Organization Name")
        body = rows
    else:
        oui_col, org_col = 0, 1
        body = [first, *rows]

    for lineno, row in enumerate(body, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            oui = _parse_oui(row[oui_col])
            org = row[org_col].strip()
            if not org:
                raise ValueError("empty organization")
        except (IndexError, ValueError):
            if lineno == 1 and oui_col == 0:
                # compact header such as "oui,organization"
                continue
            registry.skipped_rows += 1
            continue
        registry.entries[oui] = org

    if not registry.entries:
        raise OuiLoadError(f"no usable OUI rows ({registry.skipped_rows} malformed)")
    if registry.skipped_rows:
        log.warning("skipped %d malformed OUI rows", registry.skipped_rows)
    return registry


@dataclass
class HomogeneityReport:
    asn: int
    total_unique_iids: int
    top_vendor: str
    top_vendor_iids: int
    homogeneity: float
    vendor_histogram: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "asn": self.asn,
            "total_unique_iids": self.total_unique_iids,
            "top_vendor": self.top_vendor,
            "top_vendor_iids": self.top_vendor_iids,
            "homogeneity": self.homogeneity,
            "vendor_histogram": dict(sorted(self.vendor_histogram.items())),
        }


def homogeneity(
    iids: Iterable[int],
    asn: int,
    registry: OuiRegistry,
    min_iids: int = MIN_IIDS,
) -> Optional[HomogeneityReport]:
    """Share of an AS's unique EUI-64 IIDs made by its most common vendor.

    Vendors are compared by organization name.  IIDs whose OUI is not
    registered count under :data:`UNKNOWN_VENDOR`.  Returns None when the
    AS has fewer than ``min_iids`` unique IIDs.
    """
    unique = set(iids)
    if len(unique) < min_iids or not unique:
        return None
    counts: Counter[str] = Counter()
    for iid in unique:
        mac = eui64_iid_to_mac(iid)
        if mac is None:
            raise ValueError(f"IID {iid:#018x} is not EUI-64")
        counts[registry.entries.get(mac.oui_int, UNKNOWN_VENDOR)] += 1
    # ties resolve to the lexically smallest vendor so output is order-free
    top_vendor, top = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return HomogeneityReport(
        asn=asn,
        total_unique_iids=len(unique),
        top_vendor=top_vendor,
        top_vendor_iids=top,
        homogeneity=top / len(unique),
        vendor_histogram=dict(counts),
    )
