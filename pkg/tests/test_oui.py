import random

import pytest
from hypothesis import given, settings, strategies as st

from prefixrot.addr import MacAddr, mac_to_eui64_iid
from prefixrot.oui import UNKNOWN_VENDOR, OuiLoadError, homogeneity, load_registry

IEEE = (
    "Registry,Assignment,Organization Name,Organization Address\n"
    'MA-L,3810D5,AVM Audiovisuelles Marketing und Computersysteme GmbH,"Alt-Moabit 95 Berlin DE 10559"\n'
    "MA-L,00A057,LANCOM Systems GmbH,Wuerselen DE\n"
    "MA-L,5C4979,AVM Audiovisuelles Marketing und Computersysteme GmbH,Berlin DE\n"
    "MA-L,ZZZZZZ,Broken Row,Nowhere\n"
)


def iid(oui: int, low: int) -> int:
    return mac_to_eui64_iid((oui << 24) | low)


def test_ieee_layout():
    reg = load_registry(IEEE.encode())
    assert len(reg) == 3
    assert reg.skipped_rows == 1
    assert reg.lookup("38:10:d5").startswith("AVM")
    assert reg.lookup(MacAddr.parse("00:a0:57:01:02:03")) == "LANCOM Systems GmbH"
    assert reg.lookup(bytes.fromhex("5c4979")).startswith("AVM")
    assert reg.lookup(0x123456) is None


def test_compact_layout_with_header():
    reg = load_registry("oui,organization\n38-10-D5,AVM\n001e73,zte corporation\n")
    assert len(reg) == 2 and reg.skipped_rows == 0
    assert reg.vendor_of_iid(iid(0x001E73, 5)) == "zte corporation"
    assert reg.vendor_of_iid(iid(0xABCDEF, 5)) == UNKNOWN_VENDOR
    assert reg.vendor_of_iid(0x1234) is None


def test_empty_registry_raises():
    with pytest.raises(OuiLoadError):
        load_registry(b"")
    with pytest.raises(OuiLoadError):
        load_registry("junk,\nmore junk\n")


def test_homogeneity_groups_by_organization():
    reg = load_registry(IEEE)
    ids = [iid(0x3810D5, i) for i in range(60)] + [iid(0x5C4979, i) for i in range(30)]
    ids += [iid(0x00A057, i) for i in range(10)]
    rep = homogeneity(ids, 64500, reg)
    assert rep.total_unique_iids == 100
    assert rep.top_vendor.startswith("AVM")
    assert rep.homogeneity == pytest.approx(0.9)


def test_homogeneity_threshold_and_unknown():
    reg = load_registry(IEEE)
    assert homogeneity([iid(0x3810D5, i) for i in range(99)], 1, reg) is None
    ids = [iid(0x999999, i) for i in range(80)] + [iid(0x3810D5, i) for i in range(20)]
    rep = homogeneity(ids, 1, reg)
    assert rep.top_vendor == UNKNOWN_VENDOR
    assert rep.vendor_histogram[UNKNOWN_VENDOR] == 80


def test_homogeneity_counts_unique_iids():
    reg = load_registry(IEEE)
    ids = [iid(0x3810D5, i) for i in range(100)] * 3
    assert homogeneity(ids, 1, reg).total_unique_iids == 100


def test_homogeneity_rejects_non_eui():
    reg = load_registry(IEEE)
    with pytest.raises(ValueError):
        homogeneity([1] + [iid(0x3810D5, i) for i in range(100)], 1, reg, min_iids=1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_homogeneity_permutation_invariant(seed):
    reg = load_registry(IEEE)
    rng = random.Random(seed)
    ids = [iid(rng.choice([0x3810D5, 0x00A057, 0x5C4979, 0x777777]), rng.getrandbits(24)) for _ in range(150)]
    shuffled = ids[:]
    rng.shuffle(shuffled)
    a = homogeneity(ids, 1, reg, min_iids=1)
    b = homogeneity(shuffled, 1, reg, min_iids=1)
    assert a.to_dict() == b.to_dict()
