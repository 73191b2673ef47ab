import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from prefixrot.addr import AsEntry, Ipv6Prefix, PrefixToAsTable, mac_to_eui64_iid, parse_addr
from prefixrot.inference import (
    INFERENCE_COLUMNS,
    DensityClass,
    ScheduleMismatch,
    allocation_size,
    classify_density,
    detect_rotation,
    infer_per_as,
    inference_csv,
    inference_json,
    lower_median,
    pathology_scan,
    response_target_map,
    rotation_pool_size,
)
from prefixrot.probe import Observation, ResponseClass as RC

P = Ipv6Prefix.parse
BASE = parse_addr("2001:db8:1::")
EUI = mac_to_eui64_iid(0x3810D5000001)


def eui(n):
    return mac_to_eui64_iid(0x3810D5000000 + n)


def obs(target, responder, run="r", ts=0.0):
    cls = RC.Silent if responder is None else RC.AdminProhibited
    return Observation(ts, run, target, responder, cls)


def test_lower_median():
    assert lower_median([3]) == 3
    assert lower_median([4, 1, 3, 2]) == 2
    assert lower_median([5, 1, 9]) == 5
    with pytest.raises(ValueError):
        lower_median([])


def sweep_allocations(alloc_len, n_cpes, seed):
    """Every /64 of a /48 probed; each CPE owns a random /alloc_len block."""
    rng = random.Random(seed)
    blocks = rng.sample(range(1 << (alloc_len - 48)), n_cpes)
    out = []
    for k, b in enumerate(blocks):
        base = BASE | (b << (128 - alloc_len))
        responder = base | eui(k)
        for j in range(1 << (64 - alloc_len)):
            out.append(obs(base | (j << 64) | 0x1234, responder))
    return out


@pytest.mark.parametrize("alloc_len", [56, 60, 64])
def test_allocation_size_exact_on_full_sweep(alloc_len):
    inf = allocation_size(response_target_map(sweep_allocations(alloc_len, 50, alloc_len)))
    assert inf.median_alloc_len == alloc_len
    assert set(inf.per_iid_bits.values()) == {64 - alloc_len}
    assert inf.histogram() == {alloc_len: 50}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([56, 58, 60, 62, 64]))
def test_allocation_size_order_invariant(seed, alloc_len):
    data = sweep_allocations(alloc_len, 8, seed)
    shuffled = data[:]
    random.Random(seed).shuffle(shuffled)
    a = allocation_size(response_target_map(data))
    b = allocation_size(response_target_map(shuffled))
    assert a == b


def test_allocation_unions_targets_per_iid():
    # the same IID answering from two WAN addresses (it moved mid-run)
    r1 = BASE | EUI
    r2 = (BASE + (5 << 64)) | EUI
    m = {r1: {BASE | 1, BASE + (1 << 64)}, r2: {BASE + (3 << 64)}}
    assert allocation_size(m).per_iid_bits == {EUI: 2}


def test_allocation_skips_non_eui_and_excluded():
    m = {BASE | 0x1234: {BASE, BASE + (255 << 64)}, BASE | EUI: {BASE, BASE + (15 << 64)}}
    assert allocation_size(m).median_alloc_len == 60
    empty = allocation_size(m, exclude_iids={EUI})
    assert empty.empty and empty.median_alloc_len is None


def test_response_target_map_requires_single_run():
    data = [obs(BASE, BASE | EUI, "a"), obs(BASE + 1, BASE | EUI, "b")]
    with pytest.raises(ValueError):
        response_target_map(data)
    assert response_target_map(data, run="a") == {BASE | EUI: {BASE}}


def test_pool_size_from_spread():
    responders = [(BASE + (k << 72)) | EUI for k in (0, 5, 200)]
    responders += [(BASE + (3 << 64)) | eui(2)]
    bgp = PrefixToAsTable([AsEntry(P("2001:db8::/32"), 1), AsEntry(P("2001:db8:1::/48"), 2)])
    pool = rotation_pool_size(responders, bgp)
    assert pool.per_iid_bits[EUI] == 16  # 200 * 256 /64s -> ceil(log2(51201))
    assert pool.per_iid_bits[eui(2)] == 0
    assert pool.median_pool_len == 64
    assert pool.bgp_len == 48
    assert rotation_pool_size([BASE | 7]).empty


def density_obs(n_eui, probes=256, extra_non_eui=0):
    out = []
    for j in range(probes):
        target = BASE | (j << 72) | 9
        if j < n_eui:
            out.append(obs(target, (BASE | (j << 72)) | eui(j)))
        elif j < n_eui + extra_non_eui:
            out.append(Observation(0, "r", target, BASE | 1, RC.NoRoute))
        else:
            out.append(obs(target, None))
    return out


@pytest.mark.parametrize("n,cls", [(0, DensityClass.Unresponsive), (2, DensityClass.Low), (3, DensityClass.High)])
def test_density_thresholds(n, cls):
    entry = classify_density(density_obs(n))[P("2001:db8:1::/48")]
    assert entry.cls is cls
    assert entry.probes_sent == 256 and entry.unique_eui_responders == n


def test_density_non_eui_responses_are_low_not_unresponsive():
    entry = classify_density(density_obs(0, extra_non_eui=10))[P("2001:db8:1::/48")]
    assert entry.cls is DensityClass.Low and entry.responses == 10


def test_density_counts_unique_responders():
    data = [obs(BASE | (j << 72), BASE | EUI) for j in range(256)]
    entry = classify_density(data)[P("2001:db8:1::/48")]
    assert entry.unique_eui_responders == 1 and entry.cls is DensityClass.Low
    with pytest.raises(ValueError):
        classify_density(data, expected=[P("2001:db8::/47")])


def snapshot(answers, run):
    return [obs(t, r, run) for t, r in answers]


def test_detect_rotation_flags_changed_48s():
    static = BASE + (1 << 80)
    a = [(BASE | 1, BASE | EUI), (static | 1, static | eui(2)), (static | 2, None)]
    b = [(BASE | 1, (BASE + (1 << 64)) | EUI), (static | 1, static | eui(2)), (static | 2, None)]
    v = detect_rotation(snapshot(a, "a"), snapshot(b, "b"))
    assert v[P("2001:db8:1::/48")].verdict and v[P("2001:db8:1::/48")].changed_pairs == 2
    assert not v[P("2001:db8:2::/48")].verdict


def test_detect_rotation_counts_eui_to_silent_and_non_eui():
    a = [(BASE | 1, BASE | EUI), (BASE | 2, BASE | eui(3))]
    b = [(BASE | 1, None), (BASE | 2, BASE | 0x5555)]
    v = detect_rotation(snapshot(a, "a"), snapshot(b, "b"))[P("2001:db8:1::/48")]
    assert v.verdict and v.changed_pairs == 2


def test_detect_rotation_ignores_non_eui_churn():
    a = [(BASE | 1, BASE | 0x1111)]
    b = [(BASE | 1, BASE | 0x2222)]
    assert not detect_rotation(snapshot(a, "a"), snapshot(b, "b"))[P("2001:db8:1::/48")].verdict


def test_detect_rotation_requires_same_order():
    a = snapshot([(BASE | 1, None), (BASE | 2, None)], "a")
    with pytest.raises(ScheduleMismatch):
        detect_rotation(a, a[::-1])
    with pytest.raises(ScheduleMismatch):
        detect_rotation(a, a[:1])


def two_as_bgp():
    return PrefixToAsTable([AsEntry(P("2001:db8::/32"), 100, "DE"), AsEntry(P("2001:db9::/32"), 200, "NL")])


def test_pathology_multi_as_vs_changer():
    a_net, b_net = parse_addr("2001:db8::"), parse_addr("2001:db9::")
    data = []
    for d in range(10):
        ts = d * 86400.0
        data.append(obs(a_net, a_net | eui(1), ts=ts))
        data.append(obs(b_net, b_net | eui(1), ts=ts))
        data.append(obs(a_net | 2, (a_net if d < 5 else b_net) | eui(2), ts=ts))
        data.append(obs(a_net | 3, a_net | eui(3), ts=ts))
    rep = pathology_scan(data, two_as_bgp())
    assert rep.multi_as_iids == {eui(1): [100, 200]}
    assert rep.provider_changers == {eui(2): [(100, 0, 4), (200, 5, 9)]}
    assert rep.multi_or_changer == {eui(1), eui(2)}
    assert json.loads(json.dumps(rep.to_dict()))


def test_infer_per_as_excludes_pathologies_and_exports():
    a_net = parse_addr("2001:db8::")
    data = []
    for k in range(20):
        wan = a_net | (k << 72)
        for j in range(256):
            data.append(obs(wan | (j << 64), wan | eui(k), "day0"))
    data.append(obs(parse_addr("2001:db9::"), parse_addr("2001:db9::") | eui(0), "day0"))
    res = infer_per_as(data, two_as_bgp())
    assert set(res) == {100, 200}
    assert res[200].iid_count == 0 and res[200].alloc.empty
    assert res[100].alloc.median_alloc_len == 56
    assert res[100].iid_count == 19
    assert res[100].country == "DE"
    csv_text = inference_csv(res)
    assert csv_text.splitlines()[0] == ",".join(INFERENCE_COLUMNS)
    assert csv_text.splitlines()[1:] == ["100,56,64,32,19", "200,,,,0"]
    assert json.loads(inference_json(res))[0]["alloc_histogram"] == {"56": 19}
