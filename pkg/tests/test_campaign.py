import json
import random

import pytest

from prefixrot.addr import AsEntry, Ipv6Prefix, PrefixToAsTable
from prefixrot.campaign import (
    CampaignDir,
    CampaignError,
    CampaignState,
    GridTargets,
    Stage,
    daily_run,
    density_over_time,
    expand_seeds,
    parse_seed_list,
    retained_48s,
    run_density_stage,
    run_rotation_stage,
    summarize_rotation,
)
from prefixrot.inference import DensityClass, RotationVerdict
from prefixrot.probe import Observation, ResponseClass
from prefixrot.sim import DAILY_UNIFORM, NO_ROTATION, PoolSpec, SimConfig, SimTransport, build_world, generate_fleet

P = Ipv6Prefix.parse


def world(rotation=DAILY_UNIFORM, n=200, seed=0):
    cfg = SimConfig.single(
        64500, "2001:db8::/32", [PoolSpec(P("2001:db8:5::/48"), 56, rotation)],
        generate_fleet(n, random.Random(seed)), seed=seed, country="DE",
    )
    return build_world(cfg)


def test_grid_targets_lazy_and_in_cells():
    g = GridTargets([P("2001:db8::/48"), P("2001:db8:2::/47")], 56, 1)
    assert len(g) == 256 + 512
    for i in (0, 255, 256, 767):
        cell = i if i < 256 else i - 256
        base = P("2001:db8::/48") if i < 256 else P("2001:db8:2::/47")
        assert g[i] in base.subprefix(cell, 56)
    big = GridTargets([P("2001:db8::/36")], 64, 0)
    assert len(big) == 1 << 28
    assert big[len(big) - 1] in P("2001:db8:fff:ffff::/64")
    with pytest.raises(ValueError):
        GridTargets([P("2001:db8::/60")], 56, 0)


def test_parse_seed_list():
    text = "# comment\n2001:db8::/32\n\nnot-a-prefix\n2001:db8::/64\n2001:db8:1::/48 # inline\n"
    prefixes, errors = parse_seed_list(text)
    assert prefixes == [P("2001:db8::/32"), P("2001:db8:1::/48")]
    assert [e[0] for e in errors] == [4, 5]


def test_retained_48s_drops_shared_responders():
    r = (0x20010DB8 << 96) | 0x3A10D5FFFE000001
    obs = [
        Observation(0, "e", P("2001:db8:1::/48").base, r, ResponseClass.AdminProhibited),
        Observation(0, "e", P("2001:db8:2::/48").base, r, ResponseClass.AdminProhibited),
        Observation(0, "e", P("2001:db8:3::/48").base, r + (1 << 80), ResponseClass.AdminProhibited),
        Observation(0, "e", P("2001:db8:4::/48").base, r | 0xFF000000, ResponseClass.AdminProhibited),
    ]
    assert retained_48s(obs) == [P("2001:db8:3::/48")]


def test_pipeline_against_simulator():
    w = world()
    t = SimTransport(w)
    kept, obs = expand_seeds([P("2001:db8::/44")], t, 5)
    assert len(obs) == 1 << 12 - 8 and kept == [P("2001:db8:5::/48")]
    density, _ = run_density_stage(kept, t, 5)
    assert density[P("2001:db8:5::/48")].cls is DensityClass.High
    bgp = PrefixToAsTable([AsEntry(P("2001:db8::/32"), 64500, "DE")])
    verdicts, summary, a, b = run_rotation_stage(kept, t, 5, 1e6, 0, w.advance_day, bgp)
    assert verdicts[P("2001:db8:5::/48")].verdict
    assert [o.target for o in a] == [o.target for o in b]
    assert summary.by_asn == {64500: 1} and summary.by_country == {"DE": 1}
    daily = daily_run(kept, t, 5, 2)
    assert [o.target for o in daily] == [o.target for o in a]
    assert daily[0].run == "daily-002" and daily[0].ts == 2 * 86400.0


def test_static_world_not_flagged():
    w = world(NO_ROTATION)
    verdicts, *_ = run_rotation_stage([P("2001:db8:5::/48")], SimTransport(w), 1, 1e6, 0, w.advance_day)
    assert not verdicts[P("2001:db8:5::/48")].verdict


def test_expand_empty_seed_list():
    with pytest.raises(CampaignError):
        expand_seeds([], None)


def test_rotation_summary_table():
    bgp = PrefixToAsTable([AsEntry(P(f"2001:db8:{k:x}00::/40"), 100 + k, "DE" if k < 4 else "US") for k in range(8)])
    verdicts = {}
    for k in range(8):
        for j in range(8 - k):
            p = P(f"2001:db8:{k:x}{j:02x}::/48")
            verdicts[p] = RotationVerdict(p, 1, True)
    static = P("2001:db8:7ff::/48")
    verdicts[static] = RotationVerdict(static, 0, False)
    s = summarize_rotation(verdicts, bgp)
    rows = s.table(top=5)
    assert rows[0] == ("100", 8, "DE", 26)
    assert rows[5] == ("3 Other ASNs", 6, "", 0)
    assert rows[-1] == ("Total", 36, "Total", 36)
    assert "Total" in s.format()
    assert json.loads(json.dumps(s.to_dict()))


def test_campaign_dir_state_and_lock(tmp_path):
    with CampaignDir(tmp_path, seed=9) as camp:
        assert camp.state.schedule_seed == 9
        obs = [Observation(1.5, "x", 1, None, ResponseClass.Silent)]
        camp.record_run("x", "daily", 3, obs)
        camp.state.advance_to(Stage.SeedExpansion)
        with pytest.raises(CampaignError):
            with CampaignDir(tmp_path):
                pass
    with CampaignDir(tmp_path) as camp:
        assert camp.state.schedule_seed == 9 and camp.state.stage is Stage.SeedExpansion
        assert camp.load_run("x") == obs and camp.runs_of_kind("daily") == ["x"]
        with pytest.raises(CampaignError):
            camp.state.require(Stage.Density)
    with pytest.raises(CampaignError):
        with CampaignDir(tmp_path, seed=10):
            pass
    state = json.loads((tmp_path / "state.json").read_text())
    assert CampaignState.from_dict(state).to_dict() == state


def test_density_over_time_series():
    w = world(n=100)
    series = density_over_time(w, P("2001:db8:5::/48"), 30, seed=0, grid_len=56)
    values = [v for _, v in series["2001:db8:5::/48"]]
    assert len(values) == 30 and values[0] == 100
    assert min(values) >= 99 or w.hour == 5


def test_target_counts_at_scale():
    from prefixrot.campaign import expansion_targets

    seeds = [Ipv6Prefix((0x2A00 << 112) | (k << 96), 32) for k in range(938)]
    assert len(expansion_targets(seeds, 0)) == 61_472_768
    density = GridTargets([Ipv6Prefix((0x2A00 << 112) | (k << 80), 48) for k in range(48_970)], 56, 0)
    assert len(density) == 12_536_320


def test_expansion_retains_exactly_the_eui_48s():
    pools = [PoolSpec(P(f"2001:db8:{3 * k + 1:x}::/48"), 56, NO_ROTATION) for k in range(10)]
    fleet = []
    rng = random.Random(3)
    for k in range(10):
        fleet += [c.__class__(c.mac, pool=k) for c in generate_fleet(256, rng)]
    cfg = SimConfig.single(64500, "2001:db8::/32", pools, fleet, seed=1)
    kept, obs = expand_seeds([P("2001:db8::/32")], SimTransport(build_world(cfg)), 2)
    assert len(obs) == 65536
    assert kept == sorted(p.prefix for p in pools)


def test_rotation_stage_empty_input():
    verdicts, summary, a, b = run_rotation_stage([], None)
    assert verdicts == {} and summary.total == 0 and a == b == []


def test_stage_rerun_is_idempotent(tmp_path):
    import json as _json

    from prefixrot.cli import main

    cfg = tmp_path / "w.json"
    cfg.write_text(_json.dumps({
        "seed": 1, "asn": 64500, "bgp_prefix": "2001:db8::/44",
        "pools": [{"prefix": "2001:db8::/48", "alloc_len": 56, "rotation": {"kind": "daily_uniform"}}],
        "fleet": [{"generate": {"count": 250}}],
    }))
    seeds = tmp_path / "seeds.txt"
    seeds.write_text("2001:db8::/48\n")
    base = ["--state", str(tmp_path / "c"), "--seed", "3", "--transport", f"sim:{cfg}"]
    assert main(base + ["expand", "--seeds", str(seeds)]) == 0
    assert main(base + ["density"]) == 0
    first = (tmp_path / "c" / "runs" / "density.jsonl").read_bytes()
    assert main(base + ["density"]) == 0
    assert (tmp_path / "c" / "runs" / "density.jsonl").read_bytes() == first
    assert main(base + ["detect-rotation"]) == 0
    snap = (tmp_path / "c" / "runs" / "rotation-b.jsonl").read_bytes()
    assert main(base + ["detect-rotation"]) == 0
    assert (tmp_path / "c" / "runs" / "rotation-b.jsonl").read_bytes() == snap
