"""Command line front end: ``prefixrot <subcommand>``.

Every subcommand works on a campaign state directory (``--state``) and a
probe transport (``--transport sim:<config.json>`` or
``--transport replay:<log.jsonl>``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Optional

from .addr import LOW64_MASK, Ipv6Prefix, PrefixToAsTable, format_addr, format_iid, is_eui64_addr, parse_iid
from .campaign import (
    CampaignDir,
    CampaignError,
    Stage,
    daily_run,
    density_over_time,
    expand_seeds,
    parse_seed_list,
    prefixes_of,
    run_density_stage,
    run_rotation_stage,
)
from .figures import FigureKind, FigureSpec, emit_figure, prefixes_per_iid
from .inference import DensityClass, inference_csv, inference_json, infer_per_as, pathology_scan
from .oui import homogeneity, load_registry
from .probe import ReplayTransport, load_log
from .sim import SimConfig, SimTransport, build_world, config_to_dict, load_config
from .tracker import MissingInference, make_plan, summarize, track

log = logging.getLogger("prefixrot")


class TransportHandle:
    """Builds the probe transport for a given simulated day."""

    def __init__(self, spec: str) -> None:
        kind, _, arg = spec.partition(":")
        if not arg:
            raise CampaignError(f"bad --transport {spec!r}; use sim:<config> or replay:<log>")
        self.kind = kind
        self.config: Optional[SimConfig] = None
        self._world = None
        self._replay = None
        if kind == "sim":
            self.config = load_config(arg)
        elif kind == "replay":
            self._replay = ReplayTransport(load_log(arg))
        else:
            raise CampaignError(f"unknown transport kind {kind!r}")

    def world(self, day: int):
        if self._world is None or self._world.day > day:
            self._world = build_world(self.config)
        while self._world.day < day:
            self._world.advance_day()
        return self._world

    def at(self, day: int):
        if self.kind == "sim":
            return SimTransport(self.world(day))
        return self._replay

    def bgp(self) -> Optional[PrefixToAsTable]:
        return self.config.bgp_table() if self.config else None


def _bgp(args, handle: Optional[TransportHandle]) -> PrefixToAsTable:
    if args.bgp:
        return PrefixToAsTable.load(args.bgp)
    table = handle.bgp() if handle else None
    if table is None:
        raise CampaignError("a BGP snapshot is required (--bgp prefix,asn,country CSV)")
    return table


def _all_observations(camp: CampaignDir, kinds=("daily",)):
    obs = []
    for kind in kinds:
        for run in camp.runs_of_kind(kind):
            obs.extend(camp.load_run(run))
    return obs


# -- subcommands --------------------------------------------------------------

def cmd_sim_build(args) -> int:
    config = load_config(args.config)
    world = build_world(config)
    out = Path(args.out or args.state)
    out.mkdir(parents=True, exist_ok=True)
    (out / "world.json").write_text(json.dumps(world.summary(), indent=2, sort_keys=True) + "\n")
    (out / "config.expanded.json").write_text(json.dumps(config_to_dict(config), indent=2) + "\n")
    (out / "bgp.csv").write_text(config.bgp_table().to_csv())
    seeds = sorted({str(Ipv6Prefix.of(a.bgp_prefix.base, max(32, a.bgp_prefix.length))) for a in config.ases
                    if a.bgp_prefix.length <= 48})
    (out / "seeds.txt").write_text("# seed prefixes derived from the simulated BGP table\n" + "\n".join(seeds) + "\n")
    print(f"{len(config.ases)} ASes, {len(world.active_cpes())} active CPEs; wrote world.json bgp.csv seeds.txt to {out}")
    return 0


def cmd_expand(args, camp: CampaignDir, handle: TransportHandle) -> int:
    text = Path(args.seeds).read_text()
    seeds, errors = parse_seed_list(text)
    for lineno, msg in errors:
        print(f"{args.seeds}:{lineno}: {msg}", file=sys.stderr)
    if not seeds:
        raise CampaignError(f"{args.seeds}: no usable seed prefixes")
    day = camp.state.sim_day
    kept, obs = expand_seeds(seeds, handle.at(day), camp.state.schedule_seed, args.rate, day)
    camp.record_run("expand", "expand", day, obs)
    camp.state.seeds = [str(p) for p in seeds]
    camp.state.validated_48s = [str(p) for p in kept]
    camp.state.stage_days["expand"] = day
    camp.state.advance_to(Stage.SeedExpansion)
    camp.write_text("validated48.txt", "".join(f"{p}\n" for p in kept))
    print(f"probed {len(obs)} targets; kept {len(kept)} /48s with a unique EUI-64 responder")
    return 0


def cmd_density(args, camp: CampaignDir, handle: TransportHandle) -> int:
    camp.state.require(Stage.SeedExpansion)
    day = camp.state.stage_days.get("density", camp.state.sim_day)
    report, obs = run_density_stage(
        prefixes_of(camp.state.validated_48s), handle.at(day), camp.state.schedule_seed, args.rate, day
    )
    camp.record_run("density", "density", day, obs)
    camp.write_json("density.json", [e.to_dict() for e in report.values()])
    high = [str(p) for p, e in report.items() if e.cls is DensityClass.High]
    camp.state.high_density_48s = high
    camp.state.stage_days["density"] = day
    camp.state.advance_to(Stage.Density)
    counts = defaultdict(int)
    for e in report.values():
        counts[e.cls.value] += 1
    print(", ".join(f"{counts[c.value]} {c.value}" for c in DensityClass))
    return 0


def cmd_detect_rotation(args, camp: CampaignDir, handle: TransportHandle) -> int:
    camp.state.require(Stage.Density)
    day = camp.state.stage_days.get("rotation", camp.state.sim_day)
    bgp = _bgp(args, handle)
    state = {"day": day}

    def advance() -> None:
        state["day"] += 1

    prefixes = prefixes_of(camp.state.high_density_48s)

    class _DaySwitch:
        """Routes each snapshot to the transport for its own day."""

        concurrent = False

        def probe(self, target):
            return handle.at(state["day"]).probe(target)

        def use_run(self, run):
            t = handle.at(state["day"])
            if hasattr(t, "use_run"):
                t.use_run(run)

    verdicts, summary, snap_a, snap_b = run_rotation_stage(
        prefixes, _DaySwitch(), camp.state.schedule_seed, args.rate, day, advance, bgp
    )
    camp.record_run("rotation-a", "rotation", day, snap_a)
    camp.record_run("rotation-b", "rotation", day + 1, snap_b)
    camp.write_json("rotation.json", {"verdicts": [v.to_dict() for v in verdicts.values()], "summary": summary.to_dict()})
    camp.write_text("rotation_summary.txt", summary.format() + "\n")
    camp.state.rotating_48s = [str(p) for p, v in verdicts.items() if v.verdict]
    camp.state.stage_days["rotation"] = day
    camp.state.sim_day = max(camp.state.sim_day, day + 1)
    camp.state.advance_to(Stage.RotationDetect)
    print(summary.format())
    return 0


def cmd_daily_run(args, camp: CampaignDir, handle: TransportHandle) -> int:
    camp.state.require(Stage.RotationDetect)
    prefixes = prefixes_of(camp.state.rotating_48s)
    if args.prefixes:
        prefixes, errors = parse_seed_list(Path(args.prefixes).read_text())
        for lineno, msg in errors:
            print(f"{args.prefixes}:{lineno}: {msg}", file=sys.stderr)
    if not prefixes:
        print("no rotating /48s to probe")
        return 0
    for _ in range(args.days):
        camp.state.sim_day += 1
        day = camp.state.sim_day
        obs = daily_run(prefixes, handle.at(day), camp.state.schedule_seed, day, args.rate)
        run_id = f"daily-{day:03d}"
        camp.record_run(run_id, "daily", day, obs)
        print(f"{run_id}: {len(obs)} probes, {sum(o.responder is not None for o in obs)} responses")
    camp.state.advance_to(Stage.Daily)
    return 0


def _inference(args, camp, handle):
    obs = _all_observations(camp, ("daily",)) or _all_observations(camp, ("rotation",))
    if not obs:
        raise CampaignError("no daily or rotation runs to infer from")
    bgp = _bgp(args, handle)
    return infer_per_as(obs, bgp), obs, bgp


def cmd_infer(args, camp: CampaignDir, handle: Optional[TransportHandle]) -> int:
    results, _, _ = _inference(args, camp, handle)
    camp.write_text("infer.csv", inference_csv(results))
    camp.write_text("infer.json", inference_json(results) + "\n")
    sys.stdout.write(inference_csv(results))
    return 0


def cmd_pathology(args, camp: CampaignDir, handle: Optional[TransportHandle]) -> int:
    obs = _all_observations(camp, ("expand", "density", "rotation", "daily"))
    report = pathology_scan(obs, _bgp(args, handle))
    camp.write_json("pathology.json", report.to_dict())
    print(f"{len(report.multi_as_iids)} multi-AS IIDs, {len(report.provider_changers)} provider changers")
    for iid, asns in sorted(report.multi_as_iids.items()):
        print(f"  multi-AS {format_iid(iid)}: {len(asns)} ASes")
    return 0


def cmd_track(args, camp: CampaignDir, handle: TransportHandle) -> int:
    results, obs, bgp = _inference(args, camp, handle)
    excluded = pathology_scan(obs, bgp).multi_or_changer
    last_seen: dict[int, tuple[float, int]] = {}
    for o in obs:
        r = o.responder
        if r is not None and is_eui64_addr(r) and (r & LOW64_MASK) not in excluded:
            iid = r & LOW64_MASK
            if iid not in last_seen or o.ts >= last_seen[iid][0]:
                last_seen[iid] = (o.ts, r)
    if args.iid:
        chosen = [parse_iid(t) for t in args.iid]
    else:
        # at most one IID per AS, like a targeted study across providers
        chosen, used_as = [], set()
        for iid in sorted(last_seen):
            asn = bgp.asn_of(last_seen[iid][1])
            if asn in used_as or asn not in results:
                continue
            used_as.add(asn)
            chosen.append(iid)
            if len(chosen) >= args.count:
                break
    plans = []
    for iid in chosen:
        if iid not in last_seen:
            raise CampaignError(f"IID {format_iid(iid)} never observed")
        asn = bgp.asn_of(last_seen[iid][1])
        inf = results.get(asn)
        try:
            plans.append(make_plan(iid, inf and inf.alloc, inf and inf.pool, last_seen[iid][1], args.stop_after))
        except MissingInference as exc:
            raise CampaignError(f"{format_iid(iid)} (AS{asn}): {exc}") from None
    start = camp.state.sim_day + 1
    day_box = {"day": start}

    class _DayTransport:
        concurrent = True

        def probe(self, target):
            return handle.at(day_box["day"]).probe(target)

    def advance():
        day_box["day"] += 1

    records = track(plans, _DayTransport(), args.days, camp.state.schedule_seed, advance, first_day=start, rate=args.rate)
    camp.state.sim_day = day_box["day"]
    report = summarize(records, bgp)
    camp.write_text("tracking.csv", report.to_csv())
    camp.write_text("tracking.jsonl", report.to_jsonl())
    camp.write_json("tracking_plans.json", [p.to_dict() for p in plans])
    sys.stdout.write(report.to_csv())
    print(f"mean targets found per day: {report.mean_daily_hits():.2f} of {len(plans)}")
    return 0


def cmd_report(args, camp: CampaignDir, handle: Optional[TransportHandle]) -> int:
    st = camp.state
    print(f"stage: {st.stage.name}  sim day: {st.sim_day}  schedule seed: {st.schedule_seed}")
    print(f"seeds: {len(st.seeds)}  validated /48s: {len(st.validated_48s)}  "
          f"high density: {len(st.high_density_48s)}  rotating: {len(st.rotating_48s)}")
    for run, rec in sorted(st.runs.items()):
        print(f"  run {run:<14} kind={rec.kind:<9} day={rec.day:<4} probes={rec.count}")
    summary_txt = camp.path / "rotation_summary.txt"
    if summary_txt.exists():
        print("\nRotating /48s by ASN and country:")
        print(summary_txt.read_text().rstrip())
    if args.oui:
        with open(args.oui, "rb") as fh:
            registry = load_registry(fh)
        obs = _all_observations(camp, ("daily",)) or _all_observations(camp, ("rotation",))
        bgp = _bgp(args, handle)
        iids_by_as: dict[int, set[int]] = defaultdict(set)
        for o in obs:
            if o.responder is not None and is_eui64_addr(o.responder):
                asn = bgp.asn_of(o.responder)
                if asn is not None:
                    iids_by_as[asn].add(o.responder & LOW64_MASK)
        rows = []
        for asn in sorted(iids_by_as):
            rep = homogeneity(iids_by_as[asn], asn, registry, args.min_iids)
            if rep:
                rows.append(rep.to_dict())
                print(f"AS{asn}: homogeneity {rep.homogeneity:.4f} ({rep.top_vendor}, {rep.top_vendor_iids}/{rep.total_unique_iids})")
        camp.write_json("homogeneity.json", rows)
    return 0


def cmd_figure(args, camp: CampaignDir, handle: Optional[TransportHandle]) -> int:
    kind = FigureKind(args.kind)
    out = Path(args.out)
    spec = FigureSpec(kind, out, {}, args.title or "")
    if kind is FigureKind.AllocationHeatmap:
        if not args.prefix:
            raise CampaignError("--prefix /48 required for a heatmap")
        run = args.run or (camp.runs_of_kind("rotation") or camp.runs_of_kind("daily") or [None])[0]
        spec.inputs["prefix"] = args.prefix
        data = camp.load_run(run) if run else []
    elif kind is FigureKind.DensityByDay:
        if handle is None or handle.kind != "sim":
            raise CampaignError("DensityByDay needs a sim transport")
        if not args.prefix:
            raise CampaignError("--prefix <pool> required")
        world = build_world(handle.config)
        data = density_over_time(world, Ipv6Prefix.parse(args.prefix), args.hours, camp.state.schedule_seed, args.grid)
    elif kind is FigureKind.IidTimeline:
        if not args.iid:
            raise CampaignError("--iid required for a timeline")
        target = parse_iid(args.iid[0])
        bgp = _bgp(args, handle)
        data = []
        for o in _all_observations(camp, ("rotation", "daily")):
            if o.responder is not None and (o.responder & LOW64_MASK) == target:
                data.append((o.ts / 86400.0, f"AS{bgp.asn_of(o.responder)}"))
    elif kind is FigureKind.CdfPrefixesPerIid:
        data = list(prefixes_per_iid(_all_observations(camp, ("daily",))).values())
    elif kind in (FigureKind.CdfAllocBits, FigureKind.CdfPoolVsBgp):
        results, _, _ = _inference(args, camp, handle)
        if kind is FigureKind.CdfAllocBits:
            data = {
                "per IID": [64 - b for r in results.values() for b in r.alloc.per_iid_bits.values()],
                "per AS median": [r.alloc.median_alloc_len for r in results.values() if r.alloc.median_alloc_len],
            }
        else:
            data = {
                "rotation pool": [r.pool.median_pool_len for r in results.values() if r.pool.median_pool_len],
                "BGP prefix": [r.pool.bgp_len for r in results.values() if r.pool.bgp_len],
            }
    elif kind is FigureKind.CdfHomogeneity:
        path = camp.path / "homogeneity.json"
        data = [row["homogeneity"] for row in json.loads(path.read_text())] if path.exists() else []
    else:  # pragma: no cover
        raise CampaignError(f"unsupported figure {kind}")
    path = emit_figure(spec, data)
    print(f"wrote {path}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefixrot", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="schedule seed (fixed per campaign)")
    parser.add_argument("--rate", type=float, default=10_000.0, help="probes per second")
    parser.add_argument("--transport", default=None, help="sim:<config.json> or replay:<log.jsonl>")
    parser.add_argument("--state", default="campaign", help="campaign state directory")
    parser.add_argument("--bgp", default=None, help="BGP snapshot CSV (prefix,asn,country)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim-build", help="validate a simulator config and write its BGP table and seeds")
    p.add_argument("config")
    p.add_argument("--out", default=None)

    p = sub.add_parser("expand", help="stage 1: seed /48 expansion")
    p.add_argument("--seeds", required=True)

    sub.add_parser("density", help="stage 2: /48 EUI-64 density")
    sub.add_parser("detect-rotation", help="stage 3: two-snapshot rotation detection")

    p = sub.add_parser("daily-run", help="daily sweeps of rotating /48s")
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--prefixes", default=None, help="override /48 list file")

    sub.add_parser("infer", help="per-AS allocation and rotation pool inference")

    p = sub.add_parser("track", help="targeted tracking of EUI-64 IIDs")
    p.add_argument("--iid", action="append", default=[])
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--stop-after", type=int, default=7, help="days unseen before giving up")

    sub.add_parser("pathology", help="multi-AS IIDs and provider changers")

    p = sub.add_parser("report", help="campaign summary")
    p.add_argument("--oui", default=None, help="OUI registry CSV for homogeneity")
    p.add_argument("--min-iids", type=int, default=100)

    p = sub.add_parser("figure", help="render an SVG figure")
    p.add_argument("--kind", required=True, choices=[k.value for k in FigureKind])
    p.add_argument("--out", required=True)
    p.add_argument("--prefix", default=None)
    p.add_argument("--run", default=None)
    p.add_argument("--iid", action="append", default=[])
    p.add_argument("--hours", type=int, default=72)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--title", default=None)
    return parser


NEEDS_TRANSPORT = {"expand", "density", "detect-rotation", "daily-run", "track"}
HANDLERS = {
    "expand": cmd_expand,
    "density": cmd_density,
    "detect-rotation": cmd_detect_rotation,
    "daily-run": cmd_daily_run,
    "infer": cmd_infer,
    "track": cmd_track,
    "pathology": cmd_pathology,
    "report": cmd_report,
    "figure": cmd_figure,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "sim-build":
            return cmd_sim_build(args)
        if args.command in NEEDS_TRANSPORT and not args.transport:
            raise CampaignError(f"{args.command} needs --transport")
        handle = TransportHandle(args.transport) if args.transport else None
        with CampaignDir(args.state, args.seed) as camp:
            return HANDLERS[args.command](args, camp, handle)
    except (CampaignError, FileNotFoundError, ValueError) as exc:
        print(f"prefixrot: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
