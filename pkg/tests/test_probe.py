import io
import threading

import pytest
from hypothesis import given, settings, strategies as st

from prefixrot.probe import (
    CampaignStats,
    IndexPermutation,
    Observation,
    ReplayTransport,
    ResponseClass,
    SimClock,
    TokenBucket,
    TransportError,
    expected_probes_to_hit,
    load_log,
    permuted_schedule,
    read_csv,
    read_jsonl,
    run_campaign,
    save_log,
    write_csv,
    write_jsonl,
)


class EchoTransport:
    """Answers every probe from target+1 with an EchoReply."""

    concurrent = True

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def probe(self, target):
        with self._lock:
            self.calls += 1
        return (target + 1, ResponseClass.EchoReply)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3000), st.integers(0, 2**64))
def test_permutation_is_bijection(n, seed):
    perm = IndexPermutation(n, seed)
    out = list(perm)
    assert sorted(out) == list(range(n))
    assert [perm(i) for i in range(min(n, 50))] == out[: min(n, 50)]
    assert all(perm.inverse(j) == i for i, j in enumerate(out))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 2**128 - 1), min_size=1, max_size=400), st.integers(0, 1000))
def test_schedule_is_permutation_of_targets(targets, seed):
    sched = permuted_schedule(targets, seed, "r")
    specs = list(sched)
    assert sorted(s.target for s in specs) == sorted(targets)
    assert [s.sequence for s in specs] == list(range(len(targets)))
    assert all(s.run_id == "r" for s in specs)


def test_schedule_deterministic_and_seed_dependent():
    targets = list(range(1000))
    a = [s.target for s in permuted_schedule(targets, 1)]
    assert a == [s.target for s in permuted_schedule(targets, 1)]
    assert a != [s.target for s in permuted_schedule(targets, 2)]
    assert a != targets


def test_empty_schedule_rejected():
    with pytest.raises(ValueError):
        permuted_schedule([], 0)


def test_large_lazy_schedule_needs_no_materialisation():
    perm = IndexPermutation(61_472_768, "seed")
    first = [perm(i) for i in range(1000)]
    assert len(set(first)) == 1000 and max(first) < 61_472_768


@pytest.mark.parametrize("rate", [10.0, 1000.0, 10_000.0])
def test_rate_compliance_every_window(rate):
    clock = SimClock()
    obs = list(run_campaign(permuted_schedule(range(int(rate * 5)), 0), EchoTransport(), rate, clock=clock))
    ts = [o.ts for o in obs]
    assert ts == sorted(ts)
    # any one-second window holds at most rate sends (plus the token in hand)
    j = 0
    for i in range(len(ts)):
        while ts[i] - ts[j] >= 1.0:
            j += 1
        assert i - j + 1 <= rate + 1
    assert ts[-1] == pytest.approx((len(ts) - 1) / rate)


def test_token_bucket_refills_to_capacity():
    clock = SimClock()
    bucket = TokenBucket(100, clock)
    assert bucket.acquire() == 0.0
    assert bucket.acquire() == pytest.approx(0.01)
    clock.sleep(10)
    sends = [bucket.acquire() for _ in range(150)]
    assert sum(1 for t in sends if t == sends[0]) == 100


@pytest.mark.parametrize("in_flight", [1, 8])
def test_loss_free_and_ordered(in_flight):
    targets = list(range(5000))
    sched = permuted_schedule(targets, 3, "x")
    stats = CampaignStats()
    obs = list(run_campaign(sched, EchoTransport(), 1e6, in_flight, clock=SimClock(), stats=stats))
    assert [o.target for o in obs] == [s.target for s in sched]
    assert all(o.responder == o.target + 1 for o in obs)
    assert stats.sent == stats.responses == 5000


class FlakyTransport:
    concurrent = False

    def probe(self, target):
        if target % 3 == 0:
            raise TransportError("boom")
        if target % 3 == 1:
            return (target, ResponseClass.AdminProhibited, 2.5)
        return (target, ResponseClass.NoRoute, 0.1)


def test_errors_and_timeouts_become_silent():
    stats = CampaignStats()
    obs = list(run_campaign(permuted_schedule(range(300), 0), FlakyTransport(), 1e5, clock=SimClock(), stats=stats))
    assert len(obs) == 300
    assert stats.errors == 100 and stats.timeouts == 100 and stats.responses == 100
    for o in obs:
        if o.target % 3 == 2:
            assert o.cls is ResponseClass.NoRoute and o.responder == o.target
        else:
            assert o.cls is ResponseClass.Silent and o.responder is None


def test_bad_arguments():
    with pytest.raises(ValueError):
        list(run_campaign(permuted_schedule([1], 0), EchoTransport(), 0))
    with pytest.raises(ValueError):
        list(run_campaign(permuted_schedule([1], 0), EchoTransport(), 1, in_flight=0))


def test_expected_probes_formula():
    assert expected_probes_to_hit(46, 64) == 2**17
    assert expected_probes_to_hit(48, 48) == 1
    assert expected_probes_to_hit(48, 56) == 128
    with pytest.raises(ValueError):
        expected_probes_to_hit(56, 48)


def sample_obs():
    return [
        Observation(0.0, "a", 0x20010DB8 << 96, (0x20010DB8 << 96) | 0x3A10D5FFFEAABBCC, ResponseClass.AdminProhibited),
        Observation(0.5, "a", (0x20010DB8 << 96) | 1, None, ResponseClass.Silent),
        Observation(1.0 / 3, "b", (0x20010DB8 << 96) | 2, 5, ResponseClass.EchoReply),
    ]


def test_jsonl_and_csv_round_trip(tmp_path):
    obs = sample_obs()
    buf = io.StringIO()
    assert write_jsonl(obs, buf) == 3
    assert list(read_jsonl(io.StringIO(buf.getvalue()))) == obs
    buf = io.StringIO()
    write_csv(obs, buf)
    assert list(read_csv(io.StringIO(buf.getvalue()))) == obs
    for name in ("log.jsonl", "log.csv"):
        save_log(obs, tmp_path / name)
        assert load_log(tmp_path / name) == obs


def test_observation_json_keys():
    line = sample_obs()[0].to_json()
    assert line.startswith('{"ts":0.0,"run":"a","target":"2001:db8::"')
    assert '"class":"AdminProhibited"' in line


def test_observation_validation():
    with pytest.raises(ValueError):
        Observation.from_dict({"ts": 0, "run": "a", "target": "::1", "responder": None, "class": "EchoReply"})
    with pytest.raises(ValueError):
        Observation.from_dict({"ts": 0, "run": "a", "target": "::1", "responder": "::2", "class": "Silent"})


def test_replay_transport_runs():
    obs = sample_obs() + [Observation(2.0, "b", 0x20010DB8 << 96, 9, ResponseClass.EchoReply)]
    rt = ReplayTransport(obs)
    assert rt.probe(0x20010DB8 << 96) == (9, ResponseClass.EchoReply)
    rt.use_run("a")
    assert rt.probe(0x20010DB8 << 96)[0] == obs[0].responder
    assert rt.probe(12345) == (None, ResponseClass.Silent)
    assert rt.misses == 1
    replayed = list(run_campaign(permuted_schedule([o.target for o in obs[:2]], 0, "a"), rt, 1e4, clock=SimClock()))
    assert {(o.target, o.responder, o.cls) for o in replayed} == {(o.target, o.responder, o.cls) for o in obs[:2]}
