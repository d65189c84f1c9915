import random

import pytest
from hypothesis import given, settings, strategies as st

from ibalign.channels import (
    Backlog, HChannelConfig, MChannelConfig, RChannelConfig, StreamStats, h_channel, header_atypicality,
    m_channel, method_rarity, r_channel, status_deviation,
)
from ibalign.telemetry import FlowRecord, FlowWindow, HttpRecord, MeminfoSnapshot, ProcSnapshot


def mem(pss=1000.0, alloc=50.0, size=100.0, **kw):
    return MeminfoSnapshot(pss, alloc, size, **kw)


def proc(cpu=0.0, mem_pct=1.0, res=1000.0, shr=500.0, cores=4):
    return ProcSnapshot(cpu, mem_pct, res, 2000.0, shr, cores)


def test_h_masked_when_empty():
    ev = h_channel(None, [], HChannelConfig(), StreamStats())
    assert ev.mask == 0 and ev.s == (0, 0, 0)
    ev = h_channel(FlowWindow({}), None, HChannelConfig(), StreamStats())
    assert ev.mask == 0


def test_h_saturates_at_one():
    http = [HttpRecord("DELETE", status=503, body_size=10, is_third_party=True, tracker_match=True,
                       reputation=1.0, body_entropy=8.0)]
    win = FlowWindow({("a", "b", 1, 2): FlowRecord(10, True, 10)})
    ev = h_channel(win, http, HChannelConfig(), StreamStats())
    assert ev.s[0] == 1.0


def test_h_malicious_bytes_alone():
    win = FlowWindow({("a", "b", 1, 2): FlowRecord(800, True, 800)})
    ev = h_channel(win, [], HChannelConfig(), StreamStats(), dt=5.0)
    assert ev.s == (pytest.approx(0.15), 0.0, 0.0)


def test_h_message_scores():
    assert method_rarity("GET") < method_rarity("PATCH") < method_rarity("TRACE") == 1.0
    assert header_atypicality("GET", frozenset()) > header_atypicality("GET", frozenset({"user-agent", "accept"}))
    assert [status_deviation(s) for s in (200, 302, 404, 500, None)] == [0, 0.3, 0.7, 1.0, 0]


def test_backlog_counts_pending_and_expired():
    b = Backlog()
    assert b.update([HttpRecord("GET", timestamp=0, request_id="a")], 0, 1000) == 1
    assert b.update([], 500, 1000) == 1
    assert b.update([], 2000, 1000) == 1  # expired this step, counted once
    assert b.update([], 2500, 1000) == 0
    b.update([HttpRecord("GET", timestamp=0, request_id="x")], 0, 1000)
    assert b.update([HttpRecord("GET", timestamp=10, status=200, request_id="x")], 10, 1000) == 0


def test_m_pressure_only():
    ev = m_channel(mem(), mem(), 5.0, MChannelConfig(), StreamStats())
    assert ev.s[1] == pytest.approx(0.25 * 1.0)


def test_m_gate_failing_zeroes_mem():
    ev = m_channel(mem(), mem(), 5.0, MChannelConfig(tau_mem=0.9), StreamStats())
    assert ev.s[1] == 0.0
    assert ev.detail["mem_raw"] > 0


def test_m_gc_contributes_nothing():
    cfg = MChannelConfig(alpha=(0.0, 1.0, 0.0, 0.0), tau_mem=0.0)
    ev = m_channel(mem(alloc=80), mem(alloc=20), 5.0, cfg, StreamStats())
    assert ev.detail["raw"]["heap"] < 0
    assert ev.s[1] == 0.0


def test_m_skipped_without_snapshot():
    assert m_channel(None, mem(), 5.0, MChannelConfig(), StreamStats()) is None
    assert m_channel(mem(), None, 5.0, MChannelConfig(), StreamStats()) is None


def test_r_cpu_normalised():
    ev = r_channel(None, proc(cpu=250), 5.0, RChannelConfig(gamma=(0.8, 0.0)), StreamStats())
    assert ev.s[2] == pytest.approx(0.8)
    assert ev.detail["raw"]["cpu_cap"] == 0.625


def test_r_flat_cpu_has_no_volatility():
    stats = StreamStats()
    prev = None
    for _ in range(6):
        ev = r_channel(prev, proc(cpu=100), 5.0, RChannelConfig(), stats)
        prev = proc(cpu=100)
    assert ev.detail["zabs"] == 0.0
    assert ev.s[2] == pytest.approx(0.8)


def test_r_masked_without_snapshot():
    assert r_channel(proc(), None, 5.0, RChannelConfig(), StreamStats()).mask == 0


http_st = st.builds(
    HttpRecord,
    method=st.sampled_from(["GET", "POST", "PUT", "DELETE", "PATCH", "OPTIONS", "FOO"]),
    status=st.one_of(st.none(), st.integers(100, 599)),
    body_size=st.integers(0, 10 ** 7),
    body_entropy=st.one_of(st.none(), st.floats(0, 8)),
    is_third_party=st.booleans(), tracker_match=st.booleans(), reputation=st.floats(0, 1),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.lists(http_st, max_size=6), st.integers(0, 10 ** 6), st.booleans()),
                min_size=1, max_size=12))
def test_h_bounded_and_capped(steps):
    cfg = HChannelConfig()
    stats, backlog = StreamStats(), Backlog()
    for k, (http, mal, flag) in enumerate(steps):
        win = FlowWindow({("a", "b", 1, 2): FlowRecord(mal, flag, mal)})
        ev = h_channel(win, http, cfg, stats, dt=5.0, step=k, now_ms=5000 * k, backlog=backlog)
        assert all(0.0 <= x <= 1.0 for x in ev.s)
        assert ev.s[1] <= cfg.max_mem and ev.s[2] <= cfg.max_res


def test_m_and_r_bounded_on_random_walks():
    rng = random.Random(11)
    ms, rs = StreamStats(), StreamStats()
    prev_m, prev_p = mem(), proc()
    for k in range(2000):
        size = rng.uniform(1, 1e6)
        cur_m = mem(rng.uniform(0, 1e6), rng.uniform(0, size), size, swap_pss_dirty=rng.uniform(0, 1e5),
                    local_binders=rng.randrange(500), webviews=rng.randrange(5), views=rng.randrange(3000))
        cur_p = proc(rng.uniform(0, 800), rng.uniform(0, 100), rng.uniform(0, 1e7), rng.uniform(0, 1e6))
        m = m_channel(prev_m, cur_m, rng.uniform(0.1, 10), MChannelConfig(), ms, step=k)
        r = r_channel(prev_p, cur_p, rng.uniform(0.1, 10), RChannelConfig(), rs, step=k)
        assert all(0.0 <= x <= 1.0 for x in m.s + r.s)
        assert r.s[0] == 0.0
        prev_m, prev_p = cur_m, cur_p
