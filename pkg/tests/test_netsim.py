import math
from types import SimpleNamespace

import numpy as np
import pytest

from qoesim import netsim, scenario
from qoesim.errors import ConfigError, DomainError


def default_channel(sigma=0.0):
    return netsim.ChannelModel(3.0, 30.0, sigma, -167.0)


def full_slice(cfg, groups=(1, 2, 3)):
    """Slice reserving every BS's full band split across groups."""
    n = len(groups)
    return SimpleNamespace(
        reserved_bw={(g, b.id): b.dl_bandwidth_hz / n
                     for g in groups for b in cfg.base_stations()},
        reserved_cpu={g: cfg.edge.capacity_cps / n for g in groups},
    )


def round_robin(state, t):
    per_bs = {}
    for p in state.profiles:
        per_bs.setdefault(state.runtime[p.id].serving_bs, []).append(p.id)
    out = {}
    k = len(state.profiles)
    for bs, uids in per_bs.items():
        for u in uids:
            out[u] = (state.bw_caps[bs] / len(uids), state.cpu_cap / k)
    return out


def make_state(seed=1, **over):
    over.setdefault("preset_mode", "free")
    cfg = scenario.parse_overrides({k: str(v) for k, v in over.items()})
    profiles = scenario.sample_users(cfg, np.random.default_rng(seed))
    groups = {p.id: p.structure_index for p in profiles}
    return cfg, netsim.SimState(cfg, profiles, groups)


class TestPathLoss:
    def test_reference_distance_identity(self):
        m = default_channel()
        assert netsim.path_loss(1.0, m, np.random.default_rng(0)) == 30.0

    def test_log_distance_formula(self):
        m = default_channel()
        assert netsim.path_loss(100.0, m, np.random.default_rng(0)) == pytest.approx(90.0)

    def test_shadowing_std(self):
        m = default_channel(sigma=4.0)
        rng = np.random.default_rng(1)
        draws = np.array([netsim.path_loss(50.0, m, rng) for _ in range(100_000)])
        assert abs(draws.std() - 4.0) < 0.1

    def test_domain_error(self):
        with pytest.raises(DomainError):
            netsim.path_loss(0.0, default_channel(), np.random.default_rng(0))


class TestAchievableRate:
    def test_zero_snr(self):
        assert netsim.achievable_rate(1e6, 0.0) == 0.0

    def test_unit_snr(self):
        assert netsim.achievable_rate(1e6, 1.0) == pytest.approx(1e6)

    def test_zero_bandwidth(self):
        for snr in (0.0, 1.0, 1e6):
            assert netsim.achievable_rate(0.0, snr) == 0.0


class TestStepPlayback:
    def test_steady_state(self):
        assert netsim.step_playback(5.0, 1.0, 1.0) == (5.0, 0.0)

    def test_full_stall(self):
        assert netsim.step_playback(0.0, 0.0, 1.0) == (0.0, 1.0)

    def test_partial_stall(self):
        buf, rebuf = netsim.step_playback(0.4, 0.2, 1.0)
        assert buf == 0.0
        assert rebuf == pytest.approx(0.4)

    def test_buffer_cap(self):
        buf, rebuf = netsim.step_playback(29.5, 3.0, 1.0, max_buffer_s=30.0)
        assert buf == 30.0
        assert rebuf == 0.0


class TestBehaviorEnvTrace:
    def _profile(self, speed, mean, amp=0.0, period=300.0):
        return scenario.UserProfile(
            0, ((0, 0), (10, 0), (0, 0)), speed, (mean, amp, period),
            4.0, 1, (0.5, 0.5))

    def test_lower_bounds(self):
        b, c = netsim.behavior_env_trace(self._profile(2.0, 0.0), 0.0)
        assert (b, c) == (1.0, 1.0)

    def test_upper_bounds(self):
        b, c = netsim.behavior_env_trace(self._profile(40.0, 99.0), 0.0,
                                         max_swipe_rate_per_min=18.0)
        assert (b, c) == (2.0, 2.0)

    def test_speed_midpoint(self):
        _, c = netsim.behavior_env_trace(self._profile(21.0, 5.0), 0.0)
        assert c == pytest.approx(1.5)

    def test_inverted_complexity_flag(self):
        _, c = netsim.behavior_env_trace(self._profile(40.0, 5.0), 0.0,
                                         complexity_increases_with_speed=False)
        assert c == 1.0

    def test_range_over_time(self):
        p = self._profile(25.0, 9.0, amp=3.0, period=120.0)
        for t in np.linspace(0, 600, 61):
            b, c = netsim.behavior_env_trace(p, t)
            assert 1.0 <= b <= 2.0 and 1.0 <= c <= 2.0


class TestRunWindow:
    def test_zero_bandwidth_starves(self):
        cfg, state = make_state(num_users=4)
        slc = SimpleNamespace(
            reserved_bw={(g, b.id): 0.0 for g in (1, 2, 3) for b in cfg.base_stations()},
            reserved_cpu={g: 0.0 for g in (1, 2, 3)})
        recs = netsim.run_window(state, slc, round_robin, np.random.default_rng(3), 60)
        assert all(r.rate_bps == 0.0 for r in recs)
        # rebuffer accumulates monotonically within each evaluation period
        by_user = {}
        for r in recs:
            by_user.setdefault(r.user, []).append(r.rebuffer_period_s)
        period = state.period_slots
        for series in by_user.values():
            for i, (a, b) in enumerate(zip(series, series[1:])):
                if (i + 1) % period != 0:
                    assert b >= a

    def test_determinism(self):
        cfg1, s1 = make_state(num_users=6)
        cfg2, s2 = make_state(num_users=6)
        r1 = netsim.run_window(s1, full_slice(cfg1), round_robin,
                               np.random.default_rng(7), 120)
        r2 = netsim.run_window(s2, full_slice(cfg2), round_robin,
                               np.random.default_rng(7), 120)
        assert r1 == r2

    def test_single_user_abundant_no_rebuffer_after_startup(self):
        cfg, state = make_state(num_users=1, arrival_rate_per_min=1e-6,
                                **{"radio.tx_power_dbm": 46.0})
        recs = netsim.run_window(state, full_slice(cfg), round_robin,
                                 np.random.default_rng(11), 120)
        # startup completes within the first segment download; nothing after
        startup_slots = int(math.ceil(cfg.catalog.segment_duration_s / cfg.slot_s))
        assert all(r.rebuffer_period_s == 0.0 for r in recs[startup_slots:])

    def test_startup_equals_segment_download_time(self):
        # slot shorter than a segment makes the startup stall observable
        cfg, state = make_state(num_users=1, arrival_rate_per_min=1e-6,
                                slot_s=0.25, **{"radio.tx_power_dbm": 46.0,
                                                "playback.eval_period_s": 1000.0})
        recs = netsim.run_window(state, full_slice(cfg), round_robin,
                                 np.random.default_rng(11), 400)
        rate = recs[0].rate_bps
        seg_bits = cfg.catalog.quality_levels_bps[0] * cfg.catalog.segment_duration_s
        expected_startup = seg_bits / rate
        total = recs[-1].rebuffer_period_s
        assert total == pytest.approx(expected_startup, abs=cfg.slot_s)

    def test_conservation_under_greedy_overrequest(self):
        cfg, state = make_state(num_users=8)
        slc = full_slice(cfg)

        def hog(state, t):  # every user demands the whole band and edge
            return {p.id: (1e9, 1e12) for p in state.profiles}

        recs = netsim.run_window(state, slc, hog, np.random.default_rng(5), 100)
        assert state.capacity_violations == 0
        per_slot_bs = {}
        per_slot_cpu = {}
        for r in recs:
            per_slot_bs[(r.t, r.serving_bs)] = per_slot_bs.get((r.t, r.serving_bs), 0.0) \
                + r.allocated_bw_hz
            per_slot_cpu[r.t] = per_slot_cpu.get(r.t, 0.0) + r.allocated_compute_cps
        for (t, bs), used in per_slot_bs.items():
            assert used <= state.bw_caps[bs] * (1 + 1e-9) + 1e-6
        for t, used in per_slot_cpu.items():
            assert used <= state.cpu_cap * (1 + 1e-9) + 1e-3

    def test_missing_pair_raises(self):
        cfg, state = make_state(num_users=6)
        slc = SimpleNamespace(
            reserved_bw={(1, b.id): b.dl_bandwidth_hz for b in cfg.base_stations()},
            reserved_cpu={1: cfg.edge.capacity_cps})
        with pytest.raises(ConfigError, match="active pair"):
            netsim.run_window(state, slc, round_robin, np.random.default_rng(2), 10)

    def test_record_invariants(self):
        cfg, state = make_state(num_users=6)
        recs = netsim.run_window(state, full_slice(cfg), round_robin,
                                 np.random.default_rng(13), 200)
        for r in recs:
            assert r.rate_bps >= 0 and r.allocated_bw_hz >= 0
            assert r.buffer_s >= 0 and r.rebuffer_period_s >= 0
            assert 0.0 <= r.quality <= 1.0
            assert 1.0 <= r.behavior <= 2.0 and 1.0 <= r.complexity <= 2.0
            assert 1.0 <= r.qoe_sample <= 5.0

    def test_quality_is_normalized_bitrate(self):
        cfg, state = make_state(num_users=4)
        recs = netsim.run_window(state, full_slice(cfg), round_robin,
                                 np.random.default_rng(17), 100)
        cat = cfg.video_catalog()
        valid_q = {cat.quality_of(b) for b in cat.quality_levels_bps}
        assert {round(r.quality, 9) for r in recs} <= {round(q, 9) for q in valid_q}

    def test_period_samples_collected_and_reset(self):
        cfg, state = make_state(num_users=4)
        n_slots = 100
        netsim.run_window(state, full_slice(cfg), round_robin,
                          np.random.default_rng(19), n_slots)
        periods = n_slots // state.period_slots
        assert len(state.period_samples) == periods * 4
        for ps in state.period_samples:
            assert 1.0 <= ps.sample.qoe <= 5.0
            assert ps.sample.r <= cfg.playback.eval_period_s + cfg.slot_s


class TestPathWalker:
    def test_loop_closure_and_speed(self):
        w = netsim.PathWalker(((0, 0), (100, 0), (100, 100), (0, 100), (0, 0)), 36.0)
        assert w.perimeter == 400.0
        assert w.position(0.0) == (0.0, 0.0)
        # 36 km/h = 10 m/s: after 5 s the user sits 50 m along the first edge
        assert w.position(5.0) == (50.0, 0.0)
        # a full lap takes 40 s
        x, y = w.position(40.0)
        assert (x, y) == pytest.approx((0.0, 0.0))
