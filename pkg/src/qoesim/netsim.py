"""Time-slotted network simulation: mobility, wireless rates, video playback.

One `SimState` holds everything mutable for a single run.  `run_window`
advances the state across a slicing window, pulling per-user allocations
from an orchestrator callback each slot and enforcing slice reservations.
All randomness flows through one generator so the traffic stream is
byte-identical across schemes: every slot draws shadowing for every
(user, BS) pair plus one arrival uniform and one MOS uniform per user,
regardless of the allocation decisions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import qoe
from .errors import ConfigError, DomainError, ValidationError
from .scenario import ChannelConfig, ScenarioConfig, UserProfile


@dataclass(frozen=True)
class ChannelModel:
    path_loss_exponent: float
    ref_loss_db: float  # loss at 1 m
    shadowing_sigma_db: float
    noise_density_dbm_hz: float

    def __post_init__(self):
        if self.path_loss_exponent < 2.0:
            raise ValidationError("path_loss_exponent must be >= 2")
        if self.shadowing_sigma_db < 0.0:
            raise ValidationError("shadowing_sigma_db must be >= 0")

    @classmethod
    def from_config(cls, cc: ChannelConfig) -> "ChannelModel":
        return cls(cc.path_loss_exponent, cc.ref_loss_db,
                   cc.shadowing_sigma_db, cc.noise_density_dbm_hz)


class SlotRecord(NamedTuple):
    t: int
    user: int
    serving_bs: int
    rate_bps: float
    allocated_bw_hz: float
    allocated_compute_cps: float
    buffer_s: float
    rebuffer_period_s: float  # accumulated within the current evaluation period
    quality: float
    behavior: float
    complexity: float
    qoe_sample: float


SLOT_COLUMNS = SlotRecord._fields


def mean_path_loss(distance_m: float, model: ChannelModel) -> float:
    """Deterministic log-distance component of the path loss."""
    return model.ref_loss_db + 10.0 * model.path_loss_exponent * math.log10(distance_m)


def path_loss(distance_m: float, model: ChannelModel, rng: np.random.Generator) -> float:
    """Log-distance path loss with one lognormal shadowing draw, in dB."""
    if distance_m <= 0:
        raise DomainError(f"distance must be > 0, got {distance_m}")
    return mean_path_loss(distance_m, model) + rng.normal(0.0, model.shadowing_sigma_db)


def achievable_rate(bw_hz: float, snr_linear: float) -> float:
    """Shannon rate bw * log2(1 + snr) in bits/second."""
    if bw_hz == 0.0 or snr_linear <= 0.0:
        return 0.0
    return bw_hz * math.log2(1.0 + snr_linear)


def step_playback(buffer_s: float, downloaded_playtime_s: float, slot_s: float,
                  max_buffer_s: float = 30.0) -> tuple[float, float]:
    """Advance playback one slot; returns (buffer', rebuffer_increment)."""
    rebuffer = max(slot_s - buffer_s - downloaded_playtime_s, 0.0)
    new_buffer = min(max(buffer_s + downloaded_playtime_s - slot_s, 0.0), max_buffer_s)
    return new_buffer, rebuffer


def swipe_rate(profile: UserProfile, t_s: float) -> float:
    """Instantaneous swipe/request rate (per minute) of the sinusoid process."""
    mean, amp, period = profile.swipe_rate_params
    return max(mean + amp * math.sin(2.0 * math.pi * t_s / period), 0.0)


def behavior_env_trace(profile: UserProfile, t_s: float,
                       max_swipe_rate_per_min: float = 18.0,
                       complexity_increases_with_speed: bool = True) -> tuple[float, float]:
    """Ground-truth (B, C) at time t; both clamped into [1, 2]."""
    b = 1.0 + min(max(swipe_rate(profile, t_s) / max_swipe_rate_per_min, 0.0), 1.0)
    v = profile.speed_kmh
    frac = (v - 2.0) / 38.0 if complexity_increases_with_speed else (40.0 - v) / 38.0
    c = 1.0 + min(max(frac, 0.0), 1.0)
    return b, c


class PathWalker:
    """Position lookup along a closed waypoint loop at constant speed."""

    def __init__(self, waypoints, speed_kmh: float):
        self.pts = [(float(x), float(y)) for x, y in waypoints]
        segs = []
        cum = [0.0]
        for (x0, y0), (x1, y1) in zip(self.pts, self.pts[1:]):
            d = math.hypot(x1 - x0, y1 - y0)
            segs.append(d)
            cum.append(cum[-1] + d)
        self.cum = cum
        self.perimeter = cum[-1]
        self.speed_mps = speed_kmh / 3.6

    def position(self, t_s: float) -> tuple[float, float]:
        if self.perimeter == 0.0:
            return self.pts[0]
        s = (self.speed_mps * t_s) % self.perimeter
        # linear scan is fine: loops have 4 segments
        for i in range(len(self.cum) - 1):
            if s <= self.cum[i + 1]:
                seg_len = self.cum[i + 1] - self.cum[i]
                f = (s - self.cum[i]) / seg_len if seg_len > 0 else 0.0
                x0, y0 = self.pts[i]
                x1, y1 = self.pts[i + 1]
                return (x0 + f * (x1 - x0), y0 + f * (y1 - y0))
        return self.pts[-1]


class _UserRuntime:
    __slots__ = ("tier", "seg_fluid", "buffer", "period_rebuffer", "rate_ewma",
                 "eff_ewma", "serving_bs")

    def __init__(self):
        self.tier = 0
        self.seg_fluid = 0.0
        self.buffer = 0.0
        self.period_rebuffer = 0.0
        self.rate_ewma = 0.0
        self.eff_ewma = 1.0
        self.serving_bs = 0


class PeriodSample(NamedTuple):
    t: int
    user: int
    sample: qoe.FactorSample


class SimState:
    """Mutable world state for one simulation run."""

    def __init__(self, cfg: ScenarioConfig, profiles: list[UserProfile],
                 group_of: dict[int, int]):
        self.cfg = cfg
        self.profiles = profiles
        self.group_of = dict(group_of)
        self.catalog = cfg.video_catalog()
        self.base_stations = cfg.base_stations()
        self.channel = ChannelModel.from_config(cfg.channel)
        self.edge_capacity = cfg.edge.capacity_cps
        self.slot_s = cfg.slot_s
        self.period_slots = max(int(round(cfg.playback.eval_period_s / cfg.slot_s)), 1)
        self.walkers = [PathWalker(p.waypoints, p.speed_kmh) for p in profiles]
        self.runtime = [_UserRuntime() for _ in profiles]
        self.t = 0
        self.bw_caps: dict[int, float] = {b.id: b.dl_bandwidth_hz for b in self.base_stations}
        self.cpu_cap: float = self.edge_capacity
        self.reserved_pairs: set[tuple[int, int]] | None = None
        self.reserved_bw_detail: dict[tuple[int, int], float] = {}
        self.reserved_cpu_detail: dict[int, float] = {}
        self.period_samples: list[PeriodSample] = []
        self.arrival_log: list[tuple[int, int]] = []  # (slot, user) swipe events
        self.capacity_violations = 0
        # pre-computed per-BS and per-user constants
        self._psd_dbm_hz = [b.tx_power_dbm - 10.0 * math.log10(b.dl_bandwidth_hz)
                            for b in self.base_stations]
        self._costs = [self.catalog.compute_cost_cps(r)
                       for r in self.catalog.quality_levels_bps]
        self._mos_sigmas = np.array([math.sqrt(qoe.STRUCTURE_VARIANCE[p.structure_index])
                                     for p in profiles])

    # -- slice application ----------------------------------------------------

    def apply_slice(self, slice_cfg) -> None:
        """Install per-BS bandwidth and total compute caps from a slice config."""
        caps = {b.id: 0.0 for b in self.base_stations}
        for (group, bs), bw in slice_cfg.reserved_bw.items():
            if bs not in caps:
                raise ConfigError(f"slice references unknown base station {bs}")
            caps[bs] += bw
        for bs_id, cap in caps.items():
            hw = self.bw_caps_hw(bs_id)
            if cap > hw * (1 + 1e-9):
                raise ConfigError(f"slice bandwidth {cap:.0f} exceeds BS {bs_id} capacity")
        total_cpu = sum(slice_cfg.reserved_cpu.values())
        if total_cpu > self.edge_capacity * (1 + 1e-9):
            raise ConfigError("slice compute exceeds edge capacity")
        self.bw_caps = caps
        self.cpu_cap = min(total_cpu, self.edge_capacity)
        self.reserved_pairs = set(slice_cfg.reserved_bw.keys())
        self.reserved_bw_detail = dict(slice_cfg.reserved_bw)
        self.reserved_cpu_detail = dict(slice_cfg.reserved_cpu)

    def bw_caps_hw(self, bs_id: int) -> float:
        return self.base_stations[bs_id].dl_bandwidth_hz

    def check_coverage(self) -> None:
        if self.reserved_pairs is None:
            return
        for p in self.profiles:
            g = self.group_of[p.id]
            bs = self.runtime[p.id].serving_bs
            if (g, bs) not in self.reserved_pairs:
                raise ConfigError(f"slice omits active pair (group={g}, bs={bs})")

    # -- per-user helpers ------------------------------------------------------

    def positions(self, t_s: float) -> list[tuple[float, float]]:
        return [w.position(t_s) for w in self.walkers]

    def pick_tier(self, user: int, cpu_cps: float) -> int:
        """Highest tier sustainable by the recent rate and the compute grant."""
        rt = self.runtime[user]
        budget = self.cfg.playback.abr_safety * rt.rate_ewma
        tier = 0
        for i, bitrate in enumerate(self.catalog.quality_levels_bps):
            if bitrate <= budget and self._costs[i] <= cpu_cps:
                tier = i
        return tier


def _enforce_caps(state: SimState, alloc: dict[int, tuple[float, float]]):
    """Clip requested allocations to slice caps, granting in user-id order."""
    bw_left = dict(state.bw_caps)
    cpu_left = state.cpu_cap
    out = {}
    for p in state.profiles:
        bw_req, cpu_req = alloc.get(p.id, (0.0, 0.0))
        bs = state.runtime[p.id].serving_bs
        bw = min(bw_req, bw_left[bs])
        cpu = min(cpu_req, cpu_left)
        bw_left[bs] -= bw
        cpu_left -= cpu
        out[p.id] = (bw, cpu, bs)
    # conservation invariant: post-enforcement sums never exceed reservations
    used_bw: dict[int, float] = {b: 0.0 for b in state.bw_caps}
    used_cpu = 0.0
    for uid, (bw, cpu, bs) in out.items():
        used_bw[bs] += bw
        used_cpu += cpu
    for bs, used in used_bw.items():
        if used > state.bw_caps[bs] * (1 + 1e-9) + 1e-6:
            state.capacity_violations += 1
    if used_cpu > state.cpu_cap * (1 + 1e-9) + 1e-3:
        state.capacity_violations += 1
    return out


def advance_slots(state: SimState, orchestrator: Callable, n_slots: int,
                  rng: np.random.Generator,
                  records: list[SlotRecord] | None = None,
                  window_slot0: int = 0) -> None:
    """Advance the world n_slots, drawing all stochastic inputs in fixed order."""
    k = len(state.profiles)
    n_bs = len(state.base_stations)
    cat = state.catalog
    slot = state.slot_s
    sigma = state.channel.shadowing_sigma_db
    noise = state.channel.noise_density_dbm_hz
    seg = cat.segment_duration_s
    max_buf = state.cfg.playback.max_buffer_s
    max_swipe = state.cfg.users.max_swipe_rate_per_min
    pos_c = state.cfg.users.complexity_increases_with_speed
    period = state.period_slots

    for step in range(n_slots):
        t = state.t
        t_s = t * slot
        # fixed-order stochastic inputs (scheme-independent)
        shadow = rng.normal(0.0, 1.0, (k, n_bs))
        uni = rng.random((k, 2))

        # mobility + attachment on the deterministic loss component
        positions = state.positions(t_s)
        pl = np.empty((k, n_bs))
        for i, p in enumerate(state.profiles):
            x, y = positions[i]
            for j, bs in enumerate(state.base_stations):
                d = max(math.hypot(x - bs.position[0], y - bs.position[1]), 1.0)
                pl[i, j] = mean_path_loss(d, state.channel)
            state.runtime[i].serving_bs = int(np.argmin(pl[i]))

        alloc = orchestrator(state, window_slot0 + step)
        granted = _enforce_caps(state, alloc)

        mus = np.empty(k)
        row_cache = []
        for i, p in enumerate(state.profiles):
            rt = state.runtime[i]
            bw, cpu, bs = granted[i]
            snr_db = (state._psd_dbm_hz[bs] - (pl[i, bs] + sigma * shadow[i, bs])
                      - noise)
            snr = 10.0 ** (snr_db / 10.0)
            eff = math.log2(1.0 + snr)
            rate = achievable_rate(bw, snr)
            rt.eff_ewma = 0.9 * rt.eff_ewma + 0.1 * eff
            rt.rate_ewma = 0.8 * rt.rate_ewma + 0.2 * rate

            # swipe arrival: abandon current video, fresh startup
            p_arrival = 1.0 - math.exp(-swipe_rate(p, t_s) / 60.0 * slot)
            if uni[i, 0] < p_arrival:
                rt.buffer = 0.0
                rt.seg_fluid = 0.0
                rt.tier = state.pick_tier(i, cpu)
                state.arrival_log.append((t, i))

            bitrate = cat.quality_levels_bps[rt.tier]
            cost = state._costs[rt.tier]
            f = min(rate / bitrate, cpu / cost)  # playtime downloadable per second
            headroom = max(max_buf - rt.buffer - rt.seg_fluid, 0.0)
            inflow = min(f * slot, slot + seg, headroom)
            rt.seg_fluid += inflow
            completed = math.floor(rt.seg_fluid / seg + 1e-12) * seg
            downloaded = completed
            if completed > 0.0:
                rt.seg_fluid -= completed
                rt.tier = state.pick_tier(i, cpu)  # re-decide at segment boundary
            rt.buffer, rebuf = step_playback(rt.buffer, downloaded, slot, max_buf)
            rt.period_rebuffer += rebuf

            b, c = behavior_env_trace(p, t_s, max_swipe, pos_c)
            q = cat.quality_of(bitrate)
            mus[i] = (qoe.qos_score(p.structure_index, rt.period_rebuffer, q)
                      * qoe.impact(b, c, *p.true_impact_params))
            row_cache.append((bs, rate, bw, cpu, rt.buffer, rt.period_rebuffer, q, b, c))

        period_end = (t + 1) % period == 0
        if records is not None or period_end:
            # one uniform per user per slot; inverse-CDF keeps draw count fixed
            samples = qoe.truncated_normal_from_uniform(
                mus, state._mos_sigmas, uni[:, 1])
        if records is not None:
            for i in range(k):
                bs, rate, bw, cpu, buf, rb, q, b, c = row_cache[i]
                records.append(SlotRecord(t, i, bs, rate, bw, cpu, buf, rb, q,
                                          b, c, float(samples[i])))
        if period_end:
            for i in range(k):
                _, _, _, _, _, rb, q, b, c = row_cache[i]
                state.period_samples.append(PeriodSample(
                    t, i, qoe.FactorSample(float(samples[i]), rb, q, b, c)))
                state.runtime[i].period_rebuffer = 0.0
        state.t += 1


def run_window(state: SimState, slice_cfg, orchestrator: Callable,
               rng: np.random.Generator, n_slots: int,
               collect_records: bool = True) -> list[SlotRecord]:
    """Simulate one slicing window under fixed reservations.

    The orchestrator callback is invoked every slot with (state, slot index
    within the window) and returns {user: (bw_hz, cpu_cps)}.  Raises
    ConfigError when the slice omits an active (group, BS) pair.
    """
    state.apply_slice(slice_cfg)
    # attachment for coverage check at window start
    positions = state.positions(state.t * state.slot_s)
    for i, p in enumerate(state.profiles):
        x, y = positions[i]
        dists = [max(math.hypot(x - b.position[0], y - b.position[1]), 1.0)
                 for b in state.base_stations]
        state.runtime[i].serving_bs = int(np.argmin(
            [mean_path_loss(d, state.channel) for d in dists]))
    state.check_coverage()
    records: list[SlotRecord] | None = [] if collect_records else None
    advance_slots(state, orchestrator, n_slots, rng, records)
    return records if records is not None else []
