"""Benchmark orchestration/slicing strategies, drop-in against the proposed
two-level agent pipeline.

* w/o DA: one generic QoE model for everyone, round-robin in-slot
  scheduling, greedy slicing at a fixed window.
* PDRL-L1: a deeper (five-layer) branch-dueling network maps the
  concatenated user states straight to per-user shares, bypassing the
  clustering and the convex solver; level two unchanged.
* HSLA-L2: demand estimation from bare QoS thresholds (SLA tier per user's
  ELA, context impact ignored); level one unchanged.
"""
from __future__ import annotations

import enum

import numpy as np

from . import da1, learn, netsim, qoe
from .errors import ShapeMismatch
from .scenario import ScenarioConfig, VideoCatalog


class SchemeId(enum.Enum):
    PROPOSED = "proposed"
    WITHOUT_DA = "wo-da"
    PDRL_L1 = "pdrl-l1"
    HSLA_L2 = "hsla-l2"


PDRL_USER_FEATURES = 8  # buffer, quality, eff, ela + 3 structure one-hot + load


def round_robin_allocate(users: list[int], budget: float,
                         quantum: float | None = None,
                         rotation: int = 0) -> dict[int, float]:
    """Equal split of a budget; indivisible quanta rotate their remainder."""
    if not users:
        return {}
    if quantum is None:
        share = budget / len(users)
        return {u: share for u in users}
    total_q = int(budget / quantum + 1e-9)
    base, extra = divmod(total_q, len(users))
    out = {}
    for i, u in enumerate(users):
        bonus = 1 if (i - rotation) % len(users) < extra else 0
        out[u] = (base + bonus) * quantum
    return out


class RoundRobinOrchestrator:
    """Per-slot equal split of each BS pool and the compute pool."""

    def __init__(self, rotation_step: bool = True):
        self.rotation = 0
        self.rotation_step = rotation_step

    def __call__(self, state, slot: int) -> dict[int, tuple[float, float]]:
        by_bs: dict[int, list[int]] = {}
        for p in state.profiles:
            by_bs.setdefault(state.runtime[p.id].serving_bs, []).append(p.id)
        cpu_share = round_robin_allocate([p.id for p in state.profiles],
                                         state.cpu_cap)
        out = {}
        for bs, users in by_bs.items():
            bw_share = round_robin_allocate(users, state.bw_caps.get(bs, 0.0),
                                            rotation=self.rotation)
            for u in users:
                out[u] = (bw_share[u], cpu_share[u])
        if self.rotation_step:
            self.rotation += 1
        return out


class ExplorationOrchestrator:
    """Bootstrap allocator: random per-epoch weights shake quality and
    rebuffer levels across users so the model fits see informative data."""

    def __init__(self, rng: np.random.Generator, epoch_slots: int = 10):
        self.rng = rng
        self.epoch_slots = epoch_slots
        self.cached: dict[int, tuple[float, float]] = {}

    def __call__(self, state, slot: int) -> dict[int, tuple[float, float]]:
        if slot % self.epoch_slots == 0 or not self.cached:
            by_bs: dict[int, list[int]] = {}
            for p in state.profiles:
                by_bs.setdefault(state.runtime[p.id].serving_bs, []).append(p.id)
            k = len(state.profiles)
            w_cpu = self.rng.uniform(0.05, 1.0, k) ** 2
            cpu_tot = w_cpu.sum()
            out = {}
            for bs, users in by_bs.items():
                w_bw = self.rng.uniform(0.05, 1.0, len(users)) ** 2
                bw_tot = w_bw.sum()
                for i, u in enumerate(users):
                    out[u] = (w_bw[i] / bw_tot * state.bw_caps.get(bs, 0.0),
                              w_cpu[u] / cpu_tot * state.cpu_cap)
            self.cached = out
        return self.cached


def generic_model(cfg: ScenarioConfig) -> qoe.QoEModel:
    """Population-level combined model: impact params at the configured
    distribution means (no per-user fitting)."""
    mean = 0.5 * (cfg.users.impact_min + cfg.users.impact_max)
    return qoe.QoEModel(3, (mean, mean), 0.5, 0)


def wo_da_demands(cfg: ScenarioConfig, elas: dict[int, float],
                  mean_eff: float, catalog: VideoCatalog,
                  params: da1.DemandParams,
                  window_s: float) -> dict[int, da1.ResourceDemand]:
    """Generic-model demand at the population-average context."""
    model = generic_model(cfg)
    traj = np.full((8, 2), 1.5)
    return {u: da1.predict_demand(model, elas[u], traj, catalog, mean_eff,
                                  params, window_s, user=u)
            for u in elas}


def hsla_demand(model: qoe.QoEModel, ela: float, trajectory: np.ndarray,
                catalog: VideoCatalog, eff_bps_per_hz: float,
                params: da1.DemandParams, window_s: float,
                user: int = -1) -> da1.ResourceDemand:
    """SLA-style demand: pick the tier whose bare QoS score meets the ELA,
    ignoring the context impact entirely."""
    qos_only = qoe.QoEModel(model.structure_index, (0.0, 0.0),
                            model.fit_rmse, model.sample_count)
    return da1.predict_demand(qos_only, ela, trajectory, catalog,
                              eff_bps_per_hz, params, window_s, user=user)


def pdrl_state_vector(state, models: dict[int, qoe.QoEModel],
                      last_cpu: dict[int, float]) -> np.ndarray:
    """Concatenated per-user feature blocks in user-id order."""
    cat = state.catalog
    cap = state.cpu_cap if state.cpu_cap > 0 else 1.0
    blocks = []
    for p in state.profiles:
        rt = state.runtime[p.id]
        struct = models[p.id].structure_index
        one_hot = [1.0 if s == struct else 0.0 for s in (1, 2, 3)]
        blocks.append([
            min(rt.buffer / state.cfg.playback.max_buffer_s, 1.0),
            cat.quality_of(cat.quality_levels_bps[rt.tier]),
            min(rt.eff_ewma / 8.0, 1.0),
            (p.ela - 3.0) / 2.0,
            min(last_cpu.get(p.id, 0.0) / cap, 1.0),
            *one_hot,
        ])
    return np.concatenate(blocks)


class PdrlOrchestrator:
    """Five-layer BDQN drives per-user shares directly (two branches per
    user: bandwidth and compute), renormalized within each BS pool."""

    def __init__(self, models: dict[int, qoe.QoEModel], policy,
                 cfg: ScenarioConfig):
        self.models = models
        self.policy = policy
        self.cfg = cfg
        self.epoch_slots = cfg.agent.epoch_slots
        self.forced_actions: np.ndarray | None = None
        self.cached: dict[int, tuple[float, float]] = {}
        self._last_cpu: dict[int, float] = {}

    def state_vector(self, state) -> np.ndarray:
        return pdrl_state_vector(state, self.models, self._last_cpu)

    def replan(self, state) -> None:
        k = len(state.profiles)
        if self.forced_actions is not None:
            actions = self.forced_actions
        elif self.policy is None:
            actions = np.zeros(2 * k, dtype=int)
        else:
            vec = self.state_vector(state)
            if self.policy.input_dim != vec.size or self.policy.num_branches != 2 * k:
                raise ShapeMismatch(
                    "policy trained for a different user count")
            actions = learn.greedy_actions(self.policy, vec)
        raw_bw = actions[:k] / (da1.SHARE_LEVELS - 1)
        raw_cpu = actions[k:] / (da1.SHARE_LEVELS - 1)
        by_bs: dict[int, list[int]] = {}
        for p in state.profiles:
            by_bs.setdefault(state.runtime[p.id].serving_bs, []).append(p.id)
        alloc = {}
        cpu_total = raw_cpu.sum()
        for p in state.profiles:
            frac = raw_cpu[p.id] / cpu_total if cpu_total > 0 else 1.0 / k
            alloc[p.id] = [0.0, frac * state.cpu_cap]
        for bs, users in by_bs.items():
            tot = sum(raw_bw[u] for u in users)
            for u in users:
                frac = raw_bw[u] / tot if tot > 0 else 1.0 / len(users)
                alloc[u][0] = frac * state.bw_caps.get(bs, 0.0)
        self.cached = {u: (a[0], a[1]) for u, a in alloc.items()}
        self._last_cpu = {u: a[1] for u, a in alloc.items()}

    def __call__(self, state, slot: int) -> dict[int, tuple[float, float]]:
        if slot % self.epoch_slots == 0 or not self.cached:
            self.replan(state)
        return self.cached
