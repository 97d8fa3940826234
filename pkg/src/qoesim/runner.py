"""End-to-end execution of one (scenario, scheme, seed) run.

Phases: bootstrap simulation on the training lane to gather feedback
samples and fit per-user QoE models; policy training for learned schemes;
frozen windowed evaluation on an independent traffic lane.  Random streams
are keyed per purpose so training randomness never leaks into evaluation
traffic and all schemes consume identical scenario/traffic streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import bench, da1, da2, learn, netsim, qoe, scenario
from .bench import SchemeId

# rng lane keys (append to the run seed)
_LANE_USERS = 11
_LANE_TRAIN = 23
_LANE_EVAL = 37
_LANE_POLICY = 53
_LANE_EMU_EVAL = 71
_LANE_EMU_TRAIN = 83
_LANE_EXPLORE = 97

DYNAMICS_HORIZON_SLOTS = 180
TRAIN_EPISODE_MINUTES = 3.0


@dataclass
class WindowLog:
    index: int
    start_slot: int
    end_slot: int
    window_minutes: float
    mechanism: str
    user_mean_qoe: dict[int, float]
    samples: list[netsim.PeriodSample]


@dataclass
class RunResult:
    scheme: str
    seed: int
    windows: list[WindowLog]
    slot_records: list[netsim.SlotRecord]
    demand_rows: list[tuple]   # (window, user, bw, cpu, feasible)
    slice_rows: list[tuple]    # (window, minutes, group, bs, bw, cpu, mechanism)
    capacity_violations: int
    models: dict[int, qoe.QoEModel]
    reward_curve: list[float] = field(default_factory=list)
    eval_arrivals: list[tuple[int, int]] = field(default_factory=list)


def _lane(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng([seed, key])


def _hinged_gain(member, demand, f_bw, f_cpu, weight, target, catalog, params):
    """Slice-curve gain: planning QoE plus the ELA-chase bonus below target."""
    e = da1.planning_qoe(member, f_bw * demand.bandwidth_hz,
                         f_cpu * demand.compute_cps, catalog, params)
    return e + weight * min(e, target)


class SchemeRun:
    """Owns all mutable pieces of one scheme/seed execution."""

    def __init__(self, cfg: scenario.ScenarioConfig, scheme: SchemeId, seed: int,
                 collect_slots: bool = True, train_epochs: int | None = None,
                 policy_in: str | None = None):
        self.cfg = cfg
        self.scheme = scheme
        self.seed = seed
        self.collect_slots = collect_slots
        self.train_epochs = cfg.train.epochs if train_epochs is None else train_epochs
        self.policy_in = policy_in
        self.catalog = cfg.video_catalog()
        self.params = da1.DemandParams(
            headroom=cfg.agent.demand_headroom,
            cpu_headroom=cfg.agent.demand_cpu_headroom,
            arrival_rate_per_min=cfg.arrival_rate_per_min,
            eval_period_s=cfg.playback.eval_period_s,
            margin_mos=cfg.agent.demand_margin_mos)
        self.profiles = scenario.sample_users(cfg, _lane(seed, _LANE_USERS))
        self.elas = {p.id: p.ela for p in self.profiles}
        self.models: dict[int, qoe.QoEModel] = {}
        self.group_policy: learn.BdqNetwork | None = None
        self.user_policy: learn.BdqNetwork | None = None
        self.reward_curve: list[float] = []
        self._recent: dict[int, list[qoe.FactorSample]] = {}
        self._bs_caps = {b.id: b.dl_bandwidth_hz for b in cfg.base_stations()}
        self._cpu_cap = cfg.edge.capacity_cps

    # -- phase 1: bootstrap + model fitting ------------------------------------

    def bootstrap(self, train_rng: np.random.Generator) -> netsim.SimState:
        cfg = self.cfg
        state = netsim.SimState(cfg, self.profiles, {p.id: 0 for p in self.profiles})
        slc = SimpleNamespace(
            reserved_bw={(0, b): cap for b, cap in self._bs_caps.items()},
            reserved_cpu={0: self._cpu_cap})
        slots = int(cfg.agent.bootstrap_minutes * 60.0 / cfg.slot_s)
        explorer = bench.ExplorationOrchestrator(
            _lane(self.seed, _LANE_EXPLORE), cfg.agent.epoch_slots)
        netsim.run_window(state, slc, explorer, train_rng, slots,
                          collect_records=False)
        return state

    def fit_models(self, state: netsim.SimState) -> None:
        by_user: dict[int, list[qoe.FactorSample]] = {}
        for ps in state.period_samples:
            by_user.setdefault(ps.user, []).append(ps.sample)
        if self.scheme is SchemeId.WITHOUT_DA:
            generic = bench.generic_model(self.cfg)
            self.models = {p.id: generic for p in self.profiles}
            return
        for p in self.profiles:
            samples = by_user.get(p.id, [])
            try:
                model, _ = qoe.fit_best_structure(samples, self.cfg.agent.dcor_threshold)
            except qoe.InsufficientData:
                model = bench.generic_model(self.cfg)
            self.models[p.id] = model

    def group_of(self) -> dict[int, int]:
        return {u: m.structure_index for u, m in self.models.items()}

    # -- slicing path (shared by training and evaluation) -----------------------

    def context_traces(self, state: netsim.SimState, horizon: int,
                       emu_rng: np.random.Generator) -> dict[int, np.ndarray]:
        cfg = self.cfg
        out = {}
        for p in self.profiles:
            out[p.id] = da1.emulate_context(
                p, horizon, emu_rng, t0_slot=state.t, slot_s=cfg.slot_s,
                max_swipe_rate_per_min=cfg.users.max_swipe_rate_per_min,
                complexity_increases_with_speed=cfg.users.complexity_increases_with_speed,
                noise=cfg.agent.context_noise)
        return out

    def dynamics_window(self, state: netsim.SimState,
                        traces: dict[int, np.ndarray]) -> float:
        if self.scheme is SchemeId.WITHOUT_DA:
            return self.cfg.slicing.wo_da_window_min
        full = []
        for p in self.profiles:
            walker = state.walkers[p.id]
            pos = np.array([walker.position((state.t + i) * state.slot_s)
                            for i in range(len(traces[p.id]))])
            full.append(np.column_stack([traces[p.id], pos]))
        return da2.dynamics_to_window(full, self.cfg.slicing.dynamics_thresholds,
                                      self.cfg.slicing.window_minutes)

    def compute_demands(self, state: netsim.SimState, window_s: float,
                        traces: dict[int, np.ndarray]
                        ) -> dict[int, da1.ResourceDemand]:
        if self.scheme is SchemeId.WITHOUT_DA:
            effs = [state.runtime[p.id].eff_ewma for p in self.profiles]
            return bench.wo_da_demands(self.cfg, self.elas, float(np.mean(effs)),
                                       self.catalog, self.params, window_s)
        demands = {}
        for p in self.profiles:
            eff = state.runtime[p.id].eff_ewma
            if self.scheme is SchemeId.HSLA_L2:
                demands[p.id] = bench.hsla_demand(
                    self.models[p.id], p.ela, traces[p.id], self.catalog,
                    eff, self.params, window_s, user=p.id)
            else:
                demands[p.id] = da1.predict_demand(
                    self.models[p.id], p.ela, traces[p.id], self.catalog,
                    eff, self.params, window_s, user=p.id)
        return demands

    def build_slices(self, state: netsim.SimState, window_minutes: float,
                     emu_rng: np.random.Generator
                     ) -> tuple[da2.SliceConfig, dict[int, da1.ResourceDemand]]:
        cfg = self.cfg
        window_s = window_minutes * 60.0
        horizon = min(int(window_s / cfg.slot_s), DYNAMICS_HORIZON_SLOTS)
        traces = self.context_traces(state, horizon, emu_rng)
        demands = self.compute_demands(state, window_s, traces)
        group_of = self.group_of()
        memberships = {u: (group_of[u], state.runtime[u].serving_bs)
                       for u in demands}
        utilities = {}
        for p in self.profiles:
            model = self.models[p.id]
            alpha, beta = model.impact_params
            traj = traces[p.id]
            ibar = da1.mean_impact(model, traj)
            member = da1.AllocMember(
                p.id, model.structure_index, alpha, beta, p.ela,
                ibar, state.runtime[p.id].eff_ewma)
            d = demands[p.id]
            # winnable users weight the slicing curves the same way the
            # user-level solver and the learning reward chase the ELA
            target = p.ela + self.params.margin_mos
            winnable = target <= 5.0 * ibar + 1e-9
            w = da1.SHORTFALL_WEIGHT if winnable else 0.0
            utilities[p.id] = (
                lambda fb, fc, m=member, d=d, w=w, t=target:
                _hinged_gain(m, d, fb, fc, w, t, self.catalog, self.params))
        dist = da2.abstract_demand(demands.values(), memberships, utilities,
                                   cfg.slicing.quantum_bw_hz,
                                   cfg.slicing.quantum_cpu_cps)
        slc = da2.greedy_slice(dist, self._bs_caps, self._cpu_cap, window_minutes)
        scarce = self._is_scarce(dist)
        if scarce and self.scheme is not SchemeId.WITHOUT_DA:
            slc, _ = da2.best_response_adjust(
                slc, dist, self._bs_caps, self._cpu_cap,
                cfg.slicing.price_mos_per_quantum)
            slc.window_minutes = window_minutes
        # cover every (present group, BS) pair so mid-window roaming stays legal
        for g in set(group_of.values()):
            for bs in self._bs_caps:
                slc.reserved_bw.setdefault((g, bs), 0.0)
            slc.reserved_cpu.setdefault(g, 0.0)
        return slc, demands

    def _is_scarce(self, dist: da2.DemandDistribution) -> bool:
        per_bs: dict[int, float] = {}
        cpu = 0.0
        for (g, bs), cell in dist.cells.items():
            per_bs[bs] = per_bs.get(bs, 0.0) + cell.total_bw_hz
            cpu += cell.total_cpu_cps
        if cpu > self._cpu_cap:
            return True
        return any(v > self._bs_caps.get(bs, 0.0) for bs, v in per_bs.items())

    def make_orchestrator(self):
        if self.scheme is SchemeId.WITHOUT_DA:
            return bench.RoundRobinOrchestrator()
        if self.scheme is SchemeId.PDRL_L1:
            return bench.PdrlOrchestrator(self.models, self.user_policy, self.cfg)
        return da1.Orchestrator(self.models, self.group_policy, self.catalog,
                                self.cfg, self.params)

    # -- phase 2: policy training ------------------------------------------------

    def train_policies(self, state: netsim.SimState,
                       train_rng: np.random.Generator) -> None:
        if self.scheme is SchemeId.WITHOUT_DA or self.train_epochs <= 0:
            return
        if self.policy_in is not None:
            net = learn.load_network(self.policy_in)
            if self.scheme is SchemeId.PDRL_L1:
                self.user_policy = net
            else:
                self.group_policy = net
            return
        cfg = self.cfg
        episode_epochs = max(int(TRAIN_EPISODE_MINUTES * 60.0 / cfg.slot_s
                                 / cfg.agent.epoch_slots), 1)
        episodes = max(int(round(self.train_epochs / episode_epochs)), 1)
        emu_rng = _lane(self.seed, _LANE_EMU_TRAIN)
        if self.scheme is SchemeId.PDRL_L1:
            env = _PdrlEnv(self, state, train_rng, emu_rng, episode_epochs)
            hidden = (cfg.train.hidden_width,) * 3  # five-layer variant
        else:
            env = _GroupEnv(self, state, train_rng, emu_rng, episode_epochs)
            hidden = (cfg.train.hidden_width,) * 2  # four-layer
        hp = learn.Hyperparams(
            episodes=episodes, max_steps=episode_epochs, hidden=hidden,
            lr=cfg.train.lr, gamma=cfg.train.gamma,
            eps_start=cfg.train.eps_start, eps_end=cfg.train.eps_end,
            eps_decay_steps=int(0.8 * episodes * episode_epochs),
            batch_size=cfg.train.batch_size,
            replay_capacity=cfg.train.replay_capacity,
            target_sync=cfg.train.target_sync)
        net, curve = learn.train_episodes(env, hp, _lane(self.seed, _LANE_POLICY))
        self.reward_curve = curve
        if self.scheme is SchemeId.PDRL_L1:
            self.user_policy = net
        else:
            self.group_policy = net

    # -- phase 3: frozen evaluation -----------------------------------------------

    def evaluate(self) -> RunResult:
        cfg = self.cfg
        state = netsim.SimState(cfg, self.profiles, self.group_of())
        eval_rng = _lane(self.seed, _LANE_EVAL)
        emu_rng = _lane(self.seed, _LANE_EMU_EVAL)
        orch = self.make_orchestrator()
        total_slots = int(cfg.sim_duration_s / cfg.slot_s)
        period = state.period_slots
        windows: list[WindowLog] = []
        all_records: list[netsim.SlotRecord] = []
        demand_rows = []
        slice_rows = []
        w_idx = 0
        while state.t < total_slots:
            traces = self.context_traces(
                state, min(DYNAMICS_HORIZON_SLOTS, total_slots - state.t), emu_rng)
            w_min = self.dynamics_window(state, traces)
            w_slots = min(int(w_min * 60.0 / cfg.slot_s), total_slots - state.t)
            w_slots = max((w_slots // period) * period, period)
            slc, demands = self.build_slices(state, w_min, emu_rng)
            for u in sorted(demands):
                d = demands[u]
                demand_rows.append((w_idx, u, d.bandwidth_hz, d.compute_cps,
                                    d.feasible))
            for (g, bs), bw in sorted(slc.reserved_bw.items()):
                slice_rows.append((w_idx, w_min, g, bs, bw,
                                   slc.reserved_cpu.get(g, 0.0), slc.mechanism))
            start = state.t
            mark = len(state.period_samples)
            recs = netsim.run_window(state, slc, orch, eval_rng, w_slots,
                                     collect_records=self.collect_slots)
            all_records.extend(recs)
            samples = state.period_samples[mark:]
            means: dict[int, list[float]] = {}
            for ps in samples:
                means.setdefault(ps.user, []).append(ps.sample.qoe)
            windows.append(WindowLog(
                w_idx, start, state.t, w_min, slc.mechanism,
                {u: float(np.mean(v)) for u, v in means.items()}, samples))
            self._maybe_refit(samples)
            state.group_of = self.group_of()  # refits can regroup users
            w_idx += 1
        return RunResult(self.scheme.value, self.seed, windows, all_records,
                         demand_rows, slice_rows, state.capacity_violations,
                         dict(self.models), self.reward_curve,
                         list(state.arrival_log))

    def _maybe_refit(self, samples: list[netsim.PeriodSample]) -> None:
        if self.scheme is SchemeId.WITHOUT_DA:
            return
        cfg = self.cfg
        for ps in samples:
            self._recent.setdefault(ps.user, []).append(ps.sample)
        for u, recent in self._recent.items():
            if len(recent) < 20:
                continue
            window = recent[-cfg.agent.refit_window:]
            if qoe.should_update(self.models[u], window, cfg.agent.refit_tolerance):
                try:
                    model, _ = qoe.fit_best_structure(window, cfg.agent.dcor_threshold)
                    self.models[u] = model
                except qoe.InsufficientData:
                    pass
            self._recent[u] = []

    # -- entry point ---------------------------------------------------------------

    def execute(self) -> RunResult:
        # one continuous training-lane generator spans bootstrap and training
        train_rng = _lane(self.seed, _LANE_TRAIN)
        state = self.bootstrap(train_rng)
        self.fit_models(state)
        state.group_of = self.group_of()
        self.train_policies(state, train_rng)
        return self.evaluate()


class _GroupEnv:
    """Training environment: one episode = one short slicing window; actions
    are the 2x3 group share branches."""

    state_dim = len(da1.GROUPS) * da1.GROUP_STATE_FEATURES
    actions_per_branch = da1.SHARE_LEVELS

    def __init__(self, run: SchemeRun, state: netsim.SimState,
                 traffic_rng, emu_rng, episode_epochs: int):
        self.run = run
        self.state = state
        self.traffic_rng = traffic_rng
        self.emu_rng = emu_rng
        self.episode_epochs = episode_epochs
        self.num_branches = 2 * len(da1.GROUPS)
        self.orch = da1.Orchestrator(run.models, None, run.catalog, run.cfg,
                                     run.params)
        self.epoch_i = 0

    def reset(self):
        slc, _ = self.run.build_slices(self.state, TRAIN_EPISODE_MINUTES,
                                       self.emu_rng)
        self.state.apply_slice(slc)
        self.epoch_i = 0
        return da1.group_state_vector(self.orch.group_states(self.state),
                                      self.run.cfg.playback.max_buffer_s)

    def step(self, actions):
        present = sorted(da1.cluster_users(self.run.models))
        self.orch.forced_shares = da1.shares_from_actions(actions, present)
        mark = len(self.state.period_samples)
        netsim.advance_slots(self.state, self.orch, self.run.cfg.agent.epoch_slots,
                             self.traffic_rng)
        reward, _ = da1.epoch_reward(self.state.period_samples[mark:],
                                     self.run.models, self.run.elas)
        self.epoch_i += 1
        done = self.epoch_i >= self.episode_epochs
        vec = da1.group_state_vector(self.orch.group_states(self.state),
                                     self.run.cfg.playback.max_buffer_s)
        return vec, reward, done


class _PdrlEnv:
    """Training environment for the direct per-user share policy."""

    actions_per_branch = da1.SHARE_LEVELS

    def __init__(self, run: SchemeRun, state: netsim.SimState,
                 traffic_rng, emu_rng, episode_epochs: int):
        self.run = run
        self.state = state
        self.traffic_rng = traffic_rng
        self.emu_rng = emu_rng
        self.episode_epochs = episode_epochs
        k = len(run.profiles)
        self.num_branches = 2 * k
        self.state_dim = bench.PDRL_USER_FEATURES * k
        self.orch = bench.PdrlOrchestrator(run.models, None, run.cfg)
        self.epoch_i = 0

    def reset(self):
        slc, _ = self.run.build_slices(self.state, TRAIN_EPISODE_MINUTES,
                                       self.emu_rng)
        self.state.apply_slice(slc)
        self.epoch_i = 0
        return self.orch.state_vector(self.state)

    def step(self, actions):
        self.orch.forced_actions = np.asarray(actions, dtype=int)
        mark = len(self.state.period_samples)
        netsim.advance_slots(self.state, self.orch, self.run.cfg.agent.epoch_slots,
                             self.traffic_rng)
        reward, _ = da1.epoch_reward(self.state.period_samples[mark:],
                                     self.run.models, self.run.elas)
        self.epoch_i += 1
        done = self.epoch_i >= self.episode_epochs
        return self.orch.state_vector(self.state), reward, done


def run_scheme(cfg: scenario.ScenarioConfig, scheme: SchemeId, seed: int,
               collect_slots: bool = True, train_epochs: int | None = None,
               policy_in: str | None = None) -> RunResult:
    return SchemeRun(cfg, scheme, seed, collect_slots, train_epochs,
                     policy_in).execute()
