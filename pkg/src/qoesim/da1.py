"""Level-one digital agents: per-user emulation, demand prediction, and the
two-layer tailored orchestration (group-level policy + user-level solver).

The user-level allocator maximizes a smooth concave planning utility built
from saturating proxies of the real quality/stall dynamics; realized QoE
still comes from the simulator.  Planning bandwidth/compute curves:

    q_bw(bw)   = 1 - exp(-eff * bw / (r_hi - r_lo))
    q_cpu(cpu) = 1 - exp(-cpu / (c0 + c1))
    stall(bw)  = stall_scale / (eps + eff * bw)

joined by a softmin, with an ELA-shortfall penalty mirroring the learning
reward so both layers chase the same objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import learn, netsim, qoe
from .errors import ShapeMismatch
from .scenario import ScenarioConfig, UserProfile, VideoCatalog

GROUPS = (1, 2, 3)
GROUP_STATE_FEATURES = 6  # buffer, computing load, quality + 3 one-hot
SHARE_LEVELS = 11  # {0.0, 0.1, ..., 1.0}
SHORTFALL_WEIGHT = 2.0
_HINGE_TAU = 0.1
_CORNER_TAU = 0.02  # corner rounding of the tier-exact planning curves


def _softplus(x, tau):
    return tau * (np.log1p(np.exp(-np.abs(x / tau))) + np.maximum(x / tau, 0.0))


def _smooth_cap1(x, tau=_CORNER_TAU):
    """Concave C1 cap: linear for x << 1, saturating at 1.

    The interior planning curves deliberately keep the full slope below the
    quality floor (no convex kink at zero) so the overall utility stays
    concave; a starved user just reads a deeply negative quality support.
    """
    val = 1.0 - _softplus(1.0 - x, tau)
    z = np.clip((1.0 - x) / tau, -60, 60)
    grad = 1.0 / (1.0 + np.exp(-z))
    return val, grad


def _smooth_min(a, b, tau=_CORNER_TAU):
    """C1 approximation of min(a, b) exact at a == b; returns value and the
    two softmax weights."""
    lo = np.minimum(a, b)
    wa = np.exp(-(a - lo) / tau)
    wb = np.exp(-(b - lo) / tau)
    val = lo - tau * np.log(0.5 * (wa + wb))
    tot = wa + wb
    return val, wa / tot, wb / tot


@dataclass(frozen=True)
class ResourceDemand:
    user: int
    bandwidth_hz: float
    compute_cps: float
    window_s: float
    feasible: bool


@dataclass(frozen=True)
class GroupState:
    group: int
    avg_buffer_s: float
    computing_load: float  # fraction of edge capacity
    avg_quality: float
    one_hot: tuple[float, float, float]

    def vector(self, max_buffer_s: float = 30.0) -> np.ndarray:
        return np.array([min(self.avg_buffer_s / max_buffer_s, 1.0),
                         min(self.computing_load, 1.0),
                         self.avg_quality, *self.one_hot])


@dataclass(frozen=True)
class AllocMember:
    """Solver view of one user: fitted model plus channel efficiency."""
    user: int
    structure_index: int
    alpha: float
    beta: float
    ela: float
    mean_impact: float  # window-average I(B, C) under the fitted model
    eff_bps_per_hz: float


@dataclass(frozen=True)
class DemandParams:
    headroom: float = 1.3
    # transcode-capacity multiple over the steady-state tier cost, covering
    # post-swipe catch-up bursts (1.0 = provision exactly real-time cost)
    cpu_headroom: float = 1.0
    arrival_rate_per_min: float = 6.0
    eval_period_s: float = 10.0
    min_stall_budget_s: float = 0.25
    # demand targets sit this far above the ELA so the sampled window mean
    # clears the threshold despite generator noise (0 = aim exactly at ELA)
    margin_mos: float = 0.0


def emulate_context(profile: UserProfile, horizon_slots: int,
                    rng: np.random.Generator, *, t0_slot: int = 0,
                    slot_s: float = 1.0, max_swipe_rate_per_min: float = 18.0,
                    complexity_increases_with_speed: bool = True,
                    noise: float = 0.0) -> np.ndarray:
    """Predicted (B, C) trajectory over the horizon, bounded noise included."""
    out = np.empty((horizon_slots, 2))
    for i in range(horizon_slots):
        b, c = netsim.behavior_env_trace(profile, (t0_slot + i) * slot_s,
                                         max_swipe_rate_per_min,
                                         complexity_increases_with_speed)
        out[i, 0] = b
        out[i, 1] = c
    if noise > 0.0:
        out += rng.uniform(-noise, noise, out.shape)
        np.clip(out, 1.0, 2.0, out=out)
    return out


def mean_impact(model: qoe.QoEModel, trajectory: np.ndarray) -> float:
    alpha, beta = model.impact_params
    i = 1.0 / (1.0 + alpha * (trajectory[:, 0] - 1.0) + beta * (trajectory[:, 1] - 1.0))
    return float(i.mean())


def _stall_bandwidth(bitrate_bps: float, eff: float, stall_budget_s: float,
                     p: DemandParams, segment_s: float) -> float:
    """Bandwidth keeping expected per-period startup stalls within budget."""
    arrivals = p.arrival_rate_per_min / 60.0 * p.eval_period_s
    need = arrivals * segment_s * bitrate_bps / (eff * max(stall_budget_s,
                                                           p.min_stall_budget_s))
    return need


def predict_demand(model: qoe.QoEModel, ela: float, trajectory: np.ndarray,
                   catalog: VideoCatalog, eff_bps_per_hz: float,
                   params: DemandParams = DemandParams(),
                   window_s: float = 540.0, user: int = -1) -> ResourceDemand:
    """Minimum-cost (bandwidth, compute) meeting the ELA on window average.

    Scans the quality ladder after inverting the structure's QoS score in
    closed form; an unreachable ELA yields the max-quality demand flagged
    infeasible.
    """
    eff = max(eff_bps_per_hz, 1e-3)
    i_bar = mean_impact(model, trajectory)
    feasible = ela / i_bar <= qoe.MOS_HI + 1e-9
    needed_s = (ela + params.margin_mos) / i_bar
    levels = catalog.quality_levels_bps
    seg = catalog.segment_duration_s
    struct = model.structure_index

    # Stall budget shrinks with the required score; structure 3 halves it to
    # leave slack for quality rounding.  Tier-independent, so the resulting
    # bandwidth stays monotone in the ELA.
    slack_s = max(qoe.MOS_HI - min(needed_s, qoe.MOS_HI), 0.0) / qoe.REBUFFER_SLOPE
    if struct == 1:
        tier_rate = levels[0]
        stall_budget = slack_s
    else:
        q_star = (min(needed_s, qoe.MOS_HI) - 1.0) / qoe.QUALITY_SLOPE
        tier_rate = next(r for r in levels
                         if catalog.quality_of(r) >= q_star - 1e-9)
        stall_budget = math.inf if struct == 2 else 0.5 * slack_s

    if not feasible:
        tier_rate = levels[-1]
        stall_budget = params.min_stall_budget_s if struct != 2 else math.inf

    bw = params.headroom * tier_rate / eff
    if stall_budget is not math.inf:
        bw = max(bw, _stall_bandwidth(tier_rate, eff, stall_budget, params, seg))
    cpu = params.cpu_headroom * catalog.compute_cost_cps(tier_rate)
    return ResourceDemand(user, bw, cpu, window_s, feasible)


def cluster_users(models: dict[int, qoe.QoEModel]) -> dict[int, list[int]]:
    """Partition users by fitted model structure."""
    groups: dict[int, list[int]] = {}
    for user in sorted(models):
        groups.setdefault(models[user].structure_index, []).append(user)
    return groups


def group_state_vector(states: list[GroupState],
                       max_buffer_s: float = 30.0) -> np.ndarray:
    """Fixed-width policy input: one feature block per group index."""
    by_group = {s.group: s for s in states}
    blocks = []
    for g in GROUPS:
        if g in by_group:
            blocks.append(by_group[g].vector(max_buffer_s))
        else:
            blocks.append(np.zeros(GROUP_STATE_FEATURES))
    return np.concatenate(blocks)


def shares_from_actions(actions: np.ndarray,
                        present: list[int]) -> dict[int, tuple[float, float]]:
    """Decode per-branch share indices and renormalize over present groups."""
    raw = {g: (actions[GROUPS.index(g)] / (SHARE_LEVELS - 1),
               actions[len(GROUPS) + GROUPS.index(g)] / (SHARE_LEVELS - 1))
           for g in present}
    out = {}
    for res in (0, 1):
        total = sum(raw[g][res] for g in present)
        for g in present:
            share = raw[g][res] / total if total > 0 else 1.0 / len(present)
            out.setdefault(g, [0.0, 0.0])[res] = share
    return {g: (v[0], v[1]) for g, v in out.items()}


def group_allocate(states: list[GroupState], policy: learn.BdqNetwork | None,
                   max_buffer_s: float = 30.0) -> dict[int, tuple[float, float]]:
    """Per-group (bandwidth share, compute share), summing to 1 per resource.

    A None policy (or an untrained all-zero one) degrades to equal shares.
    """
    present = [s.group for s in states]
    if not present:
        return {}
    if policy is None:
        actions = np.zeros(2 * len(GROUPS), dtype=int)
    else:
        vec = group_state_vector(states, max_buffer_s)
        if policy.input_dim != vec.size or policy.num_branches != 2 * len(GROUPS) \
                or policy.actions_per_branch != SHARE_LEVELS:
            raise ShapeMismatch("policy dimensions do not match the group state")
        actions = learn.greedy_actions(policy, vec)
    return shares_from_actions(actions, present)


# --- user-level concave solver ------------------------------------------------

class _UtilityModel:
    """Vectorized planning utility over a fixed member list.

    Quality support is the exact tier arithmetic the simulator uses
    (clamped-linear in each resource, joined by a min); stalls use a smooth
    service-rate proxy.  Concave throughout, with subgradients at the caps.
    """

    def __init__(self, members: list[AllocMember], catalog: VideoCatalog,
                 params: DemandParams):
        self.n = len(members)
        self.struct = np.array([m.structure_index for m in members])
        self.ibar = np.array([m.mean_impact for m in members])
        # solver chases the same noise margin the demand predictor targets;
        # users whose target is unreachable drop the shortfall chase (plain
        # QoE maximization) so winnable users keep the contested resources
        self.ela = np.array([m.ela for m in members]) + params.margin_mos
        self.shortfall_w = np.where(self.ela <= qoe.MOS_HI * self.ibar + 1e-9,
                                    SHORTFALL_WEIGHT, 0.0)
        self.eff = np.array([max(m.eff_bps_per_hz, 1e-3) for m in members])
        r_lo, r_hi = catalog.min_bitrate, catalog.max_bitrate
        self.r_lo = r_lo
        self.r_span = r_hi - r_lo
        c0, c1 = catalog.compute_cost_coeffs
        self.c0 = c0
        self.c1 = c1
        self.bw_headroom = params.headroom
        self.cpu_headroom = params.cpu_headroom
        arrivals = params.arrival_rate_per_min / 60.0 * params.eval_period_s
        # startup bits needing download per evaluation period; the floor pins
        # the zero-resource stall at one full period
        self.stall_bits = arrivals * catalog.segment_duration_s * r_lo
        self.stall_floor = self.stall_bits / params.eval_period_s
        self.is_q = self.struct != 1  # structures with a quality term
        self.has_stall = self.struct != 2  # structures with a rebuffer term

    def value_grad(self, bw: np.ndarray, cpu: np.ndarray):
        """Total utility and its gradients w.r.t. physical (bw, cpu)."""
        # sustainable normalized quality per resource: tier-exact slopes with
        # softly rounded corners so the ascent never loses its gradient
        q_bw_raw = (self.eff * bw / self.bw_headroom - self.r_lo) / self.r_span
        q_cpu_raw = (cpu / self.cpu_headroom - self.c0) / self.c1
        q_bw, dclip_bw = _smooth_cap1(q_bw_raw)
        q_cpu, dclip_cpu = _smooth_cap1(q_cpu_raw)
        q_join, w_bw, w_cpu = _smooth_min(q_bw, q_cpu)
        dq_bw = w_bw * dclip_bw * self.eff / (self.bw_headroom * self.r_span)
        dq_cpu = w_cpu * dclip_cpu / (self.cpu_headroom * self.c1)
        # stall proxy: playback is gated by the slower of the radio link and
        # the transcoder, both expressed in min-tier bits per second
        cpu_bits = cpu * self.r_lo / self.c0
        bw_bits = self.eff * bw
        service, v_bw, v_cpu = _smooth_min(bw_bits / self.r_lo, cpu_bits / self.r_lo)
        denom = service * self.r_lo + self.stall_floor
        stall = self.stall_bits / denom
        dserv = -self.stall_bits / denom ** 2
        dstall_bw = dserv * v_bw * self.eff
        dstall_cpu = dserv * v_cpu * self.r_lo / self.c0

        s = np.where(self.struct == 1, qoe.MOS_HI, 1.0 + qoe.QUALITY_SLOPE * q_join)
        ds_bw = np.where(self.is_q, qoe.QUALITY_SLOPE * dq_bw, 0.0)
        ds_cpu = np.where(self.is_q, qoe.QUALITY_SLOPE * dq_cpu, 0.0)
        s = s - np.where(self.has_stall, qoe.REBUFFER_SLOPE * stall, 0.0)
        ds_bw = ds_bw - np.where(self.has_stall, qoe.REBUFFER_SLOPE * dstall_bw, 0.0)
        ds_cpu = ds_cpu - np.where(self.has_stall, qoe.REBUFFER_SLOPE * dstall_cpu, 0.0)

        e = self.ibar * s
        de_bw = self.ibar * ds_bw
        de_cpu = self.ibar * ds_cpu
        # smooth hinge on the ELA shortfall (mirrors the learning reward)
        z = (self.ela - e) / _HINGE_TAU
        sig = 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))
        soft = _HINGE_TAU * np.log1p(np.exp(-np.abs(z))) + np.maximum(
            self.ela - e, 0.0)
        # a faint pressure on both quality axes breaks plateau ties
        util = e - self.shortfall_w * soft + 0.02 * (q_bw + q_cpu)
        scale = 1.0 + self.shortfall_w * sig
        gb = de_bw * scale + 0.02 * dclip_bw * self.eff / (self.bw_headroom
                                                           * self.r_span)
        gc = de_cpu * scale + 0.02 * dclip_cpu / (self.cpu_headroom * self.c1)
        return float(util.sum()), gb, gc


def project_capped_simplex(x: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= total}."""
    clipped = np.maximum(x, 0.0)
    if clipped.sum() <= total:
        return clipped
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, x.size + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(x - theta, 0.0)


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    kkt_residual: float
    objective: float


def user_allocate(members: list[AllocMember], bw_budget_hz: float,
                  cpu_budget_cps: float, catalog: VideoCatalog,
                  params: DemandParams = DemandParams(),
                  max_iters: int = 500, tol: float = 1e-4,
                  warm_start: dict[int, tuple[float, float]] | None = None,
                  tol_step: float = 1e-12
                  ) -> tuple[dict[int, tuple[float, float]], SolverReport]:
    """Concave utility maximization over the group budget.

    Projected-gradient ascent on the product of capped simplices with a
    backtracking quadratic line search; returns per-user (bw, cpu) plus a
    convergence report with the projected-gradient KKT residual.
    """
    n = len(members)
    if n == 0:
        return {}, SolverReport(True, 0, 0.0, 0.0)
    if bw_budget_hz <= 0.0 and cpu_budget_cps <= 0.0:
        return ({m.user: (0.0, 0.0) for m in members},
                SolverReport(True, 0, 0.0, 0.0))
    util = _UtilityModel(members, catalog, params)
    if n == 1:
        # utilities are strictly increasing: a lone member takes the budget
        v, _, _ = util.value_grad(np.array([bw_budget_hz]),
                                  np.array([cpu_budget_cps]))
        return ({members[0].user: (bw_budget_hz, cpu_budget_cps)},
                SolverReport(True, 0, 0.0, v))

    def _norm_warm(idx: int, budget: float) -> np.ndarray:
        if budget <= 0.0:
            return np.zeros(n)
        vals = np.array([warm_start.get(m.user, (budget / n,) * 2)[idx]
                         for m in members]) / budget
        return project_capped_simplex(np.clip(vals, 0.0, 1.0))

    if warm_start:
        xb = _norm_warm(0, bw_budget_hz)
        xc = _norm_warm(1, cpu_budget_cps)
    else:
        xb = np.full(n, 1.0 / n)
        xc = np.full(n, 1.0 / n)

    def eval_at(xb_, xc_):
        # gradient chain through the normalized coordinates; a zero budget
        # zeroes its gradient block so that resource stays untouched
        v, gb, gc = util.value_grad(xb_ * bw_budget_hz, xc_ * cpu_budget_cps)
        return v, gb * bw_budget_hz, gc * cpu_budget_cps

    value, gb, gc = eval_at(xb, xc)
    step = 0.5
    it = 0
    moved = math.inf
    for it in range(1, max_iters + 1):
        accepted = False
        for _ in range(18):
            nb = project_capped_simplex(xb + step * gb / (1.0 + np.abs(gb).max()))
            nc = project_capped_simplex(xc + step * gc / (1.0 + np.abs(gc).max()))
            nv, ngb, ngc = eval_at(nb, nc)
            if nv >= value - 1e-15:
                moved = max(np.abs(nb - xb).max(), np.abs(nc - xc).max())
                xb, xc, value, gb, gc = nb, nc, nv, ngb, ngc
                accepted = True
                step = min(step * 1.4, 2.0)
                break
            step *= 0.4
        if not accepted or moved < tol_step:
            break

    eta = 1e-3
    rb = np.abs(xb - project_capped_simplex(xb + eta * gb)).max() / eta
    rc = np.abs(xc - project_capped_simplex(xc + eta * gc)).max() / eta
    residual = float(max(rb, rc) / (1.0 + max(np.abs(gb).max(), np.abs(gc).max())))
    converged = residual < tol * 10
    alloc = {m.user: (float(xb[i] * bw_budget_hz), float(xc[i] * cpu_budget_cps))
             for i, m in enumerate(members)}
    return alloc, SolverReport(converged, it, residual, value)


class Orchestrator:
    """Per-epoch composition: cluster -> group shares -> user-level solver.

    Serves as the per-slot allocation callback for the simulator; replans
    every `epoch_slots` slots and caches the result in between.  Group
    shares come from the policy network unless `forced_shares` is set
    (used by the training environment to inject exploratory actions).
    """

    def __init__(self, models: dict[int, qoe.QoEModel], policy,
                 catalog: VideoCatalog, cfg: ScenarioConfig,
                 params: DemandParams | None = None):
        self.models = models
        self.policy = policy
        self.catalog = catalog
        self.cfg = cfg
        self.params = params or DemandParams(
            headroom=cfg.agent.demand_headroom,
            cpu_headroom=cfg.agent.demand_cpu_headroom,
            arrival_rate_per_min=cfg.arrival_rate_per_min,
            eval_period_s=cfg.playback.eval_period_s,
            margin_mos=cfg.agent.demand_margin_mos)
        self.epoch_slots = cfg.agent.epoch_slots
        self.forced_shares: dict[int, tuple[float, float]] | None = None
        self.cached: dict[int, tuple[float, float]] = {}
        self.last_states: list[GroupState] = []
        self.last_shares: dict[int, tuple[float, float]] = {}
        self._warm: dict[tuple[int, int], dict] = {}
        self._last_cpu: dict[int, float] = {}

    def group_states(self, state) -> list[GroupState]:
        groups = cluster_users(self.models)
        cap = state.cpu_cap if state.cpu_cap > 0 else 1.0
        out = []
        for g in sorted(groups):
            members = groups[g]
            bufs = [state.runtime[u].buffer for u in members]
            quals = [self.catalog.quality_of(
                self.catalog.quality_levels_bps[state.runtime[u].tier])
                for u in members]
            load = sum(self._last_cpu.get(u, 0.0) for u in members) / cap
            one_hot = tuple(1.0 if gg == g else 0.0 for gg in GROUPS)
            out.append(GroupState(g, float(np.mean(bufs)), load,
                                  float(np.mean(quals)), one_hot))
        return out

    def _member(self, state, user: int) -> AllocMember:
        model = self.models[user]
        p = state.profiles[user]
        b, c = netsim.behavior_env_trace(
            p, state.t * state.slot_s, self.cfg.users.max_swipe_rate_per_min,
            self.cfg.users.complexity_increases_with_speed)
        alpha, beta = model.impact_params
        return AllocMember(user, model.structure_index, alpha, beta, p.ela,
                           qoe.impact(b, c, alpha, beta),
                           state.runtime[user].eff_ewma)

    def replan(self, state) -> None:
        states = self.group_states(state)
        self.last_states = states
        if self.forced_shares is not None:
            shares = self.forced_shares
        else:
            shares = group_allocate(states, self.policy,
                                    self.cfg.playback.max_buffer_s)
        self.last_shares = shares
        groups = cluster_users(self.models)
        # group budgets anchor on the slice reservations; the policy's shares
        # redistribute the unreserved slack plus a bounded fraction of the
        # reserved pool, so learned corrections matter even when slices are
        # saturated but never strip a group of most of its reservation
        lam = self.cfg.agent.share_pool_frac
        res_bw = getattr(state, "reserved_bw_detail", {})
        res_cpu = getattr(state, "reserved_cpu_detail", {})
        pool_bw = {}
        for bs, cap in state.bw_caps.items():
            reserved = sum(v for (g, b), v in res_bw.items() if b == bs)
            pool_bw[bs] = max(cap - reserved, 0.0) + lam * reserved
        reserved_cpu_total = sum(res_cpu.values())
        pool_cpu = max(state.cpu_cap - reserved_cpu_total, 0.0) \
            + lam * reserved_cpu_total
        alloc: dict[int, tuple[float, float]] = {}
        for g, members in groups.items():
            share_bw, share_cpu = shares.get(g, (0.0, 0.0))
            cpu_budget_g = (1.0 - lam) * res_cpu.get(g, 0.0) + share_cpu * pool_cpu
            by_bs: dict[int, list[int]] = {}
            for u in members:
                by_bs.setdefault(state.runtime[u].serving_bs, []).append(u)
            for bs, cell_users in by_bs.items():
                bw_budget = ((1.0 - lam) * res_bw.get((g, bs), 0.0)
                             + share_bw * pool_bw.get(bs, 0.0))
                cpu_budget = cpu_budget_g * len(cell_users) / len(members)
                mems = [self._member(state, u) for u in cell_users]
                # replanning every epoch tolerates a coarse inner solve
                cell_alloc, _ = user_allocate(
                    mems, bw_budget, cpu_budget, self.catalog, self.params,
                    max_iters=40, warm_start=self._warm.get((g, bs)),
                    tol_step=2e-4)
                self._warm[(g, bs)] = cell_alloc
                alloc.update(cell_alloc)
        self.cached = alloc
        self._last_cpu = {u: a[1] for u, a in alloc.items()}

    def __call__(self, state, slot: int) -> dict[int, tuple[float, float]]:
        if slot % self.epoch_slots == 0 or not self.cached:
            self.replan(state)
        return self.cached


def epoch_reward(period_samples, models: dict[int, qoe.QoEModel],
                 elas: dict[int, float]) -> tuple[float, dict[int, float]]:
    """Learning feedback for one epoch: mean over groups of the group QoE
    minus twice the mean ELA shortfall.  Also returns per-group mean QoE."""
    groups = cluster_users(models)
    by_user = {ps.user: ps.sample.qoe for ps in period_samples}
    feedback = {}
    rewards = []
    for g, members in groups.items():
        vals = [by_user[u] for u in members if u in by_user]
        if not vals:
            continue
        short = [max(elas[u] - by_user[u], 0.0) for u in members if u in by_user]
        feedback[g] = float(np.mean(vals))
        rewards.append(feedback[g] - SHORTFALL_WEIGHT * float(np.mean(short)))
    return (float(np.mean(rewards)) if rewards else 0.0), feedback


def planning_qoe(member: AllocMember, bw_hz: float, cpu_cps: float,
                 catalog: VideoCatalog,
                 params: DemandParams = DemandParams()) -> float:
    """Predicted interior QoE of one user at an allocation (planning proxy)."""
    util = _UtilityModel([member], catalog, params)
    eff = util.eff[0]
    q_bw = float(_smooth_cap1(np.asarray(
        (eff * bw_hz / util.bw_headroom - util.r_lo) / util.r_span))[0])
    q_cpu = float(_smooth_cap1(np.asarray(
        (cpu_cps / util.cpu_headroom - util.c0) / util.c1))[0])
    q_join = float(_smooth_min(np.asarray(q_bw), np.asarray(q_cpu))[0])
    service = min(eff * bw_hz, cpu_cps * util.r_lo / util.c0)
    stall = util.stall_bits / (service + util.stall_floor)
    if member.structure_index == 1:
        s = qoe.MOS_HI - qoe.REBUFFER_SLOPE * stall
    elif member.structure_index == 2:
        s = 1.0 + qoe.QUALITY_SLOPE * q_join
    else:
        s = 1.0 + qoe.QUALITY_SLOPE * q_join - qoe.REBUFFER_SLOPE * stall
    return member.mean_impact * s
