import numpy as np
import pytest

from qoesim import bench, da1, learn, qoe, scenario
from qoesim.bench import SchemeId
from qoesim.errors import ShapeMismatch

CFG = scenario.ScenarioConfig()
CAT = CFG.video_catalog()
PARAMS = da1.DemandParams()


class TestRoundRobinAllocate:
    def test_equal_division(self):
        out = bench.round_robin_allocate([0, 1, 2, 3], 8e6)
        assert all(v == 2e6 for v in out.values())

    def test_single_user_full_budget(self):
        assert bench.round_robin_allocate([7], 5e6) == {7: 5e6}

    def test_quanta_remainder_rotates(self):
        users = [0, 1, 2]
        r0 = bench.round_robin_allocate(users, 10.0, quantum=1.0, rotation=0)
        assert sorted(r0.values(), reverse=True) == [4.0, 3.0, 3.0]
        assert r0[0] == 4.0
        r1 = bench.round_robin_allocate(users, 10.0, quantum=1.0, rotation=1)
        assert r1[1] == 4.0
        r2 = bench.round_robin_allocate(users, 10.0, quantum=1.0, rotation=2)
        assert r2[2] == 4.0

    def test_permutation_equivariance(self):
        a = bench.round_robin_allocate([3, 1, 2], 9e6)
        b = bench.round_robin_allocate([1, 2, 3], 9e6)
        assert a == b


class TestSchemeId:
    def test_exhaustive_values(self):
        assert {s.value for s in SchemeId} == {"proposed", "wo-da", "pdrl-l1",
                                               "hsla-l2"}


class TestWoDaDemands:
    def test_homogeneous_population_matches_per_user_model(self):
        # users identical to the generic model: per-user prediction and the
        # generic-model demand agree exactly
        mean = 0.5 * (CFG.users.impact_min + CFG.users.impact_max)
        model = qoe.QoEModel(3, (mean, mean), 0.5, 0)
        traj = np.full((10, 2), 1.5)
        elas = {u: 3.4 for u in range(4)}
        generic = bench.wo_da_demands(CFG, elas, 2.0, CAT, PARAMS, 540.0)
        for u in elas:
            mine = da1.predict_demand(model, elas[u], traj, CAT, 2.0,
                                      PARAMS, 540.0, user=u)
            assert generic[u].bandwidth_hz == pytest.approx(mine.bandwidth_hz)
            assert generic[u].compute_cps == pytest.approx(mine.compute_cps)
            assert generic[u].feasible == mine.feasible


class TestHslaDemand:
    def test_neutral_context_equals_proposed(self):
        # with B = C = 1 the impact factor is 1, so QoS-only and QoE-based
        # demand estimation coincide
        model = qoe.QoEModel(2, (0.7, 0.4), 0.2, 100)
        traj = np.ones((20, 2))
        for ela in (3.0, 3.7, 4.4):
            mine = da1.predict_demand(model, ela, traj, CAT, 2.0, PARAMS, 540.0)
            sla = bench.hsla_demand(model, ela, traj, CAT, 2.0, PARAMS, 540.0)
            assert sla.bandwidth_hz == pytest.approx(mine.bandwidth_hz)
            assert sla.compute_cps == pytest.approx(mine.compute_cps)

    def test_harsh_context_under_reserves(self):
        # I = 1/3: the QoE-aware route wants max quality, the SLA route only
        # covers the bare QoS threshold
        model = qoe.QoEModel(2, (1.0, 1.0), 0.2, 100)
        traj = np.full((20, 2), 2.0)
        mine = da1.predict_demand(model, 4.0, traj, CAT, 2.0, PARAMS, 540.0)
        sla = bench.hsla_demand(model, 4.0, traj, CAT, 2.0, PARAMS, 540.0)
        assert not mine.feasible
        assert sla.feasible
        assert sla.compute_cps < mine.compute_cps
        assert sla.bandwidth_hz < mine.bandwidth_hz


class TestPdrlOrchestrator:
    def _models(self, k):
        return {u: qoe.QoEModel(1 + u % 3, (0.5, 0.5), 0.2, 50) for u in range(k)}

    def _state(self, k):
        cfg = scenario.parse_overrides({"num_users": str(k), "preset_mode": "free"})
        from qoesim import netsim
        profiles = scenario.sample_users(cfg, np.random.default_rng(0))
        return cfg, netsim.SimState(cfg, profiles,
                                    {p.id: p.structure_index for p in profiles})

    def test_zero_policy_uniform_shares(self):
        k = 6
        cfg, state = self._state(k)
        orch = bench.PdrlOrchestrator(self._models(k), None, cfg)
        alloc = orch(state, 0)
        by_bs = {}
        for p in state.profiles:
            by_bs.setdefault(state.runtime[p.id].serving_bs, []).append(p.id)
        for bs, users in by_bs.items():
            expect = state.bw_caps[bs] / len(users)
            for u in users:
                assert alloc[u][0] == pytest.approx(expect)
        for u in range(k):
            assert alloc[u][1] == pytest.approx(state.cpu_cap / k)

    def test_shape_mismatch_on_user_count_change(self):
        k = 6
        cfg, state = self._state(k)
        rng = np.random.default_rng(1)
        policy = learn.BdqNetwork(bench.PDRL_USER_FEATURES * 4, (8,), 8,
                                  da1.SHARE_LEVELS, rng=rng)
        orch = bench.PdrlOrchestrator(self._models(k), policy, cfg)
        with pytest.raises(ShapeMismatch):
            orch(state, 0)

    def test_reward_definition_shared_with_proposed(self):
        # both training environments score an epoch with the same function
        from qoesim.runner import _GroupEnv, _PdrlEnv
        import inspect
        assert "epoch_reward" in inspect.getsource(_GroupEnv.step)
        assert "epoch_reward" in inspect.getsource(_PdrlEnv.step)


class TestGenericModel:
    def test_population_mean_params(self):
        m = bench.generic_model(CFG)
        assert m.structure_index == 3
        assert m.impact_params == (0.6, 0.6)
