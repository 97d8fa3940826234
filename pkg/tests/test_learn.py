import numpy as np
import pytest

from qoesim import learn
from qoesim.errors import ShapeMismatch


def tiny_net():
    """2-in, one hidden pair, 2 branches x 2 actions, documented weights."""
    net = learn.BdqNetwork(2, (2,), 2, 2, rng=None, init="zeros")
    net.trunk_w[0] = np.array([[1.0, 0.0], [0.0, 1.0]])
    net.trunk_b[0] = np.array([0.1, -0.2])
    net.value_w = np.array([[0.5], [1.0]])
    net.value_b = np.array([0.25])
    net.adv_w[0] = np.array([[1.0, -1.0], [0.5, 0.5]])
    net.adv_b[0] = np.array([0.0, 0.1])
    net.adv_w[1] = np.array([[0.2, 0.3], [-0.4, 0.6]])
    net.adv_b[1] = np.array([0.05, -0.05])
    return net


def rand_net(rng, input_dim=3, hidden=(4,), branches=2, actions=3):
    return learn.BdqNetwork(input_dim, hidden, branches, actions, rng=rng)


def rand_batch(rng, net, n=5):
    batch = []
    for _ in range(n):
        batch.append(learn.Transition(
            state=rng.normal(size=net.input_dim),
            action=rng.integers(0, net.actions_per_branch, net.num_branches),
            reward=float(rng.normal()),
            next_state=rng.normal(size=net.input_dim),
            terminal=bool(rng.random() < 0.3)))
    return batch


class TestForward:
    def test_zero_network_all_zero(self):
        net = learn.BdqNetwork(4, (8, 8), 3, 5, rng=None, init="zeros")
        q = learn.forward(net, np.ones(4))
        assert np.all(q == 0.0)

    def test_dueling_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            net = rand_net(rng)
            s = rng.normal(size=3)
            q = learn.forward(net, s)
            v = learn.state_value(net, s)
            assert np.allclose(q.mean(axis=1), v, atol=1e-9)

    def test_golden_tiny_net(self):
        # state (1, 0): h = relu([1.1, -0.2]) = [1.1, 0]; V = 0.55 + 0.25 = 0.8
        # branch 0 adv = [1.1, -1.0], mean 0.05 -> Q = [1.85, -0.25]
        # branch 1 adv = [0.27, 0.28], mean 0.275 -> Q = [0.795, 0.805]
        q = learn.forward(tiny_net(), np.array([1.0, 0.0]))
        assert np.allclose(q[0], [1.85, -0.25], atol=1e-12)
        assert np.allclose(q[1], [0.795, 0.805], atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            learn.forward(tiny_net(), np.zeros(3))

    def test_argmax_invariant_to_advantage_shift(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            net = rand_net(rng)
            s = rng.normal(size=3)
            base = learn.greedy_actions(net, s)
            d = int(rng.integers(0, net.num_branches))
            net.adv_b[d] += 3.7  # constant shift of one branch's advantages
            assert np.array_equal(learn.greedy_actions(net, s), base)


class TestBackward:
    def test_zero_lr_no_change(self):
        rng = np.random.default_rng(2)
        net = rand_net(rng)
        before = [p.copy() for p in net.params()]
        learn.backward(net, rand_batch(rng, net), net.copy(), 0.9, lr=0.0)
        for b, a in zip(before, net.params()):
            assert np.array_equal(b, a)

    def test_gamma_zero_loss_closed_form(self):
        rng = np.random.default_rng(3)
        net = rand_net(rng)
        tr = learn.Transition(rng.normal(size=3), np.array([1, 2]), 0.7,
                              rng.normal(size=3), False)
        q = learn.forward(net, tr.state)
        expected = np.mean([(q[0, 1] - 0.7) ** 2, (q[1, 2] - 0.7) ** 2])
        loss = learn.backward(net, [tr], net.copy(), 0.0, lr=0.0)
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_gradient_check_central_differences(self):
        # analytic gradients vs central finite differences across 100 seeds
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            net = rand_net(rng)
            batch = rand_batch(rng, net, n=4)
            targets = learn.td_targets(net.copy(), batch, 0.9)
            _, grads = learn.loss_and_gradients(net, batch, targets)
            flat_grads = np.concatenate([
                *(g.ravel() for g in grads["trunk_w"]),
                *(g.ravel() for g in grads["trunk_b"]),
                grads["value_w"].ravel(), grads["value_b"].ravel(),
                *(g.ravel() for g in grads["adv_w"]),
                *(g.ravel() for g in grads["adv_b"])])
            params = net.params()
            fd = []
            eps = 1e-6
            for p in params:
                flat = p.ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    up = learn.loss_and_gradients(net, batch, targets)[0]
                    flat[i] = orig - eps
                    dn = learn.loss_and_gradients(net, batch, targets)[0]
                    flat[i] = orig
                    fd.append((up - dn) / (2 * eps))
            fd = np.array(fd)
            rel = np.abs(fd - flat_grads) / np.maximum(np.abs(fd), 1e-3)
            worst = max(worst, float(rel.max()))
        assert worst < 1e-4

    def test_loss_nonincreasing_on_fixed_batch(self):
        rng = np.random.default_rng(5)
        net = rand_net(rng)
        target = net.copy()
        batch = rand_batch(rng, net, n=8)
        losses = [learn.backward(net, batch, target, 0.9, lr=1e-3)
                  for _ in range(50)]
        for a, b in zip(losses, losses[1:]):
            assert b <= a + 1e-9

    def test_empty_batch(self):
        net = tiny_net()
        with pytest.raises(ShapeMismatch):
            learn.backward(net, [], net.copy(), 0.9, 0.1)


class BanditEnv:
    """2-branch contextual bandit with a known best joint action."""

    state_dim = 2
    num_branches = 2
    actions_per_branch = 3
    OPTIMA = {0: (2, 0), 1: (0, 1)}

    def __init__(self, rng):
        self.rng = rng
        self.ctx = 0

    def reset(self):
        self.ctx = int(self.rng.integers(0, 2))
        return np.eye(2)[self.ctx]

    def step(self, actions):
        opt = self.OPTIMA[self.ctx]
        reward = 0.5 * (actions[0] == opt[0]) + 0.5 * (actions[1] == opt[1])
        return np.eye(2)[self.ctx], reward, True


def bandit_hp(**over):
    base = dict(episodes=500, max_steps=1, hidden=(16,), lr=0.01, gamma=0.0,
                eps_start=1.0, eps_end=0.02, eps_decay_steps=350,
                batch_size=32, replay_capacity=2000, target_sync=50)
    base.update(over)
    return learn.Hyperparams(**base)


class TestTraining:
    def test_bandit_reaches_optimal_policy(self):
        rng = np.random.default_rng(42)
        net, _ = learn.train_episodes(BanditEnv(rng), bandit_hp(), rng)
        hits = 0
        for ctx in (0, 1):
            for _ in range(50):
                actions = learn.greedy_actions(net, np.eye(2)[ctx])
                hits += tuple(actions) == BanditEnv.OPTIMA[ctx]
        assert hits / 100 >= 0.95

    def test_pure_exploration_flat_curve(self):
        rng = np.random.default_rng(43)
        _, curve = learn.train_episodes(BanditEnv(rng),
                                        bandit_hp(eps_fixed=1.0), rng)
        first, second = np.mean(curve[:250]), np.mean(curve[250:])
        assert abs(first - second) < 0.1

    def test_deterministic_given_seed(self):
        c1 = learn.train_episodes(BanditEnv(np.random.default_rng(9)),
                                  bandit_hp(episodes=100),
                                  np.random.default_rng(9))[1]
        c2 = learn.train_episodes(BanditEnv(np.random.default_rng(9)),
                                  bandit_hp(episodes=100),
                                  np.random.default_rng(9))[1]
        assert c1 == c2


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        net = rand_net(rng, input_dim=5, hidden=(8, 6), branches=3, actions=4)
        path = str(tmp_path / "policy.json")
        learn.save_network(net, path)
        loaded = learn.load_network(path)
        s = rng.normal(size=5)
        assert np.array_equal(learn.forward(net, s), learn.forward(loaded, s))

    def test_bytes_stable(self, tmp_path):
        rng = np.random.default_rng(12)
        net = rand_net(rng)
        p1, p2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        learn.save_network(net, p1)
        learn.save_network(net, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()
