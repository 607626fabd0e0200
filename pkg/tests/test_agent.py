import math

import numpy as np
import pytest

from pushgrasp import agent
from pushgrasp.nn import ops
from pushgrasp.nn.optim import Adam


def small_nets(seed=0):
    rng = np.random.default_rng(seed)
    policy = agent.PolicyNet(rng, in_channels=8, grid=8, trunk_ch=6, restore_ch=8,
                             fc=(16, 12), orientations=10)
    value = agent.ValueNet(rng, in_channels=8, grid=8, trunk_ch=6, restore_ch=8,
                           fc=(16, 8))
    return policy, value


def test_policy_output_split_sizes(rng):
    policy = agent.PolicyNet(rng)
    assert policy.action_size == 56 * 56 + 360 == 3496
    out = np.arange(3496, dtype=np.float32)
    fmap, scores = policy.split(out)
    assert fmap.shape == (56, 56)
    assert scores.shape == (360,)
    assert fmap[0, 1] == 1.0
    assert scores[0] == 3136.0


def test_policy_forward_full_width_once(rng):
    policy = agent.PolicyNet(rng)
    avh = rng.random((360, 56, 56)).astype(np.float32)
    fmap, scores = agent.policy_forward(policy, avh)
    assert fmap.shape == (56, 56) and scores.shape == (360,)
    assert np.isfinite(fmap).all() and np.isfinite(scores).all()
    fmap2, scores2 = agent.policy_forward(policy, avh)
    assert np.array_equal(fmap, fmap2) and np.array_equal(scores, scores2)


def test_zeroed_final_layer_gives_uniform_masked_softmax():
    policy, _ = small_nets()
    last = policy.seq.layers[-1]
    last.params["weight"][...] = 0
    last.params["bias"][...] = 0
    avh = np.random.default_rng(1).random((8, 8, 8)).astype(np.float32)
    fmap, scores = agent.policy_forward(policy, avh)
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:4, 3:6] = True
    logits = agent.masked_pixel_logits(fmap, mask)
    p = ops.softmax(logits)
    assert np.allclose(p[np.isfinite(logits)], 1.0 / mask.sum())


def test_sample_action_eval_argmax():
    fmap = np.zeros((8, 8), np.float32)
    fmap[3, 4] = 5.0
    fmap[6, 6] = 9.0  # outside the mask: must be ignored
    mask = np.zeros((8, 8), dtype=bool)
    mask[3, 4] = True
    mask[2, 2] = True
    target = np.zeros((8, 8), dtype=bool)
    target[3, 4] = True
    scores = np.arange(10.0)
    s = agent.sample_action(fmap, scores, target, mask, mode="eval")
    assert s.pixel == (3, 4)
    assert s.orientation == 9
    lp = (ops.log_softmax(agent.masked_pixel_logits(fmap, mask))[3 * 8 + 4]
          + ops.log_softmax(scores)[9])
    assert s.log_prob == pytest.approx(lp)


def test_sample_action_train_statistics():
    rng = np.random.default_rng(42)
    fmap = np.zeros((8, 8), np.float32)  # uniform over the mask
    mask = np.zeros((8, 8), dtype=bool)
    mask.reshape(-1)[[3, 9, 17, 22, 31, 40, 44, 50, 57, 63]] = True
    target = np.zeros((8, 8), dtype=bool)
    scores = np.zeros(4)
    n = 20_000
    counts = {}
    for _ in range(n):
        s = agent.sample_action(fmap, scores, target, mask, mode="train", rng=rng)
        flat = s.pixel[0] * 8 + s.pixel[1]
        counts[flat] = counts.get(flat, 0) + 1
    assert set(counts) == {3, 9, 17, 22, 31, 40, 44, 50, 57, 63}
    # each probability 0.1; 3 sigma band for n draws
    sigma = math.sqrt(0.1 * 0.9 / n)
    for c in counts.values():
        assert abs(c / n - 0.1) < 3.5 * sigma


def test_sample_action_empty_mask_raises():
    fmap = np.zeros((8, 8), np.float32)
    empty = np.zeros((8, 8), dtype=bool)
    with pytest.raises(ops.EmptySupportError):
        agent.sample_action(fmap, np.zeros(4), empty, empty, mode="eval")


def test_eval_is_argmax_limit_of_train_sampling():
    rng = np.random.default_rng(0)
    fmap = rng.random((8, 8)).astype(np.float32)
    mask = np.ones((8, 8), dtype=bool)
    scores = rng.random(10)
    ev = agent.sample_action(fmap, scores, mask, mask, mode="eval")
    sharp = agent.sample_action(fmap * 1e4, scores * 1e4, mask, mask,
                                mode="train", rng=rng)
    assert ev.pixel == sharp.pixel
    assert ev.orientation == sharp.orientation


def test_gae_single_terminal_step():
    adv, ret = agent.compute_gae([1.0], [0.0], [True], 0.99, 0.95)
    assert adv[0] == pytest.approx(1.0)
    assert ret[0] == pytest.approx(1.0)


def test_gae_two_step_hand_recursion():
    adv, ret = agent.compute_gae([0.0, 1.0], [0.0, 0.0], [False, True], 0.99, 0.95)
    assert adv[1] == pytest.approx(1.0)
    assert adv[0] == pytest.approx(0.99 * 0.95 * 1.0 + 0.0 + 0.99 * 0.0)
    assert ret[0] == pytest.approx(adv[0])


def test_gae_zero_everything():
    adv, ret = agent.compute_gae([0.0] * 5, [0.0] * 5, [False] * 5, 0.99, 0.95)
    assert np.allclose(adv, 0.0)
    assert np.allclose(ret, 0.0)


def test_gae_bootstrap_value():
    adv, _ = agent.compute_gae([0.0], [0.0], [False], 0.99, 0.95, bootstrap=2.0)
    assert adv[0] == pytest.approx(0.99 * 2.0)


def test_advantage_normalization():
    rng = np.random.default_rng(3)
    adv = agent.normalize_advantages(rng.standard_normal(512) * 7 + 3)
    assert abs(adv.mean()) < 1e-6
    assert abs(adv.std() - 1.0) < 1e-6


def test_clip_objective_arithmetic():
    # ratio 2 with positive advantage: objective min(2, 1.2) = 1.2
    ratio, a, clip = 2.0, 1.0, 0.2
    surr1 = ratio * a
    surr2 = min(max(ratio, 1 - clip), 1 + clip) * a
    assert min(surr1, surr2) == pytest.approx(1.2)


def test_categorical_grad_matches_finite_differences():
    rng = np.random.default_rng(9)
    logits = rng.standard_normal(6)
    idx = 2
    g_logp, g_ent = 0.7, -0.3

    def f(z):
        lp = ops.log_softmax(z)[idx]
        return g_logp * lp + g_ent * ops.categorical_entropy(z)

    grad = agent._categorical_grad(logits, idx, g_logp, g_ent)
    h = 1e-6
    for j in range(6):
        zp, zm = logits.copy(), logits.copy()
        zp[j] += h
        zm[j] -= h
        fd = (f(zp) - f(zm)) / (2 * h)
        assert grad[j] == pytest.approx(fd, abs=1e-6)


class _FakeEnv:
    """Bandit-style env over synthetic heatmaps for exercising the loop."""

    def __init__(self, seed_seq, grid=8, channels=8):
        self.rng = np.random.default_rng(seed_seq)
        self.grid = grid
        self.channels = channels
        self.main_curriculum = "packed"
        self.steps = 0

    def set_curriculum(self, name):
        pass

    def reset(self):
        self.steps = 0
        self.scene = self.rng.random((self.channels, self.grid, self.grid)).astype(np.float32)
        return self.scene

    def step(self, sample):
        # reward peaks when the chosen pixel is in the brightest quadrant
        r, c = sample.pixel
        reward = 1.0 if (r < self.grid // 2) == (self.scene[0, 0, 0] > 0.5) else 0.0
        self.steps += 1
        done = self.steps >= 4
        if done:
            self.reset()
        return reward, done, {}


def fake_featurize(scene, with_masks=True):
    avh = np.asarray(scene, dtype=np.float32)
    if not with_masks:
        return avh
    grid = avh.shape[1]
    from pushgrasp.decode import MaskPair
    full = np.ones((grid, grid), dtype=bool)
    target = np.zeros((grid, grid), dtype=bool)
    target[: grid // 2] = True
    return avh, MaskPair(target_mask_56=target, expanded_mask_56=full)


def test_ppo_update_runs_and_reports(tmp_path):
    policy, value = small_nets()
    cfg = agent.PpoConfig(n_envs=2, n_steps=6, minibatch=6, epochs=2, updates=1)
    optimizer = Adam(policy.param_arrays() + value.param_arrays(), lr=1e-3)
    rng = np.random.default_rng(0)
    env = _FakeEnv(np.random.SeedSequence(0))
    env.reset()
    buffer = agent.RolloutBuffer(1)
    for _ in range(8):
        scene = env.scene
        avh, masks = fake_featurize(scene)
        fmap, scores = agent.policy_forward(policy, avh)
        s = agent.sample_action(fmap, scores, masks.target_mask_56,
                                masks.expanded_mask_56, "train", rng)
        val = float(value.forward(avh)[0])
        reward, done, _ = env.step(s)
        buffer.add(0, agent.Transition(scene, masks.target_mask_56,
                                       masks.expanded_mask_56,
                                       s.pixel[0] * 8 + s.pixel[1], s.orientation,
                                       s.log_prob, val, reward, done))
    stats = agent.ppo_update(buffer, policy, value, optimizer, cfg, rng,
                             lambda s: fake_featurize(s, with_masks=False), [0.0])
    for key in ("policy_loss", "value_loss", "entropy", "clip_frac", "kl"):
        assert np.isfinite(stats[key])
    assert stats["entropy"] > 0


def test_train_loop_determinism(tmp_path):
    cfg = agent.PpoConfig(n_envs=2, n_steps=4, minibatch=8, epochs=1, updates=3,
                          ckpt_every=2)
    logs = []
    for run in range(2):
        policy, value = small_nets(7)
        out = agent.train_loop(cfg, lambda i, ss: _FakeEnv(ss), fake_featurize,
                               seed=123, policy=policy, value=value)
        logs.append(out["log"])
    assert logs[0] == logs[1]


def test_train_loop_writes_checkpoints(tmp_path):
    cfg = agent.PpoConfig(n_envs=1, n_steps=4, minibatch=4, epochs=1, updates=2,
                          ckpt_every=1)
    policy, value = small_nets(1)
    agent.train_loop(cfg, lambda i, ss: _FakeEnv(ss), fake_featurize, seed=5,
                     out_dir=str(tmp_path), policy=policy, value=value)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"ckpt_0.pgsb", "ckpt_1.pgsb", "ckpt_2.pgsb", "ckpt_final.pgsb"} <= names


def test_network_checkpoint_round_trip_and_arch_guard(tmp_path):
    policy, value = small_nets(3)
    path = tmp_path / "net.pgsb"
    agent.save_networks(path, policy, value)
    policy2, value2 = small_nets(4)
    agent.load_networks(path, policy2, value2)
    x = np.random.default_rng(0).random((8, 8, 8)).astype(np.float32)
    assert np.array_equal(policy.forward(x), policy2.forward(x))
    # incompatible architecture is rejected before any partial load
    rng = np.random.default_rng(5)
    other = agent.PolicyNet(rng, in_channels=8, grid=8, trunk_ch=4, restore_ch=8,
                            fc=(16, 12), orientations=10)
    from pushgrasp.nn.checkpoint import CheckpointError
    with pytest.raises(CheckpointError):
        agent.load_networks(path, other, value2)


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        agent.PpoConfig(clip=1.5)
    with pytest.raises(ValueError):
        agent.PpoConfig(gamma=-0.1)
