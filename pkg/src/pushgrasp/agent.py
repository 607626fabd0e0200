"""Actor-critic over the orientation heatmap and the single-PPO trainer.

The policy emits one flat vector per state: a 56x56 pixel-logit map over
the expanded target mask followed by 360 orientation-class logits. Both
heads are categorical; training samples them, evaluation takes argmaxes.
One PPO objective with GAE trains pushing and grasping jointly.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .nn import checkpoint as ckpt
from .nn import layers, ops
from .nn.optim import Adam, clip_grad_norm

GRID = 56
ORIENTATIONS = 360
MICRO_BATCH = 4  # backward working-set cap for the big conv


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip: float = 0.5
    n_envs: int = 8
    n_steps: int = 64
    updates: int = 50
    lr: float = 3e-4
    ckpt_every: int = 25
    step_limit: int = 30

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        for name in ("gamma", "lam", "epochs", "minibatch", "entropy_coef",
                     "value_coef", "grad_clip", "n_envs", "n_steps", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class _Net:
    """Shared plumbing for the policy and value stacks."""

    def __init__(self, seq: layers.Sequential, name: str):
        self.seq = seq
        self.name = name

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 3:
            return self.seq.forward(x[None])[0]
        return self.seq.forward(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.seq.backward(grad)

    def zero_grads(self) -> None:
        self.seq.zero_grads()

    def astype(self, dtype):
        self.seq.astype(dtype)
        return self

    def named_params(self):
        for n, p, g in self.seq.named_params():
            yield f"{self.name}/{n}", p, g

    def param_arrays(self):
        return self.seq.param_arrays()

    def grad_arrays(self):
        return self.seq.grad_arrays()

    def state_dict(self) -> dict:
        return {n: p.copy() for n, p, _ in self.named_params()}

    def load_state(self, state: dict) -> None:
        self.seq.load_state(state, prefix=f"{self.name}/")


def _trunk(rng, in_channels, trunk_ch, restore_ch):
    return [
        layers.Conv2d(in_channels, trunk_ch, 3, pad=1, rng=rng),
        layers.ReLU(),
        layers.DepthwiseConv(trunk_ch, 3, pad=1, rng=rng),
        layers.PointwiseConv(trunk_ch, trunk_ch, rng=rng),
        layers.ReLU(),
        layers.PointwiseConv(trunk_ch, restore_ch, rng=rng),
    ]


class PolicyNet(_Net):
    """Trunk 360->180->360 plus a three-layer head onto the action vector."""

    def __init__(self, rng: np.random.Generator, in_channels: int = ORIENTATIONS,
                 grid: int = GRID, trunk_ch: int = 180, restore_ch: int = ORIENTATIONS,
                 fc: tuple[int, int] = (1024, 512), orientations: int = ORIENTATIONS):
        self.grid = grid
        self.orientations = orientations
        self.action_size = grid * grid + orientations
        self.arch = (in_channels, grid, trunk_ch, restore_ch, fc[0], fc[1], orientations)
        flat = restore_ch * 49
        seq = layers.Sequential(_trunk(rng, in_channels, trunk_ch, restore_ch) + [
            layers.AdaptiveAvgPool((7, 7)),
            layers.Flatten(),
            layers.Linear(flat, fc[0], rng=rng),
            layers.ReLU(),
            layers.Linear(fc[0], fc[1], rng=rng),
            layers.ReLU(),
            layers.Linear(fc[1], self.action_size, rng=rng),
        ])
        super().__init__(seq, "policy")

    def split(self, out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One action vector -> (feature map grid x grid, orientation scores)."""
        fmap = out[: self.grid * self.grid].reshape(self.grid, self.grid)
        return fmap, out[self.grid * self.grid:]


class ValueNet(_Net):
    """Same trunk shape with separate weights; head condenses to a scalar."""

    def __init__(self, rng: np.random.Generator, in_channels: int = ORIENTATIONS,
                 grid: int = GRID, trunk_ch: int = 180, restore_ch: int = ORIENTATIONS,
                 fc: tuple[int, int] = (512, 64)):
        self.grid = grid
        self.arch = (in_channels, grid, trunk_ch, restore_ch, fc[0], fc[1], 1)
        flat = restore_ch * 49
        seq = layers.Sequential(_trunk(rng, in_channels, trunk_ch, restore_ch) + [
            layers.AdaptiveAvgPool((7, 7)),
            layers.Flatten(),
            layers.Linear(flat, fc[0], rng=rng),
            layers.ReLU(),
            layers.Linear(fc[0], fc[1], rng=rng),
            layers.ReLU(),
            layers.Linear(fc[1], 1, rng=rng),
        ])
        super().__init__(seq, "value")


def policy_forward(policy: PolicyNet, avh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the policy on one heatmap tensor and split the action vector."""
    out = policy.forward(avh.astype(np.float32, copy=False))
    return policy.split(out)


@dataclass(frozen=True)
class ActionSample:
    pixel: tuple            # (row, col) on the feature grid
    orientation: int        # flat angle-view class
    log_prob: float
    entropy: float
    feature_map: np.ndarray
    avh_ranking: np.ndarray  # 360 orientation scores


def masked_pixel_logits(fmap: np.ndarray, mask: np.ndarray) -> np.ndarray:
    flat = fmap.reshape(-1).astype(np.float64)
    out = np.where(mask.reshape(-1), flat, -np.inf)
    if not np.any(np.isfinite(out)):
        raise ops.EmptySupportError("sampling mask removed every pixel")
    return out


def sample_action(fmap: np.ndarray, scores: np.ndarray, target_mask: np.ndarray,
                  expanded_mask: np.ndarray, mode: str = "train",
                  rng: np.random.Generator | None = None) -> ActionSample:
    """Pick (pixel, orientation); stochastic in train mode, argmax in eval."""
    grid = fmap.shape[0]
    logits = masked_pixel_logits(fmap, expanded_mask)
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode sampling needs a generator")
        pix = ops.categorical_sample(logits, rng)
        ori = ops.categorical_sample(np.asarray(scores, dtype=np.float64), rng)
    elif mode == "eval":
        pix = int(np.argmax(logits))
        ori = int(np.argmax(scores))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    logp = float(ops.log_softmax(logits)[pix]
                 + ops.log_softmax(np.asarray(scores, dtype=np.float64))[ori])
    ent = ops.categorical_entropy(logits) + ops.categorical_entropy(scores)
    return ActionSample(pixel=(pix // grid, pix % grid), orientation=ori,
                        log_prob=logp, entropy=ent,
                        feature_map=fmap, avh_ranking=np.asarray(scores))


def compute_gae(rewards, values, dones, gamma: float, lam: float,
                bootstrap: float = 0.0):
    """Per-trajectory GAE; `values` has one entry per step, bootstrap closes it."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    t = len(rewards)
    adv = np.zeros(t)
    nxt = 0.0
    next_value = bootstrap
    for i in reversed(range(t)):
        notdone = 0.0 if dones[i] else 1.0
        delta = rewards[i] + gamma * next_value * notdone - values[i]
        nxt = delta + gamma * lam * notdone * nxt
        adv[i] = nxt
        next_value = values[i]
    return adv, adv + values


@dataclass
class Transition:
    scene: object           # immutable scene snapshot reference
    target_mask: np.ndarray
    expanded_mask: np.ndarray
    pixel: int              # flat feature-grid index
    orientation: int
    log_prob: float
    value: float
    reward: float
    done: bool


@dataclass
class RolloutBuffer:
    n_envs: int
    steps: list = field(default_factory=list)  # list of per-env lists

    def __post_init__(self):
        self.steps = [[] for _ in range(self.n_envs)]

    def add(self, env_idx: int, tr: Transition) -> None:
        self.steps[env_idx].append(tr)

    def clear(self) -> None:
        self.steps = [[] for _ in range(self.n_envs)]

    def flat(self) -> list[Transition]:
        return [tr for env in self.steps for tr in env]


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def _categorical_grad(logits: np.ndarray, idx: int, g_logp: float,
                      g_entropy: float) -> np.ndarray:
    """d(g_logp*logp[idx] + g_entropy*H)/d logits, zero at masked entries."""
    logp = ops.log_softmax(logits)
    p = np.exp(logp)
    onehot = np.zeros_like(p)
    onehot[idx] = 1.0
    h = float(-(p * np.where(p > 0, logp, 0.0)).sum())
    ent_grad = np.where(p > 0, -p * (logp + h), 0.0)
    return g_logp * (onehot - p) + g_entropy * ent_grad


def ppo_update(buffer: RolloutBuffer, policy: PolicyNet, value: ValueNet,
               optimizer: Adam, cfg: PpoConfig, rng: np.random.Generator,
               featurize, bootstraps: list[float]) -> dict:
    """Clipped-surrogate update over the collected buffer.

    `featurize(scene) -> avh` recomputes the policy input; observations are
    never stored. Returns mean loss statistics for the training log.
    """
    grid = policy.grid
    per_env_adv, per_env_ret = [], []
    for env_steps, boot in zip(buffer.steps, bootstraps):
        r = [tr.reward for tr in env_steps]
        v = [tr.value for tr in env_steps]
        d = [tr.done for tr in env_steps]
        adv, ret = compute_gae(r, v, d, cfg.gamma, cfg.lam, bootstrap=boot)
        per_env_adv.append(adv)
        per_env_ret.append(ret)
    trs = buffer.flat()
    adv = normalize_advantages(np.concatenate(per_env_adv))
    ret = np.concatenate(per_env_ret)

    n = len(trs)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "clip_frac": 0.0, "kl": 0.0}
    batches = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            sel = order[start:start + cfg.minibatch]
            if len(sel) == 0:
                continue
            b = len(sel)
            policy.zero_grads()
            value.zero_grads()
            acc = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
                   "clip": 0.0, "kl": 0.0}
            for cstart in range(0, b, MICRO_BATCH):
                chunk = sel[cstart:cstart + MICRO_BATCH]
                avh = np.stack([featurize(trs[i].scene) for i in chunk])
                out = policy.forward(avh)
                vals = value.forward(avh)[:, 0]
                gout = np.zeros_like(out)
                gval = np.zeros_like(vals)
                for row, i in enumerate(chunk):
                    tr = trs[i]
                    fmap, scores = policy.split(out[row])
                    pl = masked_pixel_logits(fmap, np.asarray(tr.expanded_mask))
                    ol = scores.astype(np.float64)
                    logp_new = float(ops.log_softmax(pl)[tr.pixel]
                                     + ops.log_softmax(ol)[tr.orientation])
                    ent = ops.categorical_entropy(pl) + ops.categorical_entropy(ol)
                    ratio = math.exp(logp_new - tr.log_prob)
                    a = float(adv[i])
                    surr1 = ratio * a
                    surr2 = min(max(ratio, 1 - cfg.clip), 1 + cfg.clip) * a
                    acc["policy_loss"] += -min(surr1, surr2)
                    acc["entropy"] += ent
                    acc["clip"] += 1.0 if abs(ratio - 1.0) > cfg.clip else 0.0
                    acc["kl"] += (ratio - 1.0) - (logp_new - tr.log_prob)
                    g_logp = (-ratio * a / b) if surr1 <= surr2 else 0.0
                    g_ent = -cfg.entropy_coef / b
                    gpix = _categorical_grad(pl, tr.pixel, g_logp, g_ent)
                    gori = _categorical_grad(ol, tr.orientation, g_logp, g_ent)
                    gout[row, :grid * grid] = gpix.astype(out.dtype)
                    gout[row, grid * grid:] = gori.astype(out.dtype)
                    verr = float(vals[row]) - float(ret[i])
                    acc["value_loss"] += verr * verr
                    gval[row] = cfg.value_coef * 2.0 * verr / b
                policy.backward(gout)
                value.backward(gval[:, None])
            grads = policy.grad_arrays() + value.grad_arrays()
            clip_grad_norm(grads, cfg.grad_clip)
            optimizer.step(grads)
            stats["policy_loss"] += acc["policy_loss"] / b
            stats["value_loss"] += acc["value_loss"] / b
            stats["entropy"] += acc["entropy"] / b
            stats["clip_frac"] += acc["clip"] / b
            stats["kl"] += acc["kl"] / b
            batches += 1
    for k in stats:
        stats[k] /= max(1, batches)
    return stats


TRAIN_LOG_HEADER = ["update", "ep_reward", "ep_len", "policy_loss",
                    "value_loss", "entropy", "clip_frac", "kl"]


def save_networks(path, policy: PolicyNet, value: ValueNet) -> None:
    state = policy.state_dict()
    state.update(value.state_dict())
    state["meta/policy_arch"] = np.asarray(policy.arch, dtype=np.int64)
    state["meta/value_arch"] = np.asarray(value.arch, dtype=np.int64)
    ckpt.save(path, state)


def load_networks(path, policy: PolicyNet, value: ValueNet) -> None:
    state = ckpt.load(path)
    for key, net in (("meta/policy_arch", policy), ("meta/value_arch", value)):
        if key in state and tuple(state[key]) != tuple(net.arch):
            raise ckpt.CheckpointError(
                f"{path}: stored {key} {tuple(state[key])} does not match "
                f"network {tuple(net.arch)}")
    policy.load_state(state)
    value.load_state(state)


def train_loop(cfg: PpoConfig, env_factory, featurize, seed: int,
               out_dir: str | None = None, two_stage: bool = False,
               policy: PolicyNet | None = None, value: ValueNet | None = None,
               log_stream=None) -> dict:
    """Collect/update cycles over vectorized environments.

    env_factory(index, seed_sequence) builds one training environment with
    reset() -> scene and step(sample) -> (reward, done, info); featurize
    maps a scene to (avh, mask pair). Writes one CSV record per update and
    periodic checkpoints when out_dir is given. Deterministic per seed.
    """
    root = np.random.SeedSequence(seed)
    net_ss, samp_ss, perm_ss, env_ss = root.spawn(4)
    net_rng = np.random.default_rng(net_ss)
    sample_rng = np.random.default_rng(samp_ss)
    perm_rng = np.random.default_rng(perm_ss)
    if policy is None:
        policy = PolicyNet(net_rng)
    if value is None:
        value = ValueNet(net_rng)
    optimizer = Adam(policy.param_arrays() + value.param_arrays(), lr=cfg.lr)

    envs = [env_factory(i, s) for i, s in enumerate(env_ss.spawn(cfg.n_envs))]
    stage_split = cfg.updates // 2 if two_stage else 0
    for i, env in enumerate(envs):
        if two_stage:
            env.set_curriculum("grasp")
        env.reset()

    writer = None
    if log_stream is not None:
        writer = csv.writer(log_stream)
        writer.writerow(TRAIN_LOG_HEADER)
    log_rows = []

    def checkpoint_path(tag):
        return os.path.join(out_dir, f"ckpt_{tag}.pgsb")

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_networks(checkpoint_path(0), policy, value)

    ep_rewards: list[float] = []
    ep_lens: list[float] = []
    running = [{"reward": 0.0, "len": 0} for _ in envs]
    last_reward, last_len = 0.0, 0.0

    for update in range(1, cfg.updates + 1):
        if two_stage and update == stage_split + 1:
            for env in envs:
                env.set_curriculum(env.main_curriculum)
                env.reset()
        buffer = RolloutBuffer(cfg.n_envs)
        finished_r, finished_l = [], []
        for _ in range(cfg.n_steps):
            for ei, env in enumerate(envs):
                scene = env.scene
                avh, masks = featurize(scene, with_masks=True)
                fmap, scores = policy_forward(policy, avh)
                sample = sample_action(fmap, scores, masks.target_mask_56,
                                       masks.expanded_mask_56, "train", sample_rng)
                val = float(value.forward(avh)[0])
                reward, done, _ = env.step(sample)
                buffer.add(ei, Transition(
                    scene=scene, target_mask=masks.target_mask_56,
                    expanded_mask=masks.expanded_mask_56,
                    pixel=sample.pixel[0] * policy.grid + sample.pixel[1],
                    orientation=sample.orientation, log_prob=sample.log_prob,
                    value=val, reward=reward, done=done))
                running[ei]["reward"] += reward
                running[ei]["len"] += 1
                if done:
                    finished_r.append(running[ei]["reward"])
                    finished_l.append(running[ei]["len"])
                    running[ei] = {"reward": 0.0, "len": 0}
                    env.reset()
        bootstraps = []
        for env in envs:
            avh, _ = featurize(env.scene, with_masks=True)
            bootstraps.append(float(value.forward(avh)[0]))
        stats = ppo_update(buffer, policy, value, optimizer, cfg, perm_rng,
                           lambda s: featurize(s, with_masks=False), bootstraps)
        if finished_r:
            last_reward = float(np.mean(finished_r))
            last_len = float(np.mean(finished_l))
            ep_rewards.extend(finished_r)
            ep_lens.extend(finished_l)
        row = [update, f"{last_reward:.6f}", f"{last_len:.3f}",
               f"{stats['policy_loss']:.6f}", f"{stats['value_loss']:.6f}",
               f"{stats['entropy']:.6f}", f"{stats['clip_frac']:.6f}",
               f"{stats['kl']:.8f}"]
        log_rows.append(row)
        if writer is not None:
            writer.writerow(row)
        if out_dir and cfg.ckpt_every > 0 and update % cfg.ckpt_every == 0:
            save_networks(checkpoint_path(update), policy, value)
    if out_dir:
        save_networks(os.path.join(out_dir, "ckpt_final.pgsb"), policy, value)
    return {"policy": policy, "value": value, "log": log_rows,
            "ep_rewards": ep_rewards, "ep_lens": ep_lens}
