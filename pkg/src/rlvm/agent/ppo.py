"""Proximal policy optimisation over per-VM Bernoulli migrate decisions.

The joint action of a slot is a bitmask over VMs. Each bit is an
independent Bernoulli draw with probability ``sigmoid(policy(f_i))``, so
the joint log-probability is the sum of per-VM terms. Updates treat
every (slot, VM) pair as one sample carrying the slot's advantage.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ..errors import ConfigError, IncompleteTrajectory, NonFiniteGradient, PreconditionError
from .network import POLICY_NET, VALUE_NET, flatten_grads


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    epochs_per_update: int = 4
    minibatch_size: int = 256
    rollout_episodes: int = 1
    iterations: int = 50
    reward_scale: float | None = None
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    init_logit_bias: float = -3.0
    reward_mode: str = "counterfactual"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0 < self.clip_eps < 1:
            raise ConfigError("clip_eps must lie in (0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if self.epochs_per_update < 1 or self.minibatch_size < 1 or self.rollout_episodes < 1:
            raise ConfigError("epochs, minibatch size and rollouts must be positive")
        if self.reward_mode not in ("counterfactual", "consecutive"):
            raise ConfigError("reward_mode must be 'counterfactual' or 'consecutive'")
        if self.reward_scale is not None and not self.reward_scale > 0:
            raise ConfigError("reward_scale must be positive")

    @classmethod
    def from_mapping(cls, values, prefix="ppo."):
        kwargs = {}
        for f in fields(cls):
            key = prefix + f.name
            if key in values:
                raw = values[key]
                if f.name == "reward_mode":
                    kwargs[f.name] = raw
                elif f.name == "reward_scale":
                    kwargs[f.name] = None if raw in ("", "none", "auto") else float(raw)
                elif f.type in ("int", int):
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = float(raw)
        return cls(**kwargs)


@dataclass
class Trajectory:
    """One episode of experience.

    Per step: ``features`` (n_vms x 7), ``actions`` (n_vms,), per-VM
    ``logp`` under the behaviour policy, ``pooled`` value inputs, the
    value estimate and the raw energy pair the reward is built from.
    """

    features: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    pooled: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    complete: bool = False
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)

    def joint_logp(self, t):
        return float(np.sum(self.logp[t]))


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return np.exp(-softplus(-x))


def bernoulli_logp(logits, actions):
    """log P(actions) per element for Bernoulli(sigmoid(logits))."""
    return -softplus(np.where(actions > 0, -logits, logits))


def bernoulli_entropy(logits):
    p = sigmoid(logits)
    return p * softplus(-logits) + (1 - p) * softplus(logits)


def policy_logits(params, features):
    out, _ = POLICY_NET.forward(params.policy, features)
    return out[:, 0]


def select_action(params, features, mode="greedy", rng=None):
    """Pick the VMs to migrate.

    Returns ``(mask, joint_logp, per_vm_logp)``. ``sample`` draws each
    VM independently from ``rng``; ``greedy`` selects VMs with p > 0.5.
    """
    features = np.asarray(features, dtype=float)
    if not np.all(np.isfinite(features)):
        raise PreconditionError("features must be finite")
    if len(features) == 0:
        return np.zeros(0, dtype=np.int8), 0.0, np.zeros(0)
    z = policy_logits(params, features)
    if mode == "greedy":
        mask = (z > 0).astype(np.int8)
    elif mode == "sample":
        if rng is None:
            raise PreconditionError("sampling needs a random generator")
        mask = (rng.random(len(z)) < sigmoid(z)).astype(np.int8)
    else:
        raise ConfigError(f"unknown action mode {mode!r}")
    lp = bernoulli_logp(z, mask)
    return mask, float(np.sum(lp)), lp


def reward(ec_t, ec_next, scale=1.0):
    """Energy decrement between two accountings, divided by ``scale``."""
    if not scale > 0:
        raise PreconditionError("reward scale must be positive")
    return (ec_t - ec_next) / scale


def compute_advantages(traj, cfg):
    """Fill ``traj.advantages`` (GAE) and ``traj.returns``; V after the last slot is 0."""
    if not traj.complete:
        raise IncompleteTrajectory("trajectory does not end at the final slot")
    r = np.asarray(traj.rewards, dtype=float)
    v = np.asarray(traj.values, dtype=float)
    if len(r) != len(v):
        raise IncompleteTrajectory("rewards and values differ in length")
    adv = np.zeros(len(r))
    running = 0.0
    for t in range(len(r) - 1, -1, -1):
        v_next = v[t + 1] if t + 1 < len(r) else 0.0
        delta = r[t] + cfg.gamma * v_next - v[t]
        running = delta + cfg.gamma * cfg.gae_lambda * running
        adv[t] = running
    traj.advantages = adv
    traj.returns = adv + v
    return traj


def ppo_ratio(logp_new, logp_old):
    logp_new = np.asarray(logp_new, dtype=float)
    logp_old = np.asarray(logp_old, dtype=float)
    if logp_new.shape != logp_old.shape:
        raise PreconditionError("log-probability arrays differ in shape")
    return np.exp(logp_new - logp_old)


def clipped_objective(ratios, advantages, eps):
    """Mean of ``min(r * A, clip(r, 1 - eps, 1 + eps) * A)``."""
    ratios = np.asarray(ratios, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    if ratios.shape != advantages.shape:
        raise PreconditionError("ratios and advantages differ in shape")
    if ratios.size == 0:
        return 0.0
    surr = np.minimum(ratios * advantages, np.clip(ratios, 1 - eps, 1 + eps) * advantages)
    return float(np.mean(surr))


def surrogate_terms(params, features, actions, logp_old, adv, eps):
    """Clipped surrogate, its gradient w.r.t. the policy net, and clip stats."""
    z, acts = POLICY_NET.forward(params.policy, features)
    z = z[:, 0]
    lp = bernoulli_logp(z, actions)
    ratio = np.exp(lp - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
    obj = float(np.mean(np.minimum(unclipped, clipped)))
    # the unclipped branch carries gradient; a binding clip contributes none
    active = unclipped <= clipped
    dz = np.where(active, adv * ratio, 0.0) * (actions - sigmoid(z)) / len(z)
    grads = POLICY_NET.backward(params.policy, acts, dz[:, None])
    clip_frac = float(np.mean(np.abs(ratio - 1) > eps))
    return obj, grads, clip_frac, ratio


def entropy_terms(params, features):
    z, acts = POLICY_NET.forward(params.policy, features)
    z = z[:, 0]
    ent = bernoulli_entropy(z)
    p = sigmoid(z)
    dz = -z * p * (1 - p) / len(z)
    grads = POLICY_NET.backward(params.policy, acts, dz[:, None])
    return float(np.mean(ent)), grads


def value_terms(params, pooled, returns):
    """Half mean squared error of the value net and its gradient."""
    out, acts = VALUE_NET.forward(params.value, pooled)
    err = out[:, 0] - returns
    loss = 0.5 * float(np.mean(err ** 2))
    grads = VALUE_NET.backward(params.value, acts, (err / len(err))[:, None])
    return loss, grads


def value_predict(params, pooled):
    out, _ = VALUE_NET.forward(params.value, np.atleast_2d(pooled))
    return out[:, 0]


class Adam:
    """Adaptive moment estimation with bias correction.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    x <- x - lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
    """

    def __init__(self, size, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.k = 0

    def step(self, x, g):
        self.k += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.k)
        v_hat = self.v / (1 - self.beta2 ** self.k)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _zero_grads(layers):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]


def _add(a, b, scale=1.0):
    return [(wa + scale * wb, ba + scale * bb) for (wa, ba), (wb, bb) in zip(a, b)]


def loss_and_grad(params, batch, cfg):
    """Total loss ``-(J_clip + c_ent H) + c_v L_v`` and its flat gradient."""
    obj, g_pol, clip_frac, ratio = surrogate_terms(
        params, batch["features"], batch["actions"], batch["logp"], batch["adv"], cfg.clip_eps)
    ent, g_ent = entropy_terms(params, batch["features"])
    vloss, g_val = value_terms(params, batch["pooled"], batch["returns"])
    g_policy = _add(g_pol, g_ent, cfg.entropy_coef)
    g_policy = [(-gw, -gb) for gw, gb in g_policy]
    g_value = [(cfg.value_coef * gw, cfg.value_coef * gb) for gw, gb in g_val]
    loss = -(obj + cfg.entropy_coef * ent) + cfg.value_coef * vloss
    stats = {"objective": obj, "entropy": ent, "value_loss": vloss,
             "clip_frac": clip_frac, "mean_ratio": float(np.mean(ratio)) if len(ratio) else 1.0}
    return loss, flatten_grads(g_policy, g_value), stats


def flatten_batch(trajectories):
    """Stack (slot, VM) samples and per-slot value samples of several episodes."""
    feats, acts, logp, adv, pooled, rets = [], [], [], [], [], []
    for tr in trajectories:
        if tr.advantages is None:
            raise IncompleteTrajectory("advantages not computed")
        for t in range(len(tr)):
            f = tr.features[t]
            feats.append(f)
            acts.append(tr.actions[t])
            logp.append(tr.logp[t])
            adv.append(np.full(len(f), tr.advantages[t]))
        pooled.extend(tr.pooled)
        rets.extend(tr.returns)
    n_feat = POLICY_NET.sizes[0]
    return {
        "features": np.concatenate(feats) if feats else np.zeros((0, n_feat)),
        "actions": np.concatenate(acts).astype(float) if acts else np.zeros(0),
        "logp": np.concatenate(logp) if logp else np.zeros(0),
        "adv": np.concatenate(adv) if adv else np.zeros(0),
        "step_adv": np.concatenate([tr.advantages for tr in trajectories]),
        "pooled": np.asarray(pooled, dtype=float).reshape(-1, 2 * n_feat),
        "returns": np.asarray(rets, dtype=float),
    }


def ppo_update(params, trajectories, cfg, rng, optimizer=None):
    """Run ``epochs_per_update`` epochs of minibatch Adam on the PPO loss.

    Advantages are normalised to zero mean and unit variance over the
    whole batch of slots first. Returns ``(new_params, diagnostics)``.
    """
    if not trajectories:
        raise IncompleteTrajectory("no trajectories to learn from")
    for tr in trajectories:
        if tr.advantages is None:
            compute_advantages(tr, cfg)
    data = flatten_batch(trajectories)
    step_adv = data["step_adv"]
    mu, sd = float(np.mean(step_adv)), float(np.std(step_adv))
    norm = lambda a: (a - mu) / (sd + 1e-8)
    data["adv"] = norm(data["adv"])

    x = params.flat()
    opt = optimizer or Adam(x.size, lr=cfg.learning_rate)
    n_samples = len(data["actions"])
    n_steps = len(data["returns"])
    n_batches = max(1, math.ceil(n_samples / cfg.minibatch_size))
    stats_acc = []
    current = params
    for epoch in range(cfg.epochs_per_update):
        sample_perm = rng.permutation(n_samples)
        step_perm = rng.permutation(n_steps)
        for idx, sidx in zip(np.array_split(sample_perm, n_batches),
                             np.array_split(step_perm, n_batches)):
            batch = {k: data[k][idx] for k in ("features", "actions", "logp", "adv")}
            batch["pooled"] = data["pooled"][sidx]
            batch["returns"] = data["returns"][sidx]
            _, grad, stats = loss_and_grad(current, batch, cfg)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradient(opt.k + 1)
            norm_g = float(np.linalg.norm(grad))
            if cfg.max_grad_norm and norm_g > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / norm_g)
            x = opt.step(x, grad)
            current = params.with_flat(x)
            stats_acc.append(stats)
    diag = {k: float(np.mean([s[k] for s in stats_acc])) for k in stats_acc[0]}
    diag["updates"] = len(stats_acc)
    return current, diag
