"""Rollouts, the training loop and the learned selector (RL-PABFD)."""

import logging
from dataclasses import dataclass

import numpy as np

from ..cluster import ClusterConfig, MigrationSet, advance_slot, evaluate_placement, new_state
from ..errors import TrainingError
from ..metrics import summarize
from ..policies import DetectionConfig, Placer
from ..rng import make_rng
from .features import encode_state, pool
from .network import init_params
from .ppo import (PPOConfig, Adam, Trajectory, compute_advantages, ppo_update, reward,
                  select_action, value_predict)

log = logging.getLogger(__name__)

CURVE_HEADER = ["iteration", "mean_ec", "mean_slav", "mean_migrations", "clip_frac", "entropy"]


def rl_step(params, state, detection=DetectionConfig()):
    """Greedy migration set for the current slot; no overload detector involved."""
    feats = encode_state(state, detection)
    mask, _, _ = select_action(params, feats, "greedy")
    return MigrationSet.from_vms(state.placement, np.flatnonzero(mask))


def counterfactual_ec(state):
    """EC of the current slot if nothing migrated."""
    ec_host, mc, slavc, *_ = evaluate_placement(state, state.placement.host_of, state.slot)
    return ec_host + mc + slavc


def rollout(params, request, cluster_cfg, rng, detection=DetectionConfig(),
            reward_mode="counterfactual", mode="sample"):
    """Play one full episode; returns ``(trajectory, accounting)``.

    Rewards are left unscaled; :func:`train` divides them by the reward
    scale. In ``counterfactual`` mode the slot's reward compares the
    energy of keeping the placement against the energy actually spent
    after the chosen migrations; ``consecutive`` uses the previous slot's
    energy as the reference.
    """
    state = new_state(request, cluster_cfg)
    placer = Placer("pabfd")
    traj = Trajectory()
    accounting = []
    prev_ec = None
    while not state.done:
        feats = encode_state(state, detection)
        mask, _, lp = select_action(params, feats, mode, rng)
        pooled = pool(feats)
        mig = MigrationSet.from_vms(state.placement, np.flatnonzero(mask))
        ref = counterfactual_ec(state) if reward_mode == "counterfactual" else None
        state, acct = advance_slot(state, mig, placer)
        if reward_mode == "counterfactual":
            r = ref - acct.ec_total
        else:
            r = 0.0 if prev_ec is None else prev_ec - acct.ec_total
        prev_ec = acct.ec_total
        traj.features.append(feats)
        traj.actions.append(mask.astype(float))
        traj.logp.append(lp)
        traj.pooled.append(pooled)
        traj.values.append(0.0)
        traj.rewards.append(r)
        accounting.append(acct)
    traj.complete = True
    if traj.pooled:
        traj.values = list(value_predict(params, np.array(traj.pooled)))
    return traj, accounting


@dataclass
class TrainResult:
    params: object
    curve: list


def train(request, cluster_cfg=None, cfg=PPOConfig(), params=None,
          detection=DetectionConfig(), iterations=None, callback=None):
    """Train the selector with PABFD as the fixed placer.

    Each iteration plays ``cfg.rollout_episodes`` sampled episodes and
    performs one PPO update. Resuming from ``params`` continues its
    iteration counter and keeps its reward scale.
    """
    cluster_cfg = cluster_cfg or ClusterConfig()
    iterations = cfg.iterations if iterations is None else iterations
    params = init_params(cfg.seed, cfg.init_logit_bias) if params is None else params.copy()
    if cfg.reward_scale is not None:
        params.reward_scale = cfg.reward_scale
    optimizer = Adam(params.flat().size, lr=cfg.learning_rate)
    n_hosts = None
    curve = []
    for _ in range(iterations):
        it = params.iteration
        trajs, metrics = [], []
        for ep in range(cfg.rollout_episodes):
            rng = make_rng(cfg.seed, it, ep)
            traj, acct = rollout(params, request, cluster_cfg, rng, detection, cfg.reward_mode)
            if n_hosts is None:
                n_hosts = len(acct[0].chi) if acct else 0
            if params.reward_scale is None:
                mean_ec = float(np.mean([a.ec_total for a in acct])) if acct else 1.0
                params.reward_scale = mean_ec if mean_ec > 0 else 1.0
            traj.rewards = [reward(r, 0.0, params.reward_scale) for r in traj.rewards]
            compute_advantages(traj, cfg)
            trajs.append(traj)
            metrics.append(summarize(acct, request, n_hosts))
        params, diag = ppo_update(params, trajs, cfg, make_rng(cfg.seed, it, 0xADA), optimizer)
        if not params.is_finite():
            raise TrainingError(f"non-finite parameters after iteration {it}")
        params.iteration = it + 1
        row = {
            "iteration": it,
            "mean_ec": float(np.mean([m.total_ec for m in metrics])),
            "mean_slav": float(np.mean([m.slav for m in metrics])),
            "mean_migrations": float(np.mean([m.migrations for m in metrics])),
            "clip_frac": diag["clip_frac"],
            "entropy": diag["entropy"],
        }
        curve.append(row)
        log.info("iter %d  ec=%.4g  slav=%.3g  mig=%.1f  clip=%.3f  H=%.3f", it, row["mean_ec"],
                 row["mean_slav"], row["mean_migrations"], row["clip_frac"], row["entropy"])
        if callback is not None:
            callback(params, row)
    return TrainResult(params, curve)


def curve_csv(curve):
    lines = [",".join(CURVE_HEADER)]
    for row in curve:
        lines.append(",".join([str(row["iteration"])] + [repr(float(row[k])) for k in CURVE_HEADER[1:]]))
    return "\n".join(lines) + "\n"
