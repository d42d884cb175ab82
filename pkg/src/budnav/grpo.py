"""Group-relative policy optimisation over rollout groups.

A group holds G rollouts of one episode: the greedy probe plus G-1
stochastic rollouts, all produced under the same behaviour snapshot.
Each rollout earns a scalar reward

    R = 1[success] * (c_succ + spl_weight * SPL) - c_dist * d_remain

where d_remain is the geodesic distance (meters) from the final
position to the goal (straight-line with a logged warning when the
final cell is cut off from the goal).  Advantages are the group-wise
standardised rewards; a zero-variance group yields all-zero advantages
and leaves only the KL term.

The loss is the negative clipped-ratio surrogate with a per-step KL
penalty against a fixed reference policy:

    J = mean_i (1/T_i) * sum_t [ min(rho*A_i, clip(rho, 1-eps, 1+eps)*A_i)
                                 - beta * KL(pi_theta || pi_ref) ]
    loss = -J

with rho the probability ratio of the taken action between the live
policy and the behaviour snapshot.  The clipped branch contributes no
gradient through rho.  Gradients are fully analytic.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import GroupTooSmall, SnapshotMismatch
from .oracle import GeodesicField, geodesic_field
from .policy import (
    GradAccumulator,
    PolicyParams,
    PolicySnapshot,
    PROB_FLOOR,
    featurize,
    forward,
    forward_cached,
    softmax,
)
from .rollout import Trajectory
from .world import Episode, euclid_m

log = logging.getLogger(__name__)

SNAPSHOT_TOL = 1e-9


@dataclass(frozen=True)
class RewardConfig:
    c_succ: float = 2.0
    spl_weight: float = 1.0
    c_dist: float = 0.1


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 4
    clip_epsilon: float = 0.2
    kl_beta: float = 0.01
    adv_epsilon: float = 1e-8
    inner_epochs: int = 1
    sample_std: bool = False  # population std by default


@dataclass(frozen=True)
class RolloutGroup:
    episode_id: int
    trajectories: tuple
    rewards: np.ndarray
    advantages: np.ndarray
    snapshot_old: PolicySnapshot


def spl(traj: Trajectory, episode: Episode, field: GeodesicField | None = None) -> float:
    """Success weighted by best-path efficiency: L_geo / max(L_geo, L_traj)."""
    if not traj.success:
        return 0.0
    if field is None:
        field = geodesic_field(episode.world, episode.goal)
    l_geo = field.at(*episode.start.position)
    denom = max(l_geo, traj.path_length)
    if denom <= 0.0:
        return 1.0  # stopped immediately inside the zone
    return l_geo / denom


def reward(
    traj: Trajectory,
    episode: Episode,
    cfg: RewardConfig = RewardConfig(),
    field: GeodesicField | None = None,
) -> float:
    if field is None:
        field = geodesic_field(episode.world, episode.goal)
    d_remain = field.at(*traj.final_pose.position)
    if not np.isfinite(d_remain):
        d_remain = euclid_m(traj.final_pose.position, episode.goal, episode.world.cell_size)
        log.warning(
            "episode %s: final cell %s cut off from goal, using straight-line distance",
            episode.id, traj.final_pose.position,
        )
    base = cfg.c_succ + cfg.spl_weight * spl(traj, episode, field) if traj.success else 0.0
    return base - cfg.c_dist * d_remain


def group_advantages(rewards: np.ndarray, cfg: GrpoConfig = GrpoConfig()) -> np.ndarray:
    """Standardise rewards within the group; zero spread maps to zeros."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size < 2:
        raise GroupTooSmall(f"group of {rewards.size} rollouts cannot be standardised")
    std = rewards.std(ddof=1 if cfg.sample_std else 0)
    return (rewards - rewards.mean()) / (std + cfg.adv_epsilon)


def make_group(
    trajectories,
    episode: Episode,
    snapshot_old: PolicySnapshot,
    reward_cfg: RewardConfig,
    grpo_cfg: GrpoConfig,
    field: GeodesicField | None = None,
) -> RolloutGroup:
    if field is None:
        field = geodesic_field(episode.world, episode.goal)
    rewards = np.array([reward(t, episode, reward_cfg, field) for t in trajectories])
    return RolloutGroup(
        episode_id=episode.id,
        trajectories=tuple(trajectories),
        rewards=rewards,
        advantages=group_advantages(rewards, grpo_cfg),
        snapshot_old=snapshot_old,
    )


def grpo_loss_and_grad(
    params: PolicyParams,
    group: RolloutGroup,
    snapshot_ref: PolicySnapshot,
    cfg: GrpoConfig = GrpoConfig(),
):
    """(loss, flat gradient) of the clipped surrogate with KL penalty.

    Every step's behaviour logits are recomputed under the group's
    snapshot and must match the recorded ones to SNAPSHOT_TOL, else the
    group is stale and SnapshotMismatch is raised.
    """
    if len(group.trajectories) < 2:
        raise GroupTooSmall(f"group of {len(group.trajectories)} rollouts")
    temp = params.cfg.temperature
    old_params = group.snapshot_old.params
    ref_params = snapshot_ref.params
    lo, hi = 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon
    n_groups = len(group.trajectories)
    acc = GradAccumulator(params)
    objective = 0.0
    for adv, traj in zip(group.advantages, group.trajectories):
        scale = 1.0 / (n_groups * len(traj.steps))
        for s in traj.steps:
            recomputed = forward(old_params, featurize(old_params, s.window))
            drift = float(np.max(np.abs(recomputed - s.logits)))
            if drift > SNAPSHOT_TOL:
                raise SnapshotMismatch(
                    f"episode {group.episode_id} step {s.t}: recorded logits drift {drift:g}"
                )
            logits, cache = forward_cached(params, s.window)
            p = softmax(logits / temp)
            p_old = softmax(s.logits / temp)
            q = softmax(forward(ref_params, featurize(ref_params, s.window)) / temp)

            rho = p[s.action] / p_old[s.action]
            clipped = min(max(rho, lo), hi)
            surrogate = min(rho * adv, clipped * adv)

            q_floored = np.maximum(q, PROB_FLOOR)
            mask = p > 0.0
            log_ratio = np.zeros_like(p)
            log_ratio[mask] = np.log(p[mask]) - np.log(q_floored[mask])
            kl = float(np.dot(p, log_ratio))

            objective += scale * (surrogate - cfg.kl_beta * kl)

            dlogits = -cfg.kl_beta * p * (log_ratio - kl) / temp
            if rho * adv <= clipped * adv:  # unclipped branch active
                coef = adv * rho / temp
                dlogits += coef * (-p)
                dlogits[s.action] += coef
            acc.add_step(cache, s.window, dlogits * scale)
    return -objective, -acc.flat()
