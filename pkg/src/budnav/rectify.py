"""Corrective supervision for failed probes: rollback, then re-plan.

When the greedy probe trips a failure trigger, training does not imitate
from the failure state.  Instead the trajectory is rolled back to its
anchor: the furthest reference waypoint visited in order, at the step it
was first reached.  The steps up to the anchor are kept verbatim as
conditioning context, the oracle plans a fresh completion from the
anchor pose, and the completion is taught with exponentially decaying
weights w_t = gamma^t (w_0 = 1), concentrating credit right after the
rollback point:

    loss = -alpha * sum_t  w_t * log pi(a*_t | prefix, a*_<t)

A ForcedStop probe is already inside the goal zone, so its anchor is the
current pose and the completion is the single STOP action.

The resulting demonstrations stay consistent with the instruction: every
completion continues forward along the reference rather than steering
back to an earlier point, so reference progress never regresses along a
replayed demo.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotAFailure
from .oracle import plan
from .policy import GradAccumulator, PolicyParams, forward_cached, softmax
from .rollout import Trajectory, TriggerKind, WindowBuilder
from .world import Action, Episode, Pose, euclid_m, expand_instruction, observe, step


@dataclass(frozen=True)
class RectConfig:
    decay_gamma: float = 0.95
    alpha: float = 1.0
    raw_furthest: bool = False  # ignore visit order when picking the anchor
    visit_radius_m: float = 0.5


@dataclass(frozen=True)
class RectificationDemo:
    """Retained probe prefix plus an oracle completion from the anchor.

    anchor_step counts the retained steps: replaying that many probe
    actions from the start lands exactly on anchor_pose.
    """

    episode_id: int
    anchor_step: int
    anchor_pose: Pose
    retained_prefix: tuple
    oracle_actions: tuple
    weights: np.ndarray


def decay_weights(n: int, gamma: float) -> np.ndarray:
    return np.power(float(gamma), np.arange(n, dtype=np.float64))


def _ordered_anchor_index(positions, waypoints, visit_radius, cell_size) -> int:
    """Arrival index of the furthest order-respecting waypoint, -1 if none."""
    j = -1
    arrival = -1
    for i, pos in enumerate(positions):
        while j + 1 < len(waypoints) and (
            euclid_m(pos, waypoints[j + 1], cell_size) <= visit_radius
        ):
            j += 1
            arrival = i
    return arrival


def _raw_anchor_index(positions, waypoints, visit_radius, cell_size) -> int:
    """Arrival index of the furthest waypoint visited in any order."""
    for j in range(len(waypoints) - 1, -1, -1):
        for i, pos in enumerate(positions):
            if euclid_m(pos, waypoints[j], cell_size) <= visit_radius:
                return i
    return -1


def find_anchor(probe: Trajectory, episode: Episode, cfg: RectConfig = RectConfig()):
    """(anchor_step, anchor_pose) for a failed probe.

    Revisited waypoints anchor at their first (order-respecting) visit;
    a probe that visited nothing anchors at the start; ForcedStop
    anchors at the current pose.
    """
    if probe.trigger is None:
        raise NotAFailure(f"probe for episode {probe.episode_id} has no trigger")
    if probe.trigger[0] == TriggerKind.FORCED_STOP:
        return len(probe.steps), probe.final_pose
    cell = episode.world.cell_size
    positions = probe.positions()
    locate = _raw_anchor_index if cfg.raw_furthest else _ordered_anchor_index
    arrival = locate(positions, episode.reference_waypoints, cfg.visit_radius_m, cell)
    if arrival < 0:
        return 0, episode.start
    pose_seq = [s.pose_before for s in probe.steps] + [probe.final_pose]
    return arrival, pose_seq[arrival]


def synthesize_demo(
    probe: Trajectory, episode: Episode, cfg: RectConfig = RectConfig()
) -> RectificationDemo:
    """Build the corrective demo: retained prefix + oracle completion."""
    anchor_step, anchor_pose = find_anchor(probe, episode, cfg)
    completion = plan(episode.world, anchor_pose, episode.goal, episode.goal_radius)
    return RectificationDemo(
        episode_id=episode.id,
        anchor_step=anchor_step,
        anchor_pose=anchor_pose,
        retained_prefix=tuple(probe.steps[:anchor_step]),
        oracle_actions=tuple(completion.actions),
        weights=decay_weights(len(completion.actions), cfg.decay_gamma),
    )


def bc_demo(episode: Episode, gamma: float = 1.0) -> RectificationDemo:
    """Teacher-forcing demo of the full reference plan from the start."""
    actions = tuple(expand_instruction(episode.instruction, episode.max_run))
    return RectificationDemo(
        episode_id=episode.id,
        anchor_step=0,
        anchor_pose=episode.start,
        retained_prefix=(),
        oracle_actions=actions,
        weights=decay_weights(len(actions), gamma),
    )


def rect_loss_and_grad(
    params: PolicyParams,
    demo: RectificationDemo,
    episode: Episode,
    cfg: RectConfig = RectConfig(),
):
    """Weighted cross-entropy of the completion, conditioned on the prefix.

    The environment is replayed from the anchor so every completion
    token is scored against the real observation stream.
    """
    pcfg = params.cfg
    temp = pcfg.temperature
    builder = WindowBuilder(episode.instruction, pcfg.history_k, pcfg.patch_cells)
    for s in demo.retained_prefix:
        builder.push(s.observation, s.action)
    pose = demo.anchor_pose
    acc = GradAccumulator(params)
    loss = 0.0
    for w, action in zip(demo.weights, demo.oracle_actions):
        obs = observe(episode.world, pose, pcfg.obs_k).ravel()
        window = builder.window(obs)
        logits, cache = forward_cached(params, window)
        probs = softmax(logits / temp)
        loss += -cfg.alpha * float(w) * float(np.log(probs[action]))
        dlogits = cfg.alpha * float(w) * probs / temp
        dlogits[action] -= cfg.alpha * float(w) / temp
        acc.add_step(cache, window, dlogits)
        builder.push(obs, int(action))
        pose = step(episode.world, pose, Action(action))
    return loss, acc.flat()
