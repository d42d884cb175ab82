"""Rollout loop, failure triggers at exact thresholds, traces, sampling."""
import numpy as np
import pytest

from budnav.errors import TraceError
from budnav.oracle import plan
from budnav.policy import NO_ACTION, PolicyConfig, init_params, snapshot
from budnav.rollout import (
    RolloutConfig,
    RolloutState,
    TriggerKind,
    WindowBuilder,
    _rollout,
    check_triggers,
    is_success,
    offtrack_exceeded,
    parse_trace,
    rollout_stream,
    run_greedy,
    run_sampled,
    sample_action,
    serialize_trace,
    verify_trace,
)
from budnav.world import (
    Action,
    Episode,
    Pose,
    compile_instruction,
    dedup_positions,
    generate_episode,
    generate_world,
)

from conftest import corridor_world


def corridor_episode(length=12, goal=(8, 0), radius=3.0, start=Pose(0, 0, 1)):
    w = corridor_world(length)
    p = plan(w, start, goal, radius)
    return Episode(
        id=1,
        world=w,
        start=start,
        goal=goal,
        reference_path=tuple(p.poses),
        reference_waypoints=dedup_positions(p.poses),
        instruction=compile_instruction(p.actions),
        goal_radius=radius,
    )


def scripted(actions):
    """logits_fn that plays a fixed action sequence."""
    seq = list(actions)

    def fn(window):
        a = seq.pop(0)
        logits = np.full(4, -100.0)
        logits[int(a)] = 100.0
        return logits

    return fn


def run_script(episode, actions, cfg=RolloutConfig(), triggers=True):
    return _rollout(
        scripted(list(actions) + [Action.STOP] * 500),
        episode,
        cfg,
        obs_k=5,
        history_k=3,
        mode="greedy",
        triggers=triggers,
    )


F, L, R, S = Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT, Action.STOP


# ------------------------------------------------------ threshold boundaries

def test_offtrack_thresholds_are_strict():
    cfg = RolloutConfig()
    assert not offtrack_exceeded(3.0, 0.0, cfg)
    assert not offtrack_exceeded(0.0, 120.0, cfg)
    assert not offtrack_exceeded(3.0, 120.0, cfg)
    assert offtrack_exceeded(3.0 + 1e-9, 0.0, cfg)
    assert offtrack_exceeded(0.0, 120.0 + 1e-9, cfg)


def test_premature_stop_threshold_is_strict():
    # STOP at exactly 3.0 m is a success, just past it a trigger.
    ep = corridor_episode(goal=(3, 0))  # start 3.0 m from the goal
    traj = run_script(ep, [S])
    assert traj.success and traj.trigger is None

    ep = corridor_episode(goal=(8, 0))
    traj = run_script(ep, [F, S])  # stop at (1,0), 7 m out
    assert traj.trigger == (TriggerKind.PREMATURE_STOP, 1)
    assert not traj.success


def test_offtrack_fires_past_3m_deviation():
    ep = corridor_episode(length=12, goal=(8, 0))
    # Reference stops at (5,0); deviation first exceeds 3.0 at (9,0).
    traj = run_script(ep, [F] * 10)
    assert traj.trigger == (TriggerKind.OFF_TRACK, 8)
    assert traj.final_pose.position == (9, 0)


def test_offtrack_fires_past_120_deg():
    ep = corridor_episode()
    # One left turn: 90 degrees off target, allowed.  A second: 180.
    traj = run_script(ep, [L, L, F, F])
    assert traj.trigger == (TriggerKind.OFF_TRACK, 1)


def test_progress_stall_fires_at_limit():
    ep = corridor_episode(length=45, goal=(40, 0))
    spin = [L, R] * 40  # heading error oscillates 90/0, no progress
    traj = run_script(ep, spin)
    assert traj.trigger == (TriggerKind.PROGRESS_STALL, 59)
    assert len(traj.steps) == 60


def test_stall_counter_resets_on_progress():
    ep = corridor_episode(length=45, goal=(40, 0))
    # 30 idle steps, one forward (progress), then idle again: the stall
    # clock restarts, firing 60 steps after the progress step.
    actions = [L, R] * 15 + [F] + [L, R] * 40
    traj = run_script(ep, actions)
    assert traj.trigger == (TriggerKind.PROGRESS_STALL, 30 + 60)


def test_forced_stop_after_loitering_in_zone():
    ep = corridor_episode()
    actions = [F] * 5 + [L, R] * 20  # enter the zone, then dither
    traj = run_script(ep, actions)
    assert traj.trigger == (TriggerKind.FORCED_STOP, 14)
    # Grace ran out on the 11th consecutive in-zone step.
    assert len(traj.steps) == 15


def test_success_short_circuits_all_triggers():
    ep = corridor_episode()
    state = RolloutState(
        pose=Pose(5, 0, 1), t=99, steps_since_progress=999, stopped=True,
        grace_used=999, progress=0,
    )
    assert check_triggers(state, ep, RolloutConfig()) is None


def test_trigger_order_offtrack_before_premature_stop():
    ep = corridor_episode(length=20, goal=(8, 0))
    # Stopped far from the goal AND far off the reference (which ends at
    # (5,0)): both OffTrack and PrematureStop hold; OffTrack wins.
    state = RolloutState(
        pose=Pose(15, 0, 1), t=5, steps_since_progress=0, stopped=True,
        grace_used=0, progress=0,
    )
    assert check_triggers(state, ep, RolloutConfig()) == TriggerKind.OFF_TRACK


def test_trigger_order_stall_before_premature_stop():
    ep = corridor_episode(length=12, goal=(8, 0))
    state = RolloutState(
        pose=Pose(1, 0, 1), t=70, steps_since_progress=60, stopped=True,
        grace_used=0, progress=1,
    )
    assert check_triggers(state, ep, RolloutConfig()) == TriggerKind.PROGRESS_STALL


def test_step_cap_forced_stop_with_triggers():
    ep = corridor_episode()
    cap = RolloutConfig().max_steps(ep)
    # In-zone loitering is impossible here: hug the start instead.
    traj = run_script(ep, [L, R] * cap)
    # Whatever fires first, the trajectory must be finite and failed.
    assert traj.trigger is not None
    assert not traj.success


def test_step_cap_without_triggers_is_plain_failure():
    ep = corridor_episode()
    cap = RolloutConfig().max_steps(ep)
    traj = run_script(ep, [L, R] * cap, triggers=False)
    assert len(traj.steps) == cap
    assert traj.trigger is None
    assert traj.stopped and not traj.success


def test_eval_mode_ignores_offtrack():
    ep = corridor_episode(length=12, goal=(8, 0))
    # Wander past the reference end, then return and stop in the zone.
    actions = [F] * 10 + [L, L] + [F] * 3 + [S]
    traj = run_script(ep, actions, triggers=False)
    assert traj.trigger is None
    assert traj.success  # stopped at (7,0), 1 m from the goal


def test_path_length_counts_executed_moves_only():
    ep = corridor_episode()
    traj = run_script(ep, [F, F, L, R, F, S])
    assert traj.path_length == 3.0


# --------------------------------------------------------------- sampling

def test_sample_action_inverse_cdf_edges():
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    assert sample_action(probs, 0.0) == 0
    assert sample_action(probs, 0.05) == 0
    assert sample_action(probs, 0.1) == 1  # boundary belongs to the right
    assert sample_action(probs, 0.599) == 2
    assert sample_action(probs, 0.999) == 3
    assert sample_action(probs, 1.0 - 1e-16) == 3


def test_sample_action_is_exactly_unbiased_on_a_grid():
    # Feeding u from a uniform grid removes all sampling noise: counts
    # must match the probabilities to within one grid cell per boundary.
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    n = 20000
    counts = np.zeros(4, dtype=int)
    for i in range(n):
        counts[sample_action(probs, (i + 0.5) / n)] += 1
    assert np.array_equal(counts, (probs * n).astype(int))


def test_sample_action_frequencies_match_probs():
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    rng = np.random.default_rng(6)
    n = 5000
    counts = np.zeros(4, dtype=int)
    for _ in range(n):
        counts[sample_action(probs, rng.random())] += 1
    expected = probs * n
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 16.27  # 99.9% quantile of chi-square with 3 dof


# ----------------------------------------------------------------- window

def test_window_left_pads_and_shifts():
    b = WindowBuilder(instruction=(1, 2), history_k=3, patch_cells=4)
    o0, o1 = np.ones(4), np.full(4, 2.0)
    w0 = b.window(o0)
    assert w0.prev_actions == (NO_ACTION, NO_ACTION, NO_ACTION)
    assert np.array_equal(w0.patches[0], np.zeros(4))
    assert np.array_equal(w0.patches[2], o0)
    b.push(o0, 2)
    w1 = b.window(o1)
    assert w1.prev_actions == (NO_ACTION, NO_ACTION, 2)
    assert np.array_equal(w1.patches[1], o0)
    assert np.array_equal(w1.patches[2], o1)


def test_window_history_is_bounded():
    b = WindowBuilder(instruction=(0,), history_k=2, patch_cells=1)
    for i in range(10):
        b.push(np.array([float(i)]), i % 4)
    w = b.window(np.array([99.0]))
    assert len(w.patches) == 2
    assert w.patches[0][0] == 9.0  # only the newest survives


# ----------------------------------------------- snapshot-driven rollouts

def traj_fingerprint(traj):
    return (
        tuple(s.action for s in traj.steps),
        traj.final_pose,
        traj.success,
        traj.trigger,
        traj.path_length,
    )


def test_greedy_rollout_deterministic(sample_episode, default_policy):
    snap = snapshot(default_policy, "t")
    a = run_greedy(snap, sample_episode)
    b = run_greedy(snap, sample_episode)
    assert traj_fingerprint(a) == traj_fingerprint(b)
    assert all(np.array_equal(x.logits, y.logits) for x, y in zip(a.steps, b.steps))


def test_sampled_rollout_streams(sample_episode, default_policy):
    snap = snapshot(default_policy, "t")
    s1 = rollout_stream(0, sample_episode.id, 1)
    a = run_sampled(snap, sample_episode, 0.4, s1)
    b = run_sampled(snap, sample_episode, 0.4, s1)
    assert traj_fingerprint(a) == traj_fingerprint(b)
    # Across a handful of stream indices the draws must not all agree.
    seqs = {
        tuple(
            s.action
            for s in run_sampled(
                snap, sample_episode, 0.4, rollout_stream(0, sample_episode.id, i)
            ).steps
        )
        for i in range(1, 9)
    }
    assert len(seqs) > 1


def test_rollout_records_prestep_pose_chain(sample_episode, default_policy):
    snap = snapshot(default_policy, "t")
    traj = run_greedy(snap, sample_episode)
    from budnav.world import step as world_step

    pose = sample_episode.start
    for s in traj.steps:
        assert s.pose_before == pose
        pose = world_step(sample_episode.world, pose, Action(s.action))
    assert pose == traj.final_pose


def test_is_success_requires_agent_stop():
    ep = corridor_episode()
    good = run_script(ep, [F] * 5 + [S])
    assert good.success and is_success(good, ep)
    capped = run_script(ep, [L, R] * 500, triggers=False)
    assert not is_success(capped, ep)


# ------------------------------------------------------------------ traces

def test_trace_round_trip_bytes(sample_episode, default_policy):
    snap = snapshot(default_policy, "t")
    traj = run_greedy(snap, sample_episode)
    text = serialize_trace(traj, sample_episode)
    doc = parse_trace(text)
    assert doc.episode == sample_episode
    assert len(doc.steps) == len(traj.steps)
    assert verify_trace(doc) == len(traj.steps)
    # Round trip through the parsed document is byte-identical.
    from budnav.rollout import Trajectory

    re_traj = Trajectory(
        episode_id=doc.episode.id, mode=doc.mode, rng_stream_id=doc.rng_stream_id,
        steps=traj.steps, final_pose=doc.final_pose, stopped=doc.stopped,
        success=doc.success, trigger=traj.trigger, path_length=doc.path_length,
    )
    assert serialize_trace(re_traj, doc.episode) == text


def test_trace_detects_edited_action():
    ep = corridor_episode()
    traj = run_script(ep, [F, F, L, F, S])
    text = serialize_trace(traj, ep)
    lines = text.splitlines()
    idx = next(i for i, ln in enumerate(lines) if ln.startswith("step 1 "))
    parts = lines[idx].split()
    parts[5] = str(Action.TURN_RIGHT.value)  # was FORWARD
    lines[idx] = " ".join(parts)
    doc = parse_trace("\n".join(lines) + "\n")
    with pytest.raises(TraceError, match="step 2"):
        verify_trace(doc)


def test_trace_rejects_garbage():
    with pytest.raises(TraceError):
        parse_trace("not a trace\n")
