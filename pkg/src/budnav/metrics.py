"""Navigation metrics and intervention-free evaluation.

Success (SR) is an agent-issued STOP within the goal radius.  SPL
weights success by best-path efficiency; OSR credits passing within the
radius anywhere along the trajectory (by geodesic distance); NE is the
geodesic distance from the final position to the goal; nDTW scores
path-shape fidelity as exp(-DTW / (|R| * threshold)) over Euclidean
dynamic time warping between the visited cells and the reference cells.

Evaluation rolls the greedy policy with all failure triggers disabled;
episodes end only on STOP or the step cap.  Reported SR/SPL/OSR/nDTW are
percentages, NE is in meters.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grpo import spl as spl_metric
from .oracle import GeodesicField, geodesic_field
from .policy import PolicySnapshot
from .rollout import RolloutConfig, Trajectory, run_greedy
from .world import Episode, euclid_m

METRICS_HEADER = "step,n,sr,spl,osr,ne,ndtw,route_grpo_frac,env_steps_total"


@dataclass(frozen=True)
class EpisodeResult:
    episode_id: int
    success: bool
    spl: float  # fractions here; the report scales to percentages
    osr: float
    ne: float
    ndtw: float
    path_length: float
    steps: int


@dataclass(frozen=True)
class MetricsReport:
    n: int
    sr: float
    spl: float
    osr: float
    ne: float
    ndtw: float


@dataclass(frozen=True)
class EvalOutcome:
    report: MetricsReport
    results: tuple
    trajectories: tuple


def navigation_error(traj: Trajectory, episode: Episode, field: GeodesicField | None = None) -> float:
    """Geodesic final-to-goal distance; straight line if cut off."""
    if field is None:
        field = geodesic_field(episode.world, episode.goal)
    d = field.at(*traj.final_pose.position)
    if math.isinf(d):
        return euclid_m(traj.final_pose.position, episode.goal, episode.world.cell_size)
    return d


def oracle_success(traj: Trajectory, episode: Episode, field: GeodesicField | None = None) -> bool:
    """Did the agent ever pass within the goal radius (geodesic)?

    A successful stop counts unconditionally: the goal zone is Euclidean,
    so an agent stopping just across a wall from the goal can succeed
    while its geodesic detour exceeds the radius, and OSR must still
    dominate SR.
    """
    if traj.success:
        return True
    if field is None:
        field = geodesic_field(episode.world, episode.goal)
    return any(field.at(*pos) <= episode.goal_radius for pos in traj.positions())


def dtw_distance(path, reference, cell_size: float = 1.0) -> float:
    """Classic O(n*m) dynamic time warping with Euclidean point costs."""
    n, m = len(path), len(reference)
    acc = np.full((n + 1, m + 1), math.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = euclid_m(path[i - 1], reference[j - 1], cell_size)
            acc[i, j] = cost + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def dedup_cells(positions) -> list:
    out = []
    for pos in positions:
        if not out or out[-1] != pos:
            out.append(pos)
    return out


def ndtw(path, reference, threshold: float = 3.0, cell_size: float = 1.0) -> float:
    """exp(-DTW / (|R| * threshold)); 1.0 iff the paths coincide."""
    return math.exp(-dtw_distance(path, reference, cell_size) / (len(reference) * threshold))


def episode_result(traj: Trajectory, episode: Episode, field: GeodesicField | None = None) -> EpisodeResult:
    if field is None:
        field = geodesic_field(episode.world, episode.goal)
    return EpisodeResult(
        episode_id=episode.id,
        success=traj.success,
        spl=spl_metric(traj, episode, field),
        osr=float(oracle_success(traj, episode, field)),
        ne=navigation_error(traj, episode, field),
        ndtw=ndtw(
            dedup_cells(traj.positions()),
            list(episode.reference_waypoints),
            episode.goal_radius,
            episode.world.cell_size,
        ),
        path_length=traj.path_length,
        steps=len(traj.steps),
    )


def aggregate(results) -> MetricsReport:
    n = len(results)
    if n == 0:
        return MetricsReport(0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return MetricsReport(
        n=n,
        sr=100.0 * sum(r.success for r in results) / n,
        spl=100.0 * sum(r.spl for r in results) / n,
        osr=100.0 * sum(r.osr for r in results) / n,
        ne=sum(r.ne for r in results) / n,
        ndtw=100.0 * sum(r.ndtw for r in results) / n,
    )


def thread_cap() -> int:
    """Rollout parallelism cap from BUDNAV_THREADS (default: machine cores)."""
    raw = os.environ.get("BUDNAV_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return os.cpu_count() or 1


def evaluate(
    snapshot: PolicySnapshot,
    episodes,
    cfg: RolloutConfig = RolloutConfig(),
) -> EvalOutcome:
    """Greedy, trigger-free rollouts over the episode list.

    Episodes are independent, so rollouts may run on a thread pool; the
    outcome is aggregated in episode order and identical for any cap.
    """
    episodes = list(episodes)

    def one(episode: Episode) -> tuple:
        traj = run_greedy(snapshot, episode, cfg, triggers=False)
        return traj, episode_result(traj, episode)

    workers = min(thread_cap(), max(1, len(episodes)))
    if workers > 1 and len(episodes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(one, episodes))
    else:
        pairs = [one(ep) for ep in episodes]
    trajectories = tuple(p[0] for p in pairs)
    results = tuple(p[1] for p in pairs)
    return EvalOutcome(report=aggregate(results), results=results, trajectories=trajectories)


def format_metrics_row(step: int, report: MetricsReport, route_grpo_frac: float, env_steps_total: int) -> str:
    """Fixed formatting so identical runs produce identical CSV bytes."""
    return (
        f"{step},{report.n},{report.sr:.1f},{report.spl:.1f},{report.osr:.1f},"
        f"{report.ne:.2f},{report.ndtw:.1f},{route_grpo_frac:.3f},{env_steps_total}"
    )
