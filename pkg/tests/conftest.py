"""Shared fixtures: small deterministic worlds, episodes, and policies."""
import numpy as np
import pytest

from budnav.policy import PolicyConfig, init_params, snapshot
from budnav.world import GridWorld, Pose, generate_episode, generate_world


def open_world(width=8, height=8, cell_size=1.0):
    """Obstacle-free world, handy for closed-form path checks."""
    return GridWorld(width, height, frozenset(), cell_size)


def corridor_world(length=10):
    """A 1-cell-tall corridor of the given length."""
    return GridWorld(length, 1, frozenset(), 1.0)


def walled_world():
    """5x5 with a wall through the middle column except one gap:

        .....
        ..#..
        ..#..
        ..#..
        .....
    """
    blocked = frozenset({(2, 1), (2, 2), (2, 3)})
    return GridWorld(5, 5, blocked, 1.0)


@pytest.fixture(scope="session")
def small_worlds():
    """A deterministic batch of connected random worlds."""
    return [generate_world(seed=s, width=8, height=8, density=0.15) for s in range(10)]


@pytest.fixture(scope="session")
def sample_episode():
    world = generate_world(seed=3, width=10, height=10, density=0.15)
    return generate_episode(world, seed=7)


@pytest.fixture(scope="session")
def tiny_policy():
    """Small but full-featured policy for gradient tests."""
    cfg = PolicyConfig(d_e=4, d_o=4, d_a=3, d_h=8, history_k=3)
    return init_params(cfg, 0)


@pytest.fixture(scope="session")
def default_policy():
    return init_params(PolicyConfig(), 0)


def rand_window(params, rng, n_tokens=3, n_hist=None):
    """Random but well-formed history window for the given policy."""
    from budnav.policy import HistoryWindow, NO_ACTION

    cfg = params.cfg
    k = cfg.history_k if n_hist is None else n_hist
    instruction = tuple(int(t) for t in rng.integers(0, cfg.vocab, size=n_tokens))
    patches = tuple(rng.uniform(0, 1, size=cfg.obs_k * cfg.obs_k) for _ in range(k))
    actions = tuple(
        int(a) for a in rng.integers(0, 5, size=k)
    )  # 4 = NO_ACTION padding value
    return HistoryWindow(instruction=instruction, patches=patches, prev_actions=actions)
