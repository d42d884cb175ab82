"""Train the routed optimizer on a tiny generated suite, next to plain BC.

Every training episode takes exactly one of two update paths: a greedy
probe that succeeds routes the episode into grouped policy optimization,
a failed probe into rectification from its anchor.  The run below is
sized for seconds, not quality; the bundled desk configs are the real
benchmark.

    python3 demos/routed_training.py
"""
from budnav.config import build_train_config, resolved_values
from budnav.trainer import train

OVERRIDES = {
    "suite.name": "demo",
    "suite.seed": 5,
    "suite.n_train_worlds": 3,
    "suite.n_held": 12,
    "suite.width": 9,
    "suite.height": 9,
    "suite.min_episode_length": 5.0,
    "suite.held_per_world": 4,
    "trainer.pretrain_episodes": 300,
    "trainer.train_episodes": 300,
    "trainer.eval_every": 150,
}


def run(variant):
    values = resolved_values({**OVERRIDES, "trainer.variant": variant})
    return train(build_train_config(values))


def main():
    result = run("full")
    print("full variant, held-out metrics per evaluation point:")
    for row in result.csv_rows:
        print(f"  {row}")
    routes = [r.route for r in result.reports]
    env = sum(r.env_steps_used for r in result.reports)
    print(f"routes: {routes.count('grpo')} grpo / {routes.count('rect')} rect "
          f"over {len(routes)} episodes, {env} env steps")

    bc = run("bc")
    final = lambda res: res.evals[-1][1].sr  # noqa: E731
    print(f"final SR: full {final(result):.1f} vs bc {final(bc):.1f} "
          f"(bc uses 0 env steps and never probes)")


if __name__ == "__main__":
    main()
