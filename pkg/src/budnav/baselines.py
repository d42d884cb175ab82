"""Ablation variants: comparators that each disable one framework part.

Every variant is a pure transform of a base TrainConfig; the training
loop itself stays identical, so any behavioural difference is due to
the supervision construction alone.

    FULL        the unmodified greedy-routed update
    BC          teacher forcing only, no environment interaction
    RECT_ONLY   proficient episodes are skipped (no group optimisation)
    GRPO_ONLY   failed episodes are skipped (no rectification)
    DAGGER      imitation with oracle correction from the error state

Skipped episodes still run the probe and are reported with a zero
applied gradient, keeping env-step accounting comparable across rows.
"""
from __future__ import annotations

from dataclasses import replace
from enum import Enum

from .trainer import TrainConfig


class AblationVariant(str, Enum):
    BC = "bc"
    RECT_ONLY = "rect_only"
    GRPO_ONLY = "grpo_only"
    DAGGER = "dagger"
    FULL = "full"


def variant_config(base: TrainConfig, variant) -> TrainConfig:
    """Return base with the variant applied; FULL is the identity."""
    variant = AblationVariant(variant)
    return replace(base, variant=variant.value)
