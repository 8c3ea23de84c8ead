"""Few-shot example sampling for training mixtures and evaluation prompts.

Shot counts follow one of two mixture policies: `balanced` draws the count
uniformly from {0..5}; `unbalanced` is zero-shot half the time and otherwise
uniform over {1..5}. Examples themselves are always sampled uniformly without
replacement from the held-out example pool, never including the target
segment. All draws are deterministic given (seed, segment id), so adding or
removing segments does not perturb other segments' draws.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from mtpipe.corpus import ParallelSegment
from mtpipe.util import derive_rng


class MixtureVariant(Enum):
    BALANCED = "balanced"
    UNBALANCED = "unbalanced"


class SamplingError(ValueError):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class MixturePolicy:
    variant: MixtureVariant = MixtureVariant.BALANCED
    max_shots: int = 5

    def __post_init__(self) -> None:
        if self.max_shots < 1:
            raise SamplingError("invalid_policy", f"max_shots must be >= 1, got {self.max_shots}")

    def draw_count(self, rng: random.Random) -> int:
        if self.variant is MixtureVariant.BALANCED:
            return rng.randrange(self.max_shots + 1)
        if rng.random() < 0.5:
            return 0
        return 1 + rng.randrange(self.max_shots)


@dataclass(frozen=True)
class ShotDraw:
    n_shots: int
    examples: tuple[ParallelSegment, ...]

    def __post_init__(self) -> None:
        if self.n_shots != len(self.examples):
            raise SamplingError(
                "inconsistent_draw",
                f"n_shots={self.n_shots} but {len(self.examples)} examples",
            )
        ids = [e.id for e in self.examples]
        if len(set(ids)) != len(ids):
            raise SamplingError("inconsistent_draw", f"duplicate example ids in draw: {ids}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.examples)


def rng_for(seed: int, segment_id: str, salt: str = "") -> random.Random:
    """Deterministic per-segment RNG derived from (seed, salt, segment_id)."""
    return derive_rng(seed, salt, segment_id)


def _sample_excluding(
    pool: Sequence[ParallelSegment],
    target_id: str,
    n: int,
    minimum: int,
    rng: random.Random,
) -> tuple[ParallelSegment, ...]:
    candidates = [seg for seg in pool if seg.id != target_id]
    if len(candidates) < minimum:
        raise SamplingError(
            "insufficient_examples",
            f"need {minimum} examples excluding target {target_id!r}, "
            f"pool has {len(candidates)}",
        )
    return tuple(rng.sample(candidates, n))


def draw_training_shots(
    policy: MixturePolicy,
    pool: Sequence[ParallelSegment],
    target_id: str,
    rng: random.Random,
) -> ShotDraw:
    """Draw a policy-distributed shot count, then that many distinct examples.

    The pool (minus the target) must be able to cover the policy maximum, so a
    small pool fails up front rather than skewing the count distribution.
    """
    n = policy.draw_count(rng)
    examples = _sample_excluding(pool, target_id, n, policy.max_shots, rng)
    return ShotDraw(n, examples)


def draw_eval_shots(
    pool: Sequence[ParallelSegment],
    target_id: str,
    k: int = 5,
    rng: random.Random | None = None,
) -> ShotDraw:
    """Draw exactly `k` distinct examples, excluding the target segment."""
    if rng is None:
        raise SamplingError("missing_rng", "draw_eval_shots requires an explicit rng")
    examples = _sample_excluding(pool, target_id, k, k, rng)
    return ShotDraw(k, examples)
