"""Reference proxies every discovery run should beat.

Bundles the built-in formula, the OMPQ-style orthogonality scores, two
single-feature proxies, and seeded random scores through the same fitness
pipeline, so one call (or one CLI command) gives a comparison table.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import dsl
from .fitness import CandidateEvaluator, EvaluatedCandidate
from .stats import NORM_ENTROPY_DECAY, builtin_ompq

BASELINE_NAMES = ("norm_entropy_decay", "ompq", "w_l2", "depth", "random")


@dataclass(frozen=True)
class BaselineRow:
    name: str
    result: EvaluatedCandidate


def run_baselines(evaluator: CandidateEvaluator,
                  seed: int = 0) -> list[BaselineRow]:
    rows: list[BaselineRow] = []
    for name, text in (("norm_entropy_decay", NORM_ENTROPY_DECAY),
                       ("w_l2", "w_l2"), ("depth", "depth")):
        candidate = dsl.make_candidate(f"baseline-{name}", f"{name} baseline",
                                       dsl.parse(text), "builtin")
        rows.append(BaselineRow(name=name, result=evaluator.evaluate(candidate)))
    ompq_scores = builtin_ompq(evaluator.model, evaluator.calib)
    rows.append(BaselineRow(name="ompq",
                            result=evaluator.evaluate_scores(ompq_scores, "ompq")))
    rng = random.Random(f"baseline-random:{seed}")
    random_scores = [rng.random() for _ in evaluator.inventory]
    rows.append(BaselineRow(
        name="random", result=evaluator.evaluate_scores(random_scores, "random")))
    order = {name: i for i, name in enumerate(BASELINE_NAMES)}
    rows.sort(key=lambda r: order[r.name])
    return rows
