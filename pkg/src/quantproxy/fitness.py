"""Rank correlation, the blended fitness score, and novelty diagnostics.

Fitness of a candidate is alpha * rho_sens + (1 - alpha) * acc_quant, where
rho_sens is the Spearman correlation between the candidate's per-layer scores
and the empirical per-layer quantization errors, and acc_quant is quantized
accuracy under the bits the allocator derives from those scores. Candidates
that violate the scoring/allocation contract receive phi = -inf so they lose
every comparison without stopping a search run.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import dsl
from .allocator import AllocationRequest, allocate, validate_assignment
from .errors import DataError, InfeasibleBudgetError
from .quantsim import (BitAssignment, CalibRanges, DEFAULT_ACTIVATION_BITS,
                       DEFAULT_MENUS, calibrate_activation_ranges,
                       layer_quant_error, quantized_accuracy)
from .smallnet import Dataset, Model, layer_inventory
from .stats import LayerStats, compute_layer_stats

SENTINEL = float("-inf")


def _ranks(x: np.ndarray) -> np.ndarray:
    """Average (fractional) ranks, 1-based."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman's rho: Pearson correlation of average-ranked vectors.

    Degenerate input (either side constant) is defined as 0.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise DataError("spearman: length mismatch")
    if xa.size < 2:
        raise DataError("spearman: need at least two points")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise DataError("spearman: non-finite input")
    rx, ry = _ranks(xa), _ranks(ya)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        return 0.0
    return float(dx @ dy) / denom


def kendall(x, y) -> float:
    """Kendall's tau-b with tie correction, by direct pair enumeration."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise DataError("kendall: length mismatch")
    if xa.size < 2:
        raise DataError("kendall: need at least two points")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise DataError("kendall: non-finite input")
    n = xa.size
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            a = xa[i] - xa[j]
            b = ya[i] - ya[j]
            if a == 0 and b == 0:
                ties_x += 1
                ties_y += 1
            elif a == 0:
                ties_x += 1
            elif b == 0:
                ties_y += 1
            elif (a > 0) == (b > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0.0:
        return 0.0
    return (concordant - discordant) / denom


def _distance_tokens(expr_text: str) -> list[str]:
    """Token stream for novelty distances; parentheses carry no content."""
    canonical = dsl.print_canonical(dsl.parse(expr_text))
    return [t.text for t in dsl._tokenize(canonical) if t.text not in "()"]


def _levenshtein(a: list[str], b: list[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, start=1):
        cur = [i]
        for j, tb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (ta != tb)))
        prev = cur
    return prev[-1]


def novelty(candidate: dsl.ProxyCandidate, population) -> float:
    """Minimum token-level edit distance to any population member.

    Reporting/tie-break diagnostic only; it never enters phi. An empty
    population returns +inf.
    """
    if candidate.expr is None:
        return math.inf
    if not population:
        return math.inf
    mine = _distance_tokens(candidate.expr_text)
    best = math.inf
    for other in population:
        text = other.expr_text if isinstance(other, dsl.ProxyCandidate) else str(other)
        try:
            theirs = _distance_tokens(text)
        except Exception:
            continue
        best = min(best, _levenshtein(mine, theirs))
    return float(best)


@dataclass(frozen=True)
class EvaluatedCandidate:
    candidate: dsl.ProxyCandidate
    rho_sens: float
    acc_quant: float
    phi: float
    assignment: BitAssignment | None
    warnings: tuple[str, ...]
    generation_action: int | None      # policy action id; None for init/builtin
    eval_wall_time: float

    @property
    def is_sentinel(self) -> bool:
        return self.phi == SENTINEL

    def sort_key(self) -> tuple:
        """Descending-phi order with newer-then-higher-seq tie-breaks."""
        return (-self.phi, -self.candidate.birth_generation, -self.candidate.seq)


@dataclass(frozen=True)
class EvalSettings:
    target_compression: float = 0.8
    alpha: float = 0.1
    probe_bits: int = 2
    activation_bits: int = DEFAULT_ACTIVATION_BITS


class CandidateEvaluator:
    """Shared evaluation context: one model, one calibration/eval split.

    The per-layer sensitivity ground truth and layer statistics depend only
    on the model and data, so they are computed once; evaluate() is then pure
    per candidate and safe to call from concurrent workers.
    """

    def __init__(self, model: Model, calib: Dataset, eval_data: Dataset,
                 settings: EvalSettings = EvalSettings(),
                 menus: dict[str, tuple[int, ...]] | None = None):
        if len(calib) == 0 or len(eval_data) == 0:
            raise DataError("evaluator needs non-empty calibration and eval sets")
        self.model = model
        self.calib = calib
        self.eval_data = eval_data
        self.settings = settings
        self.menus = dict(DEFAULT_MENUS) if menus is None else dict(menus)
        self.inventory = layer_inventory(model)
        self.stats: list[LayerStats] = compute_layer_stats(model, calib)
        self.ranges: CalibRanges = calibrate_activation_ranges(model, calib)
        self.sensitivity = [
            layer_quant_error(model, meta.index, settings.probe_bits, calib)
            for meta in self.inventory
        ]

    def score_expr(self, expr: dsl.Expr) -> tuple[list[float], list[bool]]:
        return dsl.evaluate_flagged(expr, self.stats)

    def evaluate(self, candidate: dsl.ProxyCandidate,
                 action_id: int | None = None) -> EvaluatedCandidate:
        start = time.perf_counter()
        warnings: list[str] = []

        def sentinel(reason: str) -> EvaluatedCandidate:
            warnings.append(f"contract: {reason}")
            return EvaluatedCandidate(
                candidate=candidate, rho_sens=0.0, acc_quant=0.0, phi=SENTINEL,
                assignment=None, warnings=tuple(warnings),
                generation_action=action_id,
                eval_wall_time=time.perf_counter() - start)

        if candidate.expr is None:
            return sentinel("expression failed to parse")
        if dsl.depth(candidate.expr) > dsl.MAX_DEPTH:
            return sentinel(f"expression deeper than {dsl.MAX_DEPTH} levels")

        scores, flags = self.score_expr(candidate.expr)
        for i, flagged in enumerate(flags):
            if flagged:
                warnings.append(f"eval: non-finite score zeroed at layer {i + 1}")
        if len(set(scores)) == 1:
            warnings.append("degenerate: constant score vector")
        rho = spearman(scores, self.sensitivity)
        if len(set(self.sensitivity)) == 1:
            warnings.append("degenerate: constant sensitivity vector")

        try:
            assignment = allocate(
                AllocationRequest(scores=tuple(scores),
                                  target_compression=self.settings.target_compression,
                                  menus=self.menus,
                                  activation_bits=self.settings.activation_bits),
                self.inventory)
        except InfeasibleBudgetError as e:
            return sentinel(str(e))
        report = validate_assignment(assignment, self.model,
                                     self.settings.target_compression, self.menus)
        if not report.ok:
            return sentinel("; ".join(report.violations))

        acc = quantized_accuracy(self.model, assignment, self.ranges,
                                 self.eval_data)
        alpha = self.settings.alpha
        phi = alpha * rho + (1.0 - alpha) * acc
        return EvaluatedCandidate(
            candidate=candidate, rho_sens=rho, acc_quant=acc, phi=phi,
            assignment=assignment, warnings=tuple(warnings),
            generation_action=action_id,
            eval_wall_time=time.perf_counter() - start)

    def evaluate_scores(self, scores: list[float],
                        label: str) -> EvaluatedCandidate:
        """Fitness pipeline for an externally supplied score vector."""
        candidate = dsl.ProxyCandidate(
            id=f"scores-{label}", reasoning=f"fixed score vector ({label})",
            expr=None, expr_text=label, origin="builtin")
        start = time.perf_counter()
        rho = spearman(scores, self.sensitivity)
        try:
            assignment = allocate(
                AllocationRequest(scores=tuple(scores),
                                  target_compression=self.settings.target_compression,
                                  menus=self.menus,
                                  activation_bits=self.settings.activation_bits),
                self.inventory)
        except InfeasibleBudgetError:
            return EvaluatedCandidate(
                candidate=candidate, rho_sens=rho, acc_quant=0.0, phi=SENTINEL,
                assignment=None, warnings=("contract: infeasible budget",),
                generation_action=None,
                eval_wall_time=time.perf_counter() - start)
        acc = quantized_accuracy(self.model, assignment, self.ranges,
                                 self.eval_data)
        alpha = self.settings.alpha
        return EvaluatedCandidate(
            candidate=candidate, rho_sens=rho, acc_quant=acc,
            phi=alpha * rho + (1.0 - alpha) * acc, assignment=assignment,
            warnings=(), generation_action=None,
            eval_wall_time=time.perf_counter() - start)


def evaluate_candidate(candidate: dsl.ProxyCandidate, model: Model,
                       calib: Dataset, eval_data: Dataset,
                       target_compression: float = 0.8, alpha: float = 0.1,
                       probe_bits: int = 2) -> EvaluatedCandidate:
    """One-shot wrapper around CandidateEvaluator for single evaluations."""
    evaluator = CandidateEvaluator(
        model, calib, eval_data,
        EvalSettings(target_compression=target_compression, alpha=alpha,
                     probe_bits=probe_bits))
    return evaluator.evaluate(candidate)
