"""End-to-end proxy discovery loop.

Per generation: sample a generation action from the policy, draw a context
window from the library of historically strong candidates, generate and
evaluate new candidates (contract violations score -inf and never abort),
build preference pairs over the merged population, update the policy, refresh
the library, and replace the population top-N with newer-first tie-breaks.
The best finite-fitness candidate can never be evicted by a worse one, so the
per-generation best series is non-decreasing.

Run directories persist everything needed to replay survivor selection:
a config snapshot, one JSON record per candidate per generation, per-
generation policy snapshots, structured events, and the final result. A
PARTIAL marker distinguishes aborted runs from completed ones.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import dpo, dsl, generator
from .errors import DataError
from .fitness import (CandidateEvaluator, EvalSettings, EvaluatedCandidate,
                      SENTINEL)
from .generator import ContextEntry, GenerationRequest, LlmEndpointConfig
from .smallnet import load_dataset, load_model

GENERATOR_MODES = ("offline", "llm", "llm-with-fallback")


@dataclass
class RunConfig:
    model_path: str
    calib_path: str
    eval_path: str
    run_dir: str
    population_size: int = 8
    max_generations: int = 5
    candidates_per_generation: int | None = None    # default: population_size
    target_compression: float = 0.8
    alpha: float = 0.1
    probe_bits: int = 2
    activation_bits: int = 8
    generator_mode: str = "offline"
    endpoint: LlmEndpointConfig | None = None
    seed: int = 0
    context_capacity: int = 16
    max_pairs: int = 16
    dpo_steps: int = 25
    dpo_lam: float = 0.5
    dpo_eta: float = 0.1
    jobs: int = 1
    prompt_token_budget: int = generator.PROMPT_TOKEN_BUDGET

    def __post_init__(self):
        if self.population_size < 2:
            raise DataError("population size must be at least 2")
        if self.max_generations < 1:
            raise DataError("need at least one generation")
        if self.generator_mode not in GENERATOR_MODES:
            raise DataError(f"unknown generator mode {self.generator_mode!r}")
        if self.candidates_per_generation is None:
            self.candidates_per_generation = self.population_size

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        endpoint = doc.pop("endpoint", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise DataError(f"unknown config field(s) {sorted(unknown)}")
        cfg = cls(**doc)
        if endpoint is not None:
            cfg.endpoint = LlmEndpointConfig(**endpoint)
        return cfg


@dataclass
class ContextLibrary:
    """Top-10% (rounded up, minimum one) of every finite-fitness candidate seen."""
    capacity: int = 16
    total_seen: int = 0
    entries: list[EvaluatedCandidate] = field(default_factory=list)

    def target_size(self) -> int:
        return max(1, math.ceil(0.10 * self.total_seen))


def update_context_library(lib: ContextLibrary,
                           newly: list[EvaluatedCandidate]) -> ContextLibrary:
    """Merge, re-rank, truncate to the 10% rule, then apply the capacity cap."""
    merged: dict[str, EvaluatedCandidate] = {}
    for e in lib.entries + [n for n in newly if not n.is_sentinel]:
        merged.setdefault(e.candidate.id, e)     # duplicates keep the first record
    ranked = sorted(merged.values(), key=lambda e: e.sort_key())
    new_lib = ContextLibrary(capacity=lib.capacity,
                             total_seen=lib.total_seen + len(newly))
    new_lib.entries = ranked[:min(new_lib.target_size(), lib.capacity)]
    return new_lib


def select_survivors(pool: list[EvaluatedCandidate],
                     n: int) -> list[EvaluatedCandidate]:
    """Top-n by fitness; ties prefer newer generations, then later ids.

    Sentinels are selected only when fewer than n finite candidates exist.
    """
    if not pool:
        raise DataError("survivor selection needs a non-empty pool")
    ranked = sorted(pool, key=lambda e: e.sort_key())
    finite = [e for e in ranked if not e.is_sentinel]
    sentinels = [e for e in ranked if e.is_sentinel]
    return (finite + sentinels)[:n]


@dataclass
class RunResult:
    best: EvaluatedCandidate
    best_phi_series: list[float]
    final_population: list[EvaluatedCandidate]
    policy: dpo.PolicyParams
    wall_clock: dict[str, float]
    generations_completed: int
    fallback_generations: list[int]

    def to_json(self) -> dict:
        return {
            "best": candidate_record(self.best),
            "best_phi_series": [_phi_json(v) for v in self.best_phi_series],
            "final_population": [e.candidate.id for e in self.final_population],
            "generations_completed": self.generations_completed,
            "fallback_generations": self.fallback_generations,
            "wall_clock": self.wall_clock,
        }


def _phi_json(phi: float):
    return "-inf" if phi == SENTINEL else phi


def candidate_record(e: EvaluatedCandidate) -> dict:
    """Stable-field-order record for run logs and machine output."""
    return {
        "id": e.candidate.id,
        "origin": e.candidate.origin,
        "parents": list(e.candidate.parent_ids),
        "action_id": e.generation_action,
        "birth_generation": e.candidate.birth_generation,
        "expr": e.candidate.expr_text,
        "reasoning": e.candidate.reasoning,
        "rho_sens": e.rho_sens,
        "acc_quant": e.acc_quant,
        "phi": _phi_json(e.phi),
        "assignment": e.assignment.to_json() if e.assignment else None,
        "warnings": list(e.warnings),
        "eval_wall_time": e.eval_wall_time,
    }


class _RunLog:
    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        os.makedirs(run_dir, exist_ok=True)
        os.makedirs(os.path.join(run_dir, "generations"), exist_ok=True)
        os.makedirs(os.path.join(run_dir, "policy"), exist_ok=True)
        self._events_path = os.path.join(run_dir, "events.log")

    def write_config(self, config: RunConfig) -> None:
        with open(os.path.join(self.run_dir, "config.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(config.to_json(), fh, indent=2)
            fh.write("\n")

    def write_generation(self, t: int, records: list[dict]) -> None:
        path = os.path.join(self.run_dir, "generations", f"{t}.log")
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")

    def write_policy(self, t: int, policy: dpo.PolicyParams) -> None:
        path = os.path.join(self.run_dir, "policy", f"{t}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(policy.to_json(), fh)
            fh.write("\n")

    def event(self, generation: int, payload: dict) -> None:
        record = {"generation": generation, **payload}
        with open(self._events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def write_result(self, result: RunResult) -> None:
        with open(os.path.join(self.run_dir, "result.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(result.to_json(), fh, indent=2)
            fh.write("\n")

    def mark_partial(self) -> None:
        with open(os.path.join(self.run_dir, "PARTIAL"), "w",
                  encoding="utf-8") as fh:
            fh.write("run aborted before completing all generations\n")

    def clear_partial(self) -> None:
        path = os.path.join(self.run_dir, "PARTIAL")
        if os.path.exists(path):
            os.remove(path)


def _context_window(lib: ContextLibrary, size: int) -> tuple[ContextEntry, ...]:
    window = []
    for e in lib.entries[:size]:
        window.append(ContextEntry(
            candidate_id=e.candidate.id,
            expr_text=e.candidate.expr_text,
            rho_sens=e.rho_sens,
            phi=e.phi,
            reasoning_excerpt=e.candidate.reasoning[:200],
            birth_generation=e.candidate.birth_generation))
    return tuple(window)


def run(config: RunConfig, client=None) -> RunResult:
    """Execute the full discovery loop; see the module docstring."""
    started = time.perf_counter()
    log = _RunLog(config.run_dir)
    log.mark_partial()
    log.write_config(config)
    try:
        result = _run_inner(config, log, started, client)
    except Exception:
        # PARTIAL marker stays behind so `report` can flag the aborted run.
        raise
    log.clear_partial()
    return result


def _run_inner(config: RunConfig, log: _RunLog, started: float,
               client) -> RunResult:
    t_setup = time.perf_counter()
    model = load_model(config.model_path)
    calib = load_dataset(config.calib_path, model.input_shape)
    eval_data = load_dataset(config.eval_path, model.input_shape)
    evaluator = CandidateEvaluator(
        model, calib, eval_data,
        EvalSettings(target_compression=config.target_compression,
                     alpha=config.alpha, probe_bits=config.probe_bits,
                     activation_bits=config.activation_bits))
    setup_time = time.perf_counter() - t_setup

    policy = dpo.PolicyParams.initial(lam=config.dpo_lam, eta=config.dpo_eta)
    action_rng = random.Random(f"{config.seed}:actions")
    next_id = generator._IdCounter()
    lib = ContextLibrary(capacity=config.context_capacity)
    fallback_generations: list[int] = []
    best_phi_series: list[float] = []
    eval_time = 0.0
    generate_time = 0.0

    def evaluate_all(candidates: list[dsl.ProxyCandidate],
                     action_id: int | None) -> list[EvaluatedCandidate]:
        nonlocal eval_time
        t0 = time.perf_counter()
        if config.jobs > 1 and len(candidates) > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                out = list(pool.map(
                    lambda c: evaluator.evaluate(c, action_id), candidates))
        else:
            out = [evaluator.evaluate(c, action_id) for c in candidates]
        eval_time += time.perf_counter() - t0
        return out

    # Generation 0: initialization only; the policy governs ops from t=1 on.
    events: list[dict] = []
    t0 = time.perf_counter()
    init_req = GenerationRequest(op="init", context=(), count=config.population_size,
                                 seed=_derive_seed(config.seed, 0),
                                 token_budget=config.prompt_token_budget)
    init_candidates = generator.generate(
        init_req, config.generator_mode, config.endpoint, next_id,
        birth_generation=0, events=events, client=client)
    generate_time += time.perf_counter() - t0
    for ev in events:
        log.event(0, ev)
        if ev.get("event") == "fallback":
            fallback_generations.append(0)
    evaluated = evaluate_all(init_candidates, None)
    log.write_generation(0, [candidate_record(e) for e in evaluated])
    lib = update_context_library(lib, evaluated)
    population = select_survivors(evaluated, config.population_size)
    log.event(0, {"event": "survivors",
                  "ids": [e.candidate.id for e in population]})
    log.write_policy(0, policy)
    best_phi_series.append(max(e.phi for e in population))

    for t in range(1, config.max_generations + 1):
        action = dpo.sample_action(policy, action_rng)
        op = action.op
        window_size = action.context_size
        if op == "crossover":
            window_size = max(window_size, 2)
            if len(lib.entries) < 2:
                op = "mutation"     # not enough distinct context yet
        if not lib.entries:
            op = "init"             # every candidate so far violated contract
        window = _context_window(lib, max(window_size, 1))
        if op == "init":
            window = ()
        log.event(t, {"event": "action", "action_id": action.action_id,
                      "op": op, "context_size": len(window),
                      "temperature": action.temperature,
                      "feature_hint": action.feature_hint})

        events = []
        t0 = time.perf_counter()
        req = GenerationRequest(op=op, context=window,
                                count=config.candidates_per_generation,
                                seed=_derive_seed(config.seed, t),
                                action=action,
                                token_budget=config.prompt_token_budget)
        candidates = generator.generate(
            req, config.generator_mode, config.endpoint, next_id,
            birth_generation=t, events=events, client=client)
        generate_time += time.perf_counter() - t0
        for ev in events:
            log.event(t, ev)
            if ev.get("event") == "fallback":
                fallback_generations.append(t)

        newly = evaluate_all(candidates, action.action_id)
        log.write_generation(t, [candidate_record(e) for e in newly])

        pool = population + newly
        if len(pool) >= 2:
            pairs = dpo.build_preference_pairs(pool, config.max_pairs)
        else:
            pairs = []
        trainable = [p for p in pairs if p.trainable]
        if trainable:
            policy = dpo.dpo_update(policy, trainable, config.dpo_steps)
            log.event(t, {"event": "dpo_update", "pairs": len(pairs),
                          "trainable_pairs": len(trainable)})
        else:
            log.event(t, {"event": "dpo_skipped",
                          "reason": "no trainable preference pairs"})
        lib = update_context_library(lib, newly)
        population = select_survivors(pool, config.population_size)
        log.event(t, {"event": "survivors",
                      "ids": [e.candidate.id for e in population]})
        log.write_policy(t, policy)
        best_phi_series.append(max(e.phi for e in population))

    best = min(population, key=lambda e: e.sort_key())
    result = RunResult(
        best=best, best_phi_series=best_phi_series,
        final_population=population, policy=policy,
        wall_clock={"total": time.perf_counter() - started,
                    "setup": setup_time, "generate": generate_time,
                    "evaluate": eval_time},
        generations_completed=config.max_generations,
        fallback_generations=fallback_generations)
    log.write_result(result)
    return result


def _derive_seed(master: int, generation: int) -> int:
    return master * 100003 + generation
