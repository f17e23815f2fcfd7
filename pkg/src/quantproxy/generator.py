"""Candidate production: chat-completion endpoint or offline evolution.

Both paths emit only candidates that already parse and reference at least one
layer feature. Invalid endpoint responses are retried up to the configured
limit and then dropped with a logged reason; dropped responses never become
candidates (and therefore never receive a sentinel fitness record).

The offline generator is a pure function of (request, seed) so that every
test and search run works without network access or credentials.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass

import httpx

from . import dsl
from .dpo import Action
from .errors import EndpointError

PROMPT_TOKEN_BUDGET = 2000
INIT_SKELETON_CHANCE = 0.2
MUTATION_KINDS = ("subtree", "jitter", "opswap")

_HINT_FEATURES = {
    "weights": ("w_l2", "w_l1_mean", "w_std", "w_max_abs", "n_params"),
    "activations": ("a_entropy", "a_mean_abs", "a_std", "a_max_abs"),
    "depth": ("depth", "total_layers"),
    "mixed": dsl.FEATURES,
}

_FEATURE_GLOSS = {
    "w_l2": "Frobenius norm of the layer's weight tensor",
    "w_l1_mean": "mean absolute weight",
    "w_std": "standard deviation of the weights",
    "w_max_abs": "largest absolute weight",
    "n_params": "parameter count (weights plus bias)",
    "a_entropy": "entropy of the layer's output activations, in bits",
    "a_mean_abs": "mean absolute output activation",
    "a_std": "standard deviation of output activations",
    "a_max_abs": "largest absolute output activation",
    "depth": "1-based position among parameterized layers",
    "total_layers": "number of parameterized layers",
}

_GRAMMAR_SUMMARY = """\
expression := term (("+"|"-") term)*
term       := power (("*"|"/") power)*
power      := unary ("^" unary)*
unary      := "-" unary | atom
atom       := NUMBER | FEATURE | exp(e) | log(e) | sqrt(e) | abs(e) | neg(e)
            | pow(e, e) | "(" e ")"\
"""


@dataclass(frozen=True)
class ContextEntry:
    candidate_id: str
    expr_text: str
    rho_sens: float
    phi: float
    reasoning_excerpt: str
    birth_generation: int = 0


@dataclass(frozen=True)
class GenerationRequest:
    op: str                            # "init" | "mutation" | "crossover"
    context: tuple[ContextEntry, ...]
    count: int
    seed: int
    action: Action | None = None
    token_budget: int = PROMPT_TOKEN_BUDGET

    def __post_init__(self):
        if self.op == "crossover" and len(self.context) < 2:
            raise ValueError("crossover needs at least two context entries")
        if self.op == "mutation" and len(self.context) < 1:
            raise ValueError("mutation needs at least one context entry")


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model_name: str = "default"
    api_key_env: str = "QUANTPROXY_API_KEY"
    temperature: float = 0.7
    max_tokens: int = 768
    timeout: float = 30.0
    max_retries: int = 3


@dataclass(frozen=True)
class Rejection:
    reason: str


def _feature_catalog() -> str:
    return "\n".join(f"  {name}: {_FEATURE_GLOSS[name]}" for name in dsl.FEATURES)


def _render_context(entries: tuple[ContextEntry, ...], budget: int,
                    header_tokens: int) -> str:
    # Oldest entries drop first when the rendered prompt would exceed budget.
    kept = sorted(entries, key=lambda e: e.birth_generation)
    while True:
        ordered = sorted(kept, key=lambda e: -e.phi)
        lines = [
            f"- expression: {e.expr_text}\n"
            f"  rank correlation with quantization error: {e.rho_sens:.4f}\n"
            f"  fitness: {e.phi:.4f}\n"
            f"  note: {e.reasoning_excerpt[:200]}"
            for e in ordered
        ]
        body = "\n".join(lines)
        if header_tokens + len(body.split()) <= budget or len(kept) <= 1:
            return body
        kept = kept[1:]


def render_prompt(req: GenerationRequest) -> str:
    """Deterministic prompt for the requested operation."""
    hint = req.action.feature_hint if req.action else "mixed"
    header = f"""\
You design per-layer sensitivity scoring formulas for mixed-precision
quantization. A formula maps each layer's statistics to a real score; layers
with higher scores are more sensitive to quantization and receive more bits
under a fixed compression budget.

Prior knowledge: good sensitivity scores are positively correlated with the
per-layer quantization error, so a layer whose quantization damages the
output most should score highest.

Write one formula in this grammar (whitespace-insensitive):
{_GRAMMAR_SUMMARY}

Available per-layer features:
{_feature_catalog()}

Favor features describing: {hint}.

Answer with one short paragraph explaining your reasoning, then exactly one
fenced code block (```) containing a single expression and nothing else.
"""
    if req.op == "init":
        task = ("Task: propose a fresh scoring formula from the feature "
                "vocabulary above.")
        return f"{header}\n{task}\n"
    header_tokens = len(header.split()) + 64
    context_block = _render_context(req.context, req.token_budget, header_tokens)
    if req.op == "mutation":
        task = ("Task: improve the scoring logic of the best formula below. "
                "Adjust the statistics it combines, its constants, or its "
                "operators while keeping what works.\n\n"
                f"Current formulas, best first:\n{context_block}")
    else:
        ordered = sorted(req.context, key=lambda e: -e.phi)
        a, b = ordered[0], ordered[1]
        task = ("Task: fuse complementary components of the two parent "
                "formulas into one stronger formula.\n\n"
                f"Parent A: {a.expr_text}\n  fitness {a.phi:.4f}, "
                f"rank correlation {a.rho_sens:.4f}\n"
                f"Parent B: {b.expr_text}\n  fitness {b.phi:.4f}, "
                f"rank correlation {b.rho_sens:.4f}")
    return f"{header}\n{task}\n"


def parse_llm_response(text: str) -> tuple[str, dsl.Expr] | Rejection:
    """Split a response into (reasoning, parsed expression).

    The last fenced block is the expression source; everything else is the
    reasoning. Returns a Rejection rather than raising.
    """
    parts = text.split("```")
    if len(parts) < 3:
        return Rejection("missing expression block")
    source = parts[-2].strip()
    # Tolerate a language tag on the fence line.
    if "\n" in source:
        first, rest = source.split("\n", 1)
        if first and " " not in first.strip() and not any(
                c in first for c in "()+-*/^0123456789"):
            source = rest.strip()
    if not source:
        return Rejection("empty expression block")
    reasoning = (parts[0] + parts[-1]).strip()
    try:
        expr = dsl.parse(source)
    except Exception as e:
        return Rejection(f"expression rejected: {e}")
    if not dsl.features_used(expr):
        return Rejection("expression references no layer feature")
    return reasoning, expr


class _IdCounter:
    def __init__(self, prefix: str = "cand"):
        self.prefix = prefix
        self.n = 0

    def __call__(self) -> str:
        self.n += 1
        return f"{self.prefix}-{self.n:05d}"


def generate_llm(req: GenerationRequest, cfg: LlmEndpointConfig,
                 next_id=None, birth_generation: int = 0,
                 events: list | None = None,
                 client: httpx.Client | None = None) -> list[dsl.ProxyCandidate]:
    """Request `count` candidates from a chat-completion endpoint.

    Each slot retries invalid responses up to cfg.max_retries before being
    dropped; transport failures count as invalid responses. An entirely
    failed batch returns an empty list so the caller can fall back.
    """
    next_id = next_id or _IdCounter()
    events = events if events is not None else []
    prompt = render_prompt(req)
    temperature = req.action.temperature if req.action else cfg.temperature
    headers = {}
    key = os.environ.get(cfg.api_key_env, "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    payload = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
        "max_tokens": cfg.max_tokens,
    }
    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=cfg.timeout)
    candidates: list[dsl.ProxyCandidate] = []
    parents = tuple(e.candidate_id for e in req.context)
    try:
        for slot in range(req.count):
            for attempt in range(cfg.max_retries + 1):
                try:
                    resp = client.post(f"{cfg.base_url}/chat/completions",
                                       json=payload, headers=headers,
                                       timeout=cfg.timeout)
                    resp.raise_for_status()
                    content = resp.json()["choices"][0]["message"]["content"]
                except Exception as e:
                    events.append({"event": "transport_error", "slot": slot,
                                   "attempt": attempt, "error": str(e)})
                    continue
                parsed = parse_llm_response(content)
                if isinstance(parsed, Rejection):
                    events.append({"event": "retry", "slot": slot,
                                   "attempt": attempt, "reason": parsed.reason})
                    continue
                reasoning, expr = parsed
                candidates.append(dsl.ProxyCandidate(
                    id=next_id(), reasoning=reasoning, expr=expr,
                    expr_text=dsl.print_canonical(expr), origin=req.op,
                    parent_ids=parents, birth_generation=birth_generation))
                break
            else:
                events.append({"event": "dropped", "slot": slot,
                               "attempts": cfg.max_retries + 1})
    finally:
        if own_client:
            client.close()
    return candidates


def _weighted_feature(rng: random.Random, hint: str) -> str:
    pool = _HINT_FEATURES.get(hint, dsl.FEATURES)
    # 75% from the hinted family, 25% from anywhere, so hints bias rather
    # than censor the vocabulary.
    if rng.random() < 0.75:
        return rng.choice(pool)
    return rng.choice(dsl.FEATURES)


def _random_tree(rng: random.Random, budget: int, hint: str) -> dsl.Expr:
    if budget <= 1 or rng.random() < 0.3:
        if rng.random() < 0.8:
            return dsl.Feature(_weighted_feature(rng, hint))
        return dsl.Const(round(rng.uniform(0.1, 4.0), 3))
    if rng.random() < 0.3:
        op = rng.choice(("exp", "log", "sqrt", "abs", "neg"))
        return dsl.Unary(op, _random_tree(rng, budget - 1, hint))
    op = rng.choice(("+", "-", "*", "*", "/", "pow"))
    left = _random_tree(rng, budget - 1, hint)
    right = _random_tree(rng, budget - 1, hint)
    if op == "pow" and isinstance(right, dsl.Feature):
        # keep exponents tame: prefer constant powers
        right = dsl.Const(float(rng.choice((2.0, 0.5, 3.0))))
    return dsl.Binary(op, left, right)


def _ensure_feature(expr: dsl.Expr, rng: random.Random, hint: str) -> dsl.Expr:
    if dsl.features_used(expr):
        return expr
    name = _weighted_feature(rng, hint)
    # Replace the first leaf (preorder) with a feature.
    def rewrite(node: dsl.Expr) -> tuple[dsl.Expr, bool]:
        if isinstance(node, (dsl.Const, dsl.Feature)):
            return dsl.Feature(name), True
        if isinstance(node, dsl.Unary):
            child, done = rewrite(node.arg)
            return dsl.Unary(node.op, child), done
        left, done = rewrite(node.left)
        if done:
            return dsl.Binary(node.op, left, node.right), True
        right, done = rewrite(node.right)
        return dsl.Binary(node.op, node.left, right), done
    rewritten, _ = rewrite(expr)
    return rewritten


def _subtrees(expr: dsl.Expr) -> list[dsl.Expr]:
    out = [expr]
    if isinstance(expr, dsl.Unary):
        out += _subtrees(expr.arg)
    elif isinstance(expr, dsl.Binary):
        out += _subtrees(expr.left) + _subtrees(expr.right)
    return out


def _replace_node(expr: dsl.Expr, target_idx: int, replacement: dsl.Expr,
                  counter: list[int] | None = None) -> dsl.Expr:
    counter = counter if counter is not None else [0]
    idx = counter[0]
    counter[0] += 1
    if idx == target_idx:
        return replacement
    if isinstance(expr, dsl.Unary):
        return dsl.Unary(expr.op, _replace_node(expr.arg, target_idx,
                                                replacement, counter))
    if isinstance(expr, dsl.Binary):
        left = _replace_node(expr.left, target_idx, replacement, counter)
        right = _replace_node(expr.right, target_idx, replacement, counter)
        return dsl.Binary(expr.op, left, right)
    return expr


def _mutate(expr: dsl.Expr, rng: random.Random, hint: str) -> tuple[dsl.Expr, str]:
    kind = rng.choice(MUTATION_KINDS)
    nodes = _subtrees(expr)
    if kind == "jitter":
        const_idx = [i for i, n in enumerate(nodes) if isinstance(n, dsl.Const)]
        if const_idx:
            i = rng.choice(const_idx)
            factor = rng.uniform(0.5, 2.0)
            new = dsl.Const(nodes[i].value * factor)
            return _replace_node(expr, i, new), "jitter"
        kind = "subtree"      # no constant to jitter: fall through
    if kind == "opswap":
        swappable = [i for i, n in enumerate(nodes)
                     if isinstance(n, (dsl.Unary, dsl.Binary))]
        if swappable:
            i = rng.choice(swappable)
            node = nodes[i]
            if isinstance(node, dsl.Unary):
                op = rng.choice([o for o in ("exp", "log", "sqrt", "abs", "neg")
                                 if o != node.op])
                return _replace_node(expr, i, dsl.Unary(op, node.arg)), "opswap"
            op = rng.choice([o for o in ("+", "-", "*", "/")
                             if o != node.op])
            return _replace_node(expr, i,
                                 dsl.Binary(op, node.left, node.right)), "opswap"
        kind = "subtree"      # single leaf: fall through
    i = rng.randrange(len(nodes))
    return _replace_node(expr, i, _random_tree(rng, 3, hint)), "subtree"


def _crossover(a: dsl.Expr, b: dsl.Expr,
               rng: random.Random) -> tuple[dsl.Expr, dsl.Expr]:
    nodes_a, nodes_b = _subtrees(a), _subtrees(b)
    ia = rng.randrange(len(nodes_a))
    ib = rng.randrange(len(nodes_b))
    child_a = _replace_node(a, ia, nodes_b[ib])
    child_b = _replace_node(b, ib, nodes_a[ia])
    return child_a, child_b


def _bounded(expr: dsl.Expr, fallback: dsl.Expr) -> dsl.Expr:
    return expr if dsl.depth(expr) <= dsl.MAX_DEPTH else fallback


def generate_offline(req: GenerationRequest, next_id=None,
                     birth_generation: int = 0) -> list[dsl.ProxyCandidate]:
    """Deterministic evolutionary generator; pure in (request, seed)."""
    next_id = next_id or _IdCounter()
    rng = random.Random(f"offline:{req.seed}:{req.op}")
    hint = req.action.feature_hint if req.action else "mixed"
    parents = tuple(e.candidate_id for e in req.context)
    out: list[dsl.ProxyCandidate] = []

    def emit(expr: dsl.Expr, reasoning: str) -> None:
        expr = _ensure_feature(expr, rng, hint)
        out.append(dsl.ProxyCandidate(
            id=next_id(), reasoning=reasoning, expr=expr,
            expr_text=dsl.print_canonical(expr), origin=req.op,
            parent_ids=parents, birth_generation=birth_generation))

    if req.op == "init":
        from .stats import NORM_ENTROPY_DECAY
        while len(out) < req.count:
            if rng.random() < INIT_SKELETON_CHANCE:
                emit(dsl.parse(NORM_ENTROPY_DECAY),
                     "Seeded combination of weight norm, activation entropy "
                     "and exponential depth decay.")
            else:
                emit(_random_tree(rng, 5, hint),
                     f"Random initial formula biased toward {hint} features.")
        return out

    parsed_parents = [dsl.parse(e.expr_text) for e in req.context]
    if req.op == "mutation":
        while len(out) < req.count:
            base = parsed_parents[rng.randrange(len(parsed_parents))]
            child, kind = _mutate(base, rng, hint)
            child = _bounded(child, base)
            emit(child, f"Mutation ({kind}) of a context formula, "
                        f"biased toward {hint} features.")
        return out

    if req.op == "crossover":
        while len(out) < req.count:
            ia, ib = rng.sample(range(len(parsed_parents)), 2)
            child_a, child_b = _crossover(parsed_parents[ia],
                                          parsed_parents[ib], rng)
            emit(_bounded(child_a, parsed_parents[ia]),
                 "Crossover: subtree of parent B grafted into parent A.")
            if len(out) < req.count:
                emit(_bounded(child_b, parsed_parents[ib]),
                     "Crossover: subtree of parent A grafted into parent B.")
        return out

    raise ValueError(f"unknown generation op {req.op!r}")


def generate(req: GenerationRequest, mode: str,
             cfg: LlmEndpointConfig | None = None, next_id=None,
             birth_generation: int = 0, events: list | None = None,
             client: httpx.Client | None = None) -> list[dsl.ProxyCandidate]:
    """Dispatch to the configured generator, honoring fallback semantics."""
    events = events if events is not None else []
    if req.count <= 0:
        return []
    if mode == "offline":
        return generate_offline(req, next_id, birth_generation)
    if mode not in ("llm", "llm-with-fallback"):
        raise ValueError(f"unknown generator mode {mode!r}")
    if cfg is None:
        raise EndpointError("llm mode requires an endpoint configuration")
    candidates = generate_llm(req, cfg, next_id, birth_generation, events,
                              client=client)
    if candidates:
        return candidates
    if mode == "llm-with-fallback":
        events.append({"event": "fallback", "generator": "offline"})
        return generate_offline(req, next_id, birth_generation)
    raise EndpointError(
        "endpoint produced no valid candidates and no fallback is configured")
