"""Expression language for per-layer sensitivity formulas.

Grammar (EBNF, whitespace-insensitive):

    expr    := term   (("+" | "-") term)*
    term    := power  (("*" | "/") power)*
    power   := unary  ("^" unary)*            # left associative
    unary   := "-" unary | atom
    atom    := NUMBER | FEATURE | FUNC "(" expr ")" | "pow" "(" expr "," expr ")"
             | "(" expr ")"
    FUNC    := "exp" | "log" | "sqrt" | "abs" | "neg"

Precedence: unary minus > "^" > "*","/" > "+","-". A leading minus on a
number literal folds into a negative constant; elsewhere it parses as neg().
Evaluation is total: log/division/sqrt/pow are guarded and any remaining
non-finite score collapses to 0 with a warning flag, so hostile candidate
expressions can never kill a search run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ExprError

# Numeric fields of LayerStats addressable from expressions.
FEATURES = (
    "w_l2", "w_l1_mean", "w_std", "w_max_abs", "n_params",
    "a_entropy", "a_mean_abs", "a_std", "a_max_abs",
    "depth", "total_layers",
)

UNARY_FUNCS = ("exp", "log", "sqrt", "abs", "neg")
MAX_DEPTH = 12
EPS = 1e-12
POW_EXPONENT_LIMIT = 8.0


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Feature:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str                     # "+", "-", "*", "/", "pow"
    left: "Expr"
    right: "Expr"


Expr = Const | Feature | Unary | Binary


@dataclass(frozen=True)
class _Token:
    kind: str                   # "num", "name", "op"
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = seen_exp = False
            while j < n:
                c = text[j]
                if c.isdigit():
                    j += 1
                elif c == "." and not seen_dot and not seen_exp:
                    seen_dot = True
                    j += 1
                elif c in "eE" and not seen_exp and j > i:
                    if j + 1 < n and (text[j + 1].isdigit()
                                      or text[j + 1] in "+-"):
                        seen_exp = True
                        j += 2 if text[j + 1] in "+-" else 1
                    else:
                        break
                else:
                    break
            tokens.append(_Token("num", text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("name", text[i:j], i))
            i = j
            continue
        if ch in "+-*/^(),":
            tokens.append(_Token("op", ch, i))
            i += 1
            continue
        raise ExprError(f"unexpected character {ch!r}", position=i)
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], length: int):
        self.tokens = tokens
        self.i = 0
        self.length = length

    def peek(self) -> _Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise ExprError("unexpected end of expression", position=self.length)
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok is None or tok.text != text:
            pos = tok.pos if tok else self.length
            raise ExprError(f"expected {text!r}", position=pos)
        return self.next()

    def expr(self) -> Expr:
        node = self.term()
        while (tok := self.peek()) and tok.text in "+-":
            self.next()
            node = Binary("+" if tok.text == "+" else "-", node, self.term())
        return node

    def term(self) -> Expr:
        node = self.power()
        while (tok := self.peek()) and tok.text in "*/":
            self.next()
            node = Binary(tok.text, node, self.power())
        return node

    def power(self) -> Expr:
        node = self.unary()
        while (tok := self.peek()) and tok.text == "^":
            self.next()
            node = Binary("pow", node, self.unary())
        return node

    def unary(self) -> Expr:
        tok = self.peek()
        if tok and tok.text == "-":
            self.next()
            inner = self.peek()
            if inner is not None and inner.kind == "num":
                self.next()
                return Const(-float(inner.text))
            return Unary("neg", self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.next()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            nxt = self.peek()
            if nxt and nxt.text == "(":
                return self.call(tok)
            if tok.text in FEATURES:
                return Feature(tok.text)
            raise ExprError(f"unknown identifier {tok.text!r}", position=tok.pos)
        if tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprError(f"unexpected token {tok.text!r}", position=tok.pos)

    def call(self, name: _Token) -> Expr:
        self.expect("(")
        if name.text in UNARY_FUNCS:
            arg = self.expr()
            self.expect(")")
            return Unary(name.text, arg)
        if name.text == "pow":
            left = self.expr()
            self.expect(",")
            right = self.expr()
            self.expect(")")
            return Binary("pow", left, right)
        raise ExprError(f"unknown function {name.text!r}", position=name.pos)


def depth(expr: Expr) -> int:
    if isinstance(expr, (Const, Feature)):
        return 1
    if isinstance(expr, Unary):
        return 1 + depth(expr.arg)
    return 1 + max(depth(expr.left), depth(expr.right))


def features_used(expr: Expr) -> set[str]:
    if isinstance(expr, Feature):
        return {expr.name}
    if isinstance(expr, Const):
        return set()
    if isinstance(expr, Unary):
        return features_used(expr.arg)
    return features_used(expr.left) | features_used(expr.right)


def parse(text: str) -> Expr:
    """Parse an expression; raises ExprError with the failing position."""
    tokens = _tokenize(text)
    if not tokens:
        raise ExprError("empty expression", position=0)
    parser = _Parser(tokens, len(text))
    node = parser.expr()
    trailing = parser.peek()
    if trailing is not None:
        raise ExprError(f"unexpected token {trailing.text!r}",
                        position=trailing.pos)
    if depth(node) > MAX_DEPTH:
        raise ExprError(f"expression deeper than {MAX_DEPTH} levels")
    return node


_OP_SYMBOL = {"+": "+", "-": "-", "*": "*", "/": "/", "pow": "^"}


def print_canonical(expr: Expr) -> str:
    """Fully parenthesized form; parse(print_canonical(e)) == e structurally."""
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Feature):
        return expr.name
    if isinstance(expr, Unary):
        return f"{expr.op}({print_canonical(expr.arg)})"
    return (f"({print_canonical(expr.left)} {_OP_SYMBOL[expr.op]} "
            f"{print_canonical(expr.right)})")


def _eval_node(expr: Expr, values: dict[str, float]) -> float:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Feature):
        return values[expr.name]
    if isinstance(expr, Unary):
        v = _eval_node(expr.arg, values)
        if expr.op == "neg":
            return -v
        if expr.op == "abs":
            return abs(v)
        if expr.op == "sqrt":
            return math.sqrt(abs(v))
        if expr.op == "log":
            return math.log(max(v, EPS))
        # exp: overflow becomes inf here and is zeroed at the top level
        try:
            return math.exp(v)
        except OverflowError:
            return math.inf
    left = _eval_node(expr.left, values)
    right = _eval_node(expr.right, values)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        return left * right
    if expr.op == "/":
        if abs(right) < EPS:
            right = EPS if right >= 0 else -EPS
        return left / right
    # pow with the exponent clamped; non-real results fall out as nan
    e = max(-POW_EXPONENT_LIMIT, min(POW_EXPONENT_LIMIT, right))
    try:
        return math.pow(left, e)
    except (OverflowError, ValueError):
        return math.nan


def evaluate_flagged(expr: Expr, stats: list) -> tuple[list[float], list[bool]]:
    """Per-layer scores plus a warning flag where a guard zeroed the result."""
    if not stats:
        raise ExprError("evaluate needs at least one layer of statistics")
    scores: list[float] = []
    warned: list[bool] = []
    for s in stats:
        values = {name: float(getattr(s, name)) for name in FEATURES}
        try:
            v = _eval_node(expr, values)
        except (OverflowError, ValueError):
            v = math.nan
        if not math.isfinite(v):
            scores.append(0.0)
            warned.append(True)
        else:
            scores.append(float(v))
            warned.append(False)
    return scores, warned


def evaluate(expr: Expr, stats: list) -> list[float]:
    """Per-layer scores for `expr`; guards make this total."""
    return evaluate_flagged(expr, stats)[0]


@dataclass(frozen=True)
class ProxyCandidate:
    """A reasoning/expression pair with provenance.

    `expr` is None only when the raw source failed to parse; such candidates
    evaluate to the contract-violation sentinel instead of aborting a run.
    """
    id: str
    reasoning: str
    expr: Expr | None
    expr_text: str              # canonical when parsed, raw source otherwise
    origin: str                 # "init" | "mutation" | "crossover" | "builtin"
    parent_ids: tuple[str, ...] = ()
    birth_generation: int = 0

    @property
    def seq(self) -> int:
        """Numeric suffix of the id, for deterministic tie-breaking."""
        digits = "".join(ch for ch in self.id if ch.isdigit())
        return int(digits) if digits else 0


def make_candidate(id: str, reasoning: str, expr: Expr, origin: str,
                   parent_ids: tuple[str, ...] = (),
                   birth_generation: int = 0) -> ProxyCandidate:
    return ProxyCandidate(id=id, reasoning=reasoning, expr=expr,
                          expr_text=print_canonical(expr), origin=origin,
                          parent_ids=parent_ids,
                          birth_generation=birth_generation)
