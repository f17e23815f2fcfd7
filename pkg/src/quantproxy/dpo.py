"""Preference learning over discrete generation actions.

The scheduler cannot fine-tune a hosted language model, so the policy it
optimizes is a categorical distribution over generation "actions": operation
type, context window size, sampling temperature, and a feature-family hint.
Preference pairs come from fitness rankings; the objective is the standard
Bradley-Terry log-sigmoid preference loss against a frozen reference copy of
the policy, with lam as the inverse temperature. At theta == theta_ref the
loss is exactly ln 2.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .fitness import EvaluatedCandidate

OPS = ("mutation", "crossover")
CONTEXT_SIZES = (1, 2, 4)
TEMPERATURE_BUCKETS = (("low", 0.2), ("mid", 0.7), ("high", 1.1))
FEATURE_HINTS = ("weights", "activations", "depth", "mixed")


@dataclass(frozen=True)
class Action:
    action_id: int
    op: str
    context_size: int
    temperature_name: str
    temperature: float
    feature_hint: str


def _enumerate_actions() -> tuple[Action, ...]:
    actions = []
    i = 0
    for op in OPS:
        for k in CONTEXT_SIZES:
            for temp_name, temp in TEMPERATURE_BUCKETS:
                for hint in FEATURE_HINTS:
                    actions.append(Action(action_id=i, op=op, context_size=k,
                                          temperature_name=temp_name,
                                          temperature=temp, feature_hint=hint))
                    i += 1
    return tuple(actions)


ACTIONS: tuple[Action, ...] = _enumerate_actions()
N_ACTIONS = len(ACTIONS)            # 2 ops * 3 sizes * 3 temps * 4 hints = 72


@dataclass
class PolicyParams:
    theta: np.ndarray
    theta_ref: np.ndarray           # frozen at init, never updated
    lam: float = 0.5
    eta: float = 0.1

    @classmethod
    def initial(cls, n_actions: int = N_ACTIONS, lam: float = 0.5,
                eta: float = 0.1) -> "PolicyParams":
        return cls(theta=np.zeros(n_actions, dtype=np.float64),
                   theta_ref=np.zeros(n_actions, dtype=np.float64),
                   lam=lam, eta=eta)

    def probabilities(self) -> np.ndarray:
        return _softmax(self.theta)

    def to_json(self) -> dict:
        return {"theta": self.theta.tolist(), "theta_ref": self.theta_ref.tolist(),
                "lam": self.lam, "eta": self.eta}

    @classmethod
    def from_json(cls, doc: dict) -> "PolicyParams":
        return cls(theta=np.asarray(doc["theta"], dtype=np.float64),
                   theta_ref=np.asarray(doc["theta_ref"], dtype=np.float64),
                   lam=float(doc["lam"]), eta=float(doc["eta"]))


@dataclass(frozen=True)
class PreferencePair:
    preferred_id: str
    preferred_action: int | None
    dispreferred_id: str
    dispreferred_action: int | None
    phi_gap: float

    @property
    def trainable(self) -> bool:
        return self.preferred_action is not None and \
            self.dispreferred_action is not None


def _softmax(theta: np.ndarray) -> np.ndarray:
    z = theta - np.max(theta)
    e = np.exp(z)
    return e / e.sum()


def _log_softmax(theta: np.ndarray) -> np.ndarray:
    z = theta - np.max(theta)
    return z - math.log(float(np.exp(z).sum()))


def build_preference_pairs(evaluated: list[EvaluatedCandidate],
                           max_pairs: int) -> list[PreferencePair]:
    """Adjacent-rank pairs plus a best-vs-worst anchor, strict phi order.

    Equal-phi neighbours are skipped, so sentinel candidates can only ever
    appear on the dispreferred side. Fewer than two distinct phi values gives
    an empty list (the policy update is skipped that generation).
    """
    if len(evaluated) < 2:
        raise DataError("preference pairs need at least two candidates")
    ranked = sorted(evaluated, key=lambda e: e.sort_key())
    pairs: list[PreferencePair] = []

    def add(hi: EvaluatedCandidate, lo: EvaluatedCandidate) -> None:
        if hi.phi <= lo.phi:
            return
        pairs.append(PreferencePair(
            preferred_id=hi.candidate.id, preferred_action=hi.generation_action,
            dispreferred_id=lo.candidate.id,
            dispreferred_action=lo.generation_action,
            phi_gap=hi.phi - lo.phi))

    for a, b in zip(ranked, ranked[1:]):
        add(a, b)
    if len(ranked) > 2:
        add(ranked[0], ranked[-1])
    # Drop duplicates (the anchor can coincide with an adjacent pair when
    # middle ranks were all skipped), then cap.
    seen = set()
    unique = []
    for p in pairs:
        key = (p.preferred_id, p.dispreferred_id)
        if key not in seen:
            seen.add(key)
            unique.append(p)
    return unique[:max_pairs]


def _margins(params: PolicyParams, pairs: list[PreferencePair]) -> np.ndarray:
    logp = _log_softmax(params.theta)
    logp_ref = _log_softmax(params.theta_ref)
    out = np.empty(len(pairs), dtype=np.float64)
    for i, pair in enumerate(pairs):
        if not pair.trainable:
            raise DataError("policy loss needs action ids on both sides of a pair")
        a_pos, a_neg = pair.preferred_action, pair.dispreferred_action
        out[i] = params.lam * ((logp[a_pos] - logp_ref[a_pos])
                               - (logp[a_neg] - logp_ref[a_neg]))
    return out


def dpo_loss(params: PolicyParams, pairs: list[PreferencePair]) -> float:
    """Mean -log sigmoid of the lam-scaled policy/reference margin."""
    if not pairs:
        raise DataError("dpo_loss needs at least one pair")
    m = _margins(params, pairs)
    # -log sigmoid(m) = log(1 + exp(-m)), computed stably
    return float(np.mean(np.logaddexp(0.0, -m)))


def dpo_grad(params: PolicyParams, pairs: list[PreferencePair]) -> np.ndarray:
    """Analytic gradient of dpo_loss w.r.t. theta.

    d log p(a)/d theta_j = [a == j] - softmax(theta)_j; the softmax terms
    cancel between the preferred and dispreferred sides, leaving indicator
    differences weighted by lam * (1 - sigmoid(margin)).
    """
    if not pairs:
        raise DataError("dpo_grad needs at least one pair")
    m = _margins(params, pairs)
    weight = -params.lam * (1.0 - 1.0 / (1.0 + np.exp(-m))) / len(pairs)
    grad = np.zeros_like(params.theta)
    for w, pair in zip(weight, pairs):
        grad[pair.preferred_action] += w
        grad[pair.dispreferred_action] -= w
    return grad


def preference_margin(params: PolicyParams, pairs: list[PreferencePair]) -> float:
    """Mean log p(a+) - log p(a-) under the current policy."""
    logp = _log_softmax(params.theta)
    return float(np.mean([logp[p.preferred_action] - logp[p.dispreferred_action]
                          for p in pairs]))


def dpo_update(params: PolicyParams, pairs: list[PreferencePair],
               steps: int) -> PolicyParams:
    """Plain gradient descent with per-step backtracking.

    Each step halves the step size (up to 5 times) until the loss does not
    increase; a step that still overshoots is skipped. theta_ref is shared
    untouched. Empty pairs return the input unchanged.
    """
    if steps < 1:
        raise DataError("dpo_update needs steps >= 1")
    if not pairs:
        return params
    theta = params.theta.copy()
    current = PolicyParams(theta=theta, theta_ref=params.theta_ref,
                           lam=params.lam, eta=params.eta)
    loss = dpo_loss(current, pairs)
    for _ in range(steps):
        grad = dpo_grad(current, pairs)
        eta = params.eta
        for _ in range(6):
            trial = PolicyParams(theta=current.theta - eta * grad,
                                 theta_ref=params.theta_ref,
                                 lam=params.lam, eta=params.eta)
            trial_loss = dpo_loss(trial, pairs)
            if trial_loss <= loss:
                current, loss = trial, trial_loss
                break
            eta *= 0.5
    return current


def sample_action(params: PolicyParams, rng: random.Random) -> Action:
    """Categorical draw from softmax(theta) using the caller's seeded stream."""
    probs = _softmax(params.theta)
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += float(p)
        if u < acc:
            return ACTIONS[i]
    return ACTIONS[len(probs) - 1]
