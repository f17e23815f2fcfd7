"""Greedy bit-width allocation under a parameter-compression budget.

Every layer starts at its menu minimum; the highest-score layer whose next
menu step still satisfies the budget is upgraded, repeatedly, until nothing
fits. Ties on score go to the smaller layer first (more upgrades per budget
unit), then to the shallower layer. The budget constrains parameter bits;
BOPs are reported but never constrained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataError, InfeasibleBudgetError
from .quantsim import (BitAssignment, DEFAULT_ACTIVATION_BITS, DEFAULT_MENUS,
                       FLOAT_BITS)
from .smallnet import LayerMeta, Model, layer_inventory


@dataclass(frozen=True)
class AllocationRequest:
    scores: tuple[float, ...]
    target_compression: float
    menus: dict[str, tuple[int, ...]] = field(default_factory=lambda: dict(DEFAULT_MENUS))
    activation_bits: int = DEFAULT_ACTIVATION_BITS


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]


def allocate(req: AllocationRequest, inventory: list[LayerMeta]) -> BitAssignment:
    """Greedy most-sensitive-first ladder; raises on an infeasible target."""
    if not inventory:
        raise DataError("cannot allocate bits for a model with no layers")
    if len(req.scores) != len(inventory):
        raise DataError(
            f"got {len(req.scores)} scores for {len(inventory)} layers")
    if not (0.0 < req.target_compression < 1.0):
        raise DataError("target compression must lie in (0, 1)")
    menus = []
    for m in inventory:
        menu = tuple(sorted(req.menus.get(m.layer_class, ())))
        if not menu:
            raise DataError(f"no bit menu for layer class {m.layer_class!r}")
        menus.append(menu)

    total_bits_fp = FLOAT_BITS * sum(m.param_count for m in inventory)
    steps = [0] * len(inventory)          # menu position per layer
    param_bits = sum(m.param_count * menu[0]
                     for m, menu in zip(inventory, menus))
    if 1.0 - param_bits / total_bits_fp < req.target_compression:
        raise InfeasibleBudgetError(
            f"target compression {req.target_compression} infeasible: even the "
            f"all-minimum assignment only reaches "
            f"{1.0 - param_bits / total_bits_fp:.4f}")

    # Upgrade priority is fixed per layer: score desc, then param count asc,
    # then depth asc.
    order = sorted(range(len(inventory)),
                   key=lambda i: (-req.scores[i], inventory[i].param_count,
                                  inventory[i].index))
    while True:
        upgraded = False
        for i in order:
            menu = menus[i]
            if steps[i] + 1 >= len(menu):
                continue
            delta = inventory[i].param_count * (menu[steps[i] + 1] - menu[steps[i]])
            if 1.0 - (param_bits + delta) / total_bits_fp >= req.target_compression:
                steps[i] += 1
                param_bits += delta
                upgraded = True
                break
        if not upgraded:
            break
    return BitAssignment(
        weight_bits=tuple(menu[s] for menu, s in zip(menus, steps)),
        activation_bits=req.activation_bits)


def validate_assignment(assignment: BitAssignment, model: Model,
                        target_compression: float,
                        menus: dict[str, tuple[int, ...]] | None = None) -> ValidationReport:
    """Menu membership, length, and budget checks; returns every violation."""
    menus = dict(DEFAULT_MENUS) if menus is None else menus
    inventory = layer_inventory(model)
    violations: list[str] = []
    if len(assignment.weight_bits) != len(inventory):
        violations.append(
            f"length: assignment covers {len(assignment.weight_bits)} layers, "
            f"model has {len(inventory)}")
        return ValidationReport(ok=False, violations=tuple(violations))
    for m, b in zip(inventory, assignment.weight_bits):
        menu = menus.get(m.layer_class, ())
        if b not in menu:
            violations.append(
                f"menu: layer {m.index} ({m.layer_class}) assigned {b} bits, "
                f"menu is {menu}")
    param_bits = sum(m.param_count * b
                     for m, b in zip(inventory, assignment.weight_bits))
    ratio = 1.0 - param_bits / (FLOAT_BITS * sum(m.param_count for m in inventory))
    if ratio < target_compression:
        violations.append(
            f"budget: compression {ratio:.4f} below target {target_compression}")
    return ValidationReport(ok=not violations, violations=tuple(violations))
