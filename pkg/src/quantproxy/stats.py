"""Per-layer feature vectors consumed by proxy expressions, plus built-ins.

Activation entropy uses a 256-bin histogram over the observed range of each
layer's outputs on the calibration set, in bits; a degenerate range scores 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from . import dsl
from .errors import DataError, ModelFormatError
from .smallnet import Dataset, Model, forward

ENTROPY_BINS = 256

# The strongest hand-checked formula shipped as a named built-in: weight
# norm, activation entropy, and an exponential depth decay.
NORM_ENTROPY_DECAY = "w_l2 * a_entropy * exp(-(depth / total_layers))"


@dataclass(frozen=True)
class LayerStats:
    w_l2: float
    w_l1_mean: float
    w_std: float
    w_max_abs: float
    n_params: float
    a_entropy: float
    a_mean_abs: float
    a_std: float
    a_max_abs: float
    depth: float
    total_layers: float
    layer_class: str

    def to_json(self) -> dict:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, value in doc.items():
            if key != "layer_class":
                doc[key] = float(value)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "LayerStats":
        names = {f.name for f in fields(cls)}
        if not isinstance(doc, dict) or set(doc) != names:
            missing = names - set(doc) if isinstance(doc, dict) else names
            raise ModelFormatError(f"layer stats entry must carry fields {sorted(names)}"
                                   f" (missing/extra near {sorted(missing)[:3]})")
        kw = {}
        for f in fields(cls):
            v = doc[f.name]
            if f.name == "layer_class":
                if v not in ("conv", "linear"):
                    raise ModelFormatError(f"layer_class must be conv|linear, got {v!r}")
                kw[f.name] = v
            else:
                kw[f.name] = float(v)
                if not math.isfinite(kw[f.name]):
                    raise ModelFormatError(f"non-finite stats field {f.name!r}")
        return cls(**kw)


def activation_entropy(values: np.ndarray, bins: int = ENTROPY_BINS) -> float:
    """Shannon entropy (base 2) of a histogram over the observed range."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(flat.min()), float(flat.max())
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(flat, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / flat.size
    return float(-np.sum(p * np.log2(p)))


def compute_layer_stats(model: Model, calib: Dataset) -> list[LayerStats]:
    """One LayerStats per parameterized layer, in depth order."""
    if len(calib) == 0:
        raise DataError("calibration set is empty")
    params = model.parameterized_layers
    if not params:
        raise DataError("model has no parameterized layers")
    _, activations = forward(model, calib.inputs, capture=True)
    total = len(params)
    result: list[LayerStats] = []
    for d, (li, layer) in enumerate(params, start=1):
        w = layer.weights.ravel()
        a = activations[li].ravel()
        result.append(LayerStats(
            w_l2=float(np.sqrt(np.sum(w * w))),
            w_l1_mean=float(np.mean(np.abs(w))),
            w_std=float(np.std(w)),
            w_max_abs=float(np.max(np.abs(w))),
            n_params=float(layer.param_count()),
            a_entropy=activation_entropy(a),
            a_mean_abs=float(np.mean(np.abs(a))),
            a_std=float(np.std(a)),
            a_max_abs=float(np.max(np.abs(a))),
            depth=float(d),
            total_layers=float(total),
            layer_class=layer.layer_class,
        ))
    return result


def builtin_norm_entropy_decay(stats: list[LayerStats]) -> list[float]:
    """Scores from the NORM_ENTROPY_DECAY formula, via the DSL evaluator."""
    return dsl.evaluate(dsl.parse(NORM_ENTROPY_DECAY), stats)


def builtin_ompq(model: Model, calib: Dataset) -> list[float]:
    """OMPQ-style orthogonality scores.

    Layer i's activation over the calibration set is mean-pooled to one value
    per sample, giving length-aligned vectors z_i; the score is the summed
    squared cosine similarity against every other layer.
    """
    params = model.parameterized_layers
    if len(params) < 2:
        raise DataError("orthogonality scores need at least two layers")
    if len(calib) == 0:
        raise DataError("calibration set is empty")
    _, activations = forward(model, calib.inputs, capture=True)
    zs = []
    for li, _ in params:
        act = activations[li]
        zs.append(act.reshape(act.shape[0], -1).mean(axis=1))
    scores = []
    for i, zi in enumerate(zs):
        ni = float(zi @ zi)
        total = 0.0
        for j, zj in enumerate(zs):
            if j == i:
                continue
            nj = float(zj @ zj)
            if ni == 0.0 or nj == 0.0:
                continue
            total += float(zi @ zj) ** 2 / (ni * nj)
        scores.append(total)
    return scores


def save_stats(stats: list[LayerStats], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"layers": [s.to_json() for s in stats]}, fh, indent=2)
        fh.write("\n")


def load_stats(path: str) -> list[LayerStats]:
    """Read a stats file produced by save_stats or an external exporter."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read stats file {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict) or set(doc) != {"layers"}:
        raise ModelFormatError("stats file must be {layers: [...]}")
    entries = doc["layers"]
    if not isinstance(entries, list) or not entries:
        raise ModelFormatError("stats file holds no layers")
    stats = [LayerStats.from_json(e) for e in entries]
    depths = [int(s.depth) for s in stats]
    if depths != list(range(1, len(stats) + 1)):
        raise ModelFormatError("stats layers must be in depth order 1..L")
    return stats
