"""Small feed-forward networks: interchange loading, inference, inventory.

Supported layer kinds are dense, conv2d, relu, maxpool2d and flatten; all
arithmetic is float64 so downstream correlation and quantization results are
reproducible across platforms. Models and datasets are immutable after load
and every operation here is pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ModelFormatError

PARAMETERIZED_KINDS = ("dense", "conv2d")
KINDS = PARAMETERIZED_KINDS + ("relu", "maxpool2d", "flatten")

_LAYER_FIELDS = {
    "dense": {"kind", "in_features", "out_features", "weights", "bias"},
    "conv2d": {"kind", "in_channels", "out_channels", "kernel_size", "stride",
               "padding", "weights", "bias"},
    "relu": {"kind"},
    "maxpool2d": {"kind", "kernel_size", "stride"},
    "flatten": {"kind"},
}


@dataclass(frozen=True)
class Layer:
    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0

    @property
    def layer_class(self) -> str:
        if self.kind == "conv2d":
            return "conv"
        if self.kind == "dense":
            return "linear"
        return "none"

    @property
    def parameterized(self) -> bool:
        return self.kind in PARAMETERIZED_KINDS

    def param_count(self) -> int:
        n = 0
        if self.weights is not None:
            n += self.weights.size
        if self.bias is not None:
            n += self.bias.size
        return n

    def with_weights(self, weights: np.ndarray) -> "Layer":
        """Copy of this layer with `weights` substituted (shape preserved)."""
        if self.weights is None or weights.shape != self.weights.shape:
            raise ValueError("substitute weights must match the original shape")
        return Layer(kind=self.kind, weights=weights, bias=self.bias,
                     in_features=self.in_features, out_features=self.out_features,
                     in_channels=self.in_channels, out_channels=self.out_channels,
                     kernel_size=self.kernel_size, stride=self.stride,
                     padding=self.padding)


@dataclass(frozen=True)
class Model:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...]

    @property
    def parameterized_layers(self) -> list[tuple[int, Layer]]:
        """(model-layer index, layer) for dense/conv2d layers, in depth order."""
        return [(i, l) for i, l in enumerate(self.layers) if l.parameterized]


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray          # (n, c, h, w), float64
    labels: np.ndarray          # (n,), int
    num_classes: int

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class LayerMeta:
    index: int                  # 1-based depth over parameterized layers
    layer_class: str            # "conv" | "linear"
    param_count: int            # weights + bias elements
    mac_count: int


def _output_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape of `layer`'s output for a single sample of input `shape`."""
    if layer.kind == "dense":
        if len(shape) != 1 or shape[0] != layer.in_features:
            raise ModelFormatError(
                f"dense expects flat input of {layer.in_features}, got {shape}",
                context="shape chain")
        return (layer.out_features,)
    if layer.kind == "conv2d":
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ModelFormatError(
                f"conv2d expects ({layer.in_channels}, h, w) input, got {shape}",
                context="shape chain")
        c, h, w = shape
        k, s, p = layer.kernel_size, layer.stride, layer.padding
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise ModelFormatError("conv2d kernel larger than padded input",
                                   context="shape chain")
        return (layer.out_channels, oh, ow)
    if layer.kind == "maxpool2d":
        if len(shape) != 3:
            raise ModelFormatError("maxpool2d expects a (c, h, w) input",
                                   context="shape chain")
        c, h, w = shape
        k, s = layer.kernel_size, layer.stride
        oh = (h - k) // s + 1
        ow = (w - k) // s + 1
        if oh < 1 or ow < 1:
            raise ModelFormatError("maxpool2d kernel larger than input",
                                   context="shape chain")
        return (c, oh, ow)
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    return shape  # relu


def validate_model(model: Model) -> None:
    """Raise ModelFormatError unless layer shapes chain and weights are sane."""
    if not any(l.parameterized for l in model.layers):
        raise ModelFormatError("model needs at least one parameterized layer",
                               context="layers")
    shape: tuple[int, ...] = tuple(model.input_shape)
    for i, layer in enumerate(model.layers):
        if layer.weights is not None and not np.all(np.isfinite(layer.weights)):
            raise ModelFormatError("non-finite weight value",
                                   context=f"layers[{i}]")
        if layer.bias is not None and not np.all(np.isfinite(layer.bias)):
            raise ModelFormatError("non-finite bias value",
                                   context=f"layers[{i}]")
        try:
            shape = _output_shape(layer, shape)
        except ModelFormatError as e:
            raise ModelFormatError(str(e), context=f"layers[{i}]") from None


def _parse_layer(obj: dict, i: int) -> Layer:
    ctx = f"layers[{i}]"
    if not isinstance(obj, dict):
        raise ModelFormatError("layer must be an object", context=ctx)
    kind = obj.get("kind")
    if kind not in KINDS:
        raise ModelFormatError(f"unknown layer kind {kind!r}", context=ctx)
    unknown = set(obj) - _LAYER_FIELDS[kind]
    if unknown:
        raise ModelFormatError(f"unknown field(s) {sorted(unknown)}", context=ctx)

    def need_int(name: str, minimum: int = 1) -> int:
        v = obj.get(name)
        if not isinstance(v, int) or v < minimum:
            raise ModelFormatError(f"field {name!r} must be an integer >= {minimum}",
                                   context=ctx)
        return v

    weights = bias = None
    kw: dict = {}
    if kind == "dense":
        fin, fout = need_int("in_features"), need_int("out_features")
        kw.update(in_features=fin, out_features=fout)
        weights = _parse_tensor(obj, "weights", (fout, fin), ctx, required=True)
        bias = _parse_tensor(obj, "bias", (fout,), ctx, required=False)
    elif kind == "conv2d":
        cin, cout = need_int("in_channels"), need_int("out_channels")
        k = need_int("kernel_size")
        s = need_int("stride") if "stride" in obj else 1
        p = need_int("padding", minimum=0) if "padding" in obj else 0
        kw.update(in_channels=cin, out_channels=cout, kernel_size=k,
                  stride=s, padding=p)
        weights = _parse_tensor(obj, "weights", (cout, cin, k, k), ctx, required=True)
        bias = _parse_tensor(obj, "bias", (cout,), ctx, required=False)
    elif kind == "maxpool2d":
        k = need_int("kernel_size")
        s = need_int("stride") if "stride" in obj else k
        kw.update(kernel_size=k, stride=s)
    return Layer(kind=kind, weights=weights, bias=bias, **kw)


def _parse_tensor(obj: dict, name: str, shape: tuple[int, ...], ctx: str,
                  required: bool) -> np.ndarray | None:
    flat = obj.get(name)
    if flat is None:
        if required:
            raise ModelFormatError(f"missing {name!r}", context=ctx)
        return None
    expected = int(np.prod(shape))
    if not isinstance(flat, list) or len(flat) != expected:
        got = len(flat) if isinstance(flat, list) else type(flat).__name__
        raise ModelFormatError(
            f"{name!r} must hold {expected} values for shape {shape}, got {got}",
            context=ctx)
    arr = np.asarray(flat, dtype=np.float64).reshape(shape)
    return arr


def load_model(path: str) -> Model:
    """Parse an interchange model file; see docs/FORMATS.md for the schema."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read model file {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"invalid JSON: {e}", context=path) from None

    if not isinstance(doc, dict):
        raise ModelFormatError("top level must be an object", context=path)
    unknown = set(doc) - {"name", "input_shape", "layers"}
    if unknown:
        raise ModelFormatError(f"unknown field(s) {sorted(unknown)}", context=path)
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ModelFormatError("'name' must be a non-empty string", context=path)
    shape = doc.get("input_shape")
    if (not isinstance(shape, list) or len(shape) != 3
            or not all(isinstance(v, int) and v >= 1 for v in shape)):
        raise ModelFormatError("'input_shape' must be three positive integers",
                               context=path)
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelFormatError("model needs at least one parameterized layer",
                               context="layers")
    layers = tuple(_parse_layer(l, i) for i, l in enumerate(raw_layers))
    model = Model(name=name, input_shape=tuple(shape), layers=layers)
    validate_model(model)
    return model


def load_dataset(path: str, input_shape: tuple[int, int, int]) -> Dataset:
    """Parse an interchange dataset file against the model's input shape."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read dataset file {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"invalid JSON: {e}", context=path) from None

    if not isinstance(doc, dict) or set(doc) - {"num_classes", "samples"}:
        raise ModelFormatError("top level must be {num_classes, samples}",
                               context=path)
    num_classes = doc.get("num_classes")
    if not isinstance(num_classes, int) or num_classes < 1:
        raise ModelFormatError("'num_classes' must be a positive integer",
                               context=path)
    samples = doc.get("samples")
    if not isinstance(samples, list) or not samples:
        raise DataError(f"{path}: dataset has no samples")
    size = int(np.prod(input_shape))
    xs = np.empty((len(samples),) + tuple(input_shape), dtype=np.float64)
    ys = np.empty(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        ctx = f"samples[{i}]"
        if not isinstance(s, dict) or set(s) - {"input", "label"}:
            raise ModelFormatError("sample must be {input, label}", context=ctx)
        flat = s.get("input")
        if not isinstance(flat, list) or len(flat) != size:
            raise ModelFormatError(f"'input' must hold {size} values", context=ctx)
        label = s.get("label")
        if not isinstance(label, int) or not (0 <= label < num_classes):
            raise ModelFormatError("'label' out of range", context=ctx)
        xs[i] = np.asarray(flat, dtype=np.float64).reshape(input_shape)
        ys[i] = label
    if not np.all(np.isfinite(xs)):
        raise ModelFormatError("non-finite input value", context=path)
    return Dataset(inputs=xs, labels=ys, num_classes=num_classes)


def _conv2d(x: np.ndarray, layer: Layer) -> np.ndarray:
    n, _, h, w = x.shape
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, layer.out_channels, oh, ow), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + s * oh:s, j:j + s * ow:s]
            out += np.einsum("nchw,oc->nohw", patch, layer.weights[:, :, i, j])
    if layer.bias is not None:
        out += layer.bias[None, :, None, None]
    return out


def _maxpool2d(x: np.ndarray, layer: Layer) -> np.ndarray:
    n, c, h, w = x.shape
    k, s = layer.kernel_size, layer.stride
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    out = np.full((n, c, oh, ow), -np.inf, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out = np.maximum(out, x[:, :, i:i + s * oh:s, j:j + s * ow:s])
    return out


def apply_layer(layer: Layer, x: np.ndarray) -> np.ndarray:
    """One layer forward on a batch; batch axis first."""
    if layer.kind == "dense":
        out = x @ layer.weights.T
        if layer.bias is not None:
            out = out + layer.bias
        return out
    if layer.kind == "conv2d":
        return _conv2d(x, layer)
    if layer.kind == "relu":
        return np.maximum(x, 0.0)
    if layer.kind == "maxpool2d":
        return _maxpool2d(x, layer)
    if layer.kind == "flatten":
        return x.reshape(x.shape[0], -1)
    raise ValueError(f"unsupported layer kind {layer.kind!r}")


def forward(model: Model, batch: np.ndarray, capture: bool = False):
    """Full-precision forward pass.

    Returns logits (n, num_outputs) or, with capture, (logits, activations)
    where activations[i] is layer i's output for the whole batch.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] == 0:
        raise DataError("forward needs a non-empty batch")
    if tuple(x.shape[1:]) != tuple(model.input_shape):
        raise DataError(
            f"batch shape {tuple(x.shape[1:])} does not match model input "
            f"{tuple(model.input_shape)}")
    activations: list[np.ndarray] = []
    for layer in model.layers:
        x = apply_layer(layer, x)
        if capture:
            activations.append(x.copy())
    if capture:
        return x, activations
    return x


def accuracy(model: Model, data: Dataset) -> float:
    """Fraction of samples whose argmax logit matches the label.

    Argmax ties resolve to the lowest class index.
    """
    if len(data) == 0:
        raise DataError("accuracy needs a non-empty dataset")
    logits = forward(model, data.inputs)
    predictions = np.argmax(logits, axis=1)
    return float(np.mean(predictions == data.labels))


def layer_inventory(model: Model) -> list[LayerMeta]:
    """Per parameterized layer: 1-based depth, class, parameter and MAC counts."""
    metas: list[LayerMeta] = []
    shape: tuple[int, ...] = tuple(model.input_shape)
    depth = 0
    for layer in model.layers:
        out_shape = _output_shape(layer, shape)
        if layer.parameterized:
            depth += 1
            if layer.kind == "dense":
                macs = layer.in_features * layer.out_features
            else:
                _, oh, ow = out_shape
                kernel_volume = layer.in_channels * layer.kernel_size ** 2
                macs = oh * ow * layer.out_channels * kernel_volume
            metas.append(LayerMeta(index=depth, layer_class=layer.layer_class,
                                   param_count=layer.param_count(),
                                   mac_count=macs))
        shape = out_shape
    return metas
