"""Fully-connected network functions: representation, evaluation, fixtures.

A network is ``F = W_L o A_{L-1} o ... o A_1`` plus the final bias, where each
hidden map is ``A_j(x) = act(W_j x + b_j)`` and the output layer is affine.

Affine maps are accumulated column by column in a fixed order instead of going
through BLAS. That keeps single-point and batched evaluation bit-identical and
makes zero-padding of layers exact (appended zero columns only add ``+0.0``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, SchemaError
from .geometry import nullspace

ACTIVATIONS = ("relu", "leaky_relu", "tanh")


@dataclass(frozen=True)
class ActivationKind:
    kind: str
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise SchemaError("activation", f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu":
            if self.beta is None or not (0.0 < float(self.beta) < 1.0):
                raise SchemaError("leaky_beta", "leaky_relu needs beta in (0, 1)")
            object.__setattr__(self, "beta", float(self.beta))
        elif self.beta is not None:
            raise SchemaError("leaky_beta", f"beta is only valid for leaky_relu, not {self.kind}")

    @property
    def piecewise_linear(self) -> bool:
        return self.kind in ("relu", "leaky_relu")

    @property
    def strictly_increasing(self) -> bool:
        return self.kind in ("leaky_relu", "tanh")

    @property
    def surjective(self) -> bool:
        return self.kind == "leaky_relu"

    lipschitz = 1.0

    def __call__(self, z):
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "leaky_relu":
            return np.maximum(z, self.beta * z)
        return np.tanh(z)

    def derivative(self, z):
        if self.kind == "relu":
            return (z > 0).astype(float)
        if self.kind == "leaky_relu":
            return np.where(z > 0, 1.0, self.beta)
        t = np.tanh(z)
        return 1.0 - t * t

    def slopes(self, pattern):
        """Slope of a piecewise-linear activation for a boolean active pattern."""
        if self.kind == "relu":
            return pattern.astype(float)
        if self.kind == "leaky_relu":
            return np.where(pattern, 1.0, self.beta)
        raise InputError("slopes are only defined for piecewise-linear activations")


RELU = ActivationKind("relu")
TANH = ActivationKind("tanh")


def leaky(beta=0.1) -> ActivationKind:
    return ActivationKind("leaky_relu", beta)


def _frozen(a, ndim, name):
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise SchemaError(name, f"expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(name, "entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Layer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights, 2, "weights")
        b = _frozen(self.bias, 1, "bias")
        if w.shape[0] != b.shape[0]:
            raise SchemaError("bias", f"length {b.shape[0]} does not match {w.shape[0]} weight rows")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]

    def apply(self, a):
        """``W a + b`` for a single vector or a batch of row vectors."""
        w = self.weights
        acc = a[..., 0:1] * w[:, 0]
        for i in range(1, w.shape[1]):
            acc = acc + a[..., i:i + 1] * w[:, i]
        return acc + self.bias


@dataclass(frozen=True, eq=False)
class Network:
    hidden: tuple
    output: Layer
    activation: ActivationKind = RELU

    def __post_init__(self):
        hidden = tuple(self.hidden)
        object.__setattr__(self, "hidden", hidden)
        dims = [layer.d_in for layer in hidden + (self.output,)]
        outs = [layer.d_out for layer in hidden]
        for j, (o, i) in enumerate(zip(outs, dims[1:])):
            if o != i:
                where = f"hidden[{j + 1}]" if j + 1 < len(hidden) else "output"
                raise SchemaError(f"{where}.weights", f"expects input dim {i} but previous layer emits {o}")

    @property
    def d_in(self) -> int:
        return (self.hidden[0] if self.hidden else self.output).d_in

    @property
    def d_out(self) -> int:
        return self.output.d_out

    @property
    def layers(self) -> tuple:
        return self.hidden + (self.output,)

    @property
    def dims(self) -> list[int]:
        return [self.d_in] + [layer.d_out for layer in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def scalar_output(self) -> bool:
        return self.d_out == 1

    def class_labels(self) -> list:
        """Class labels in code order; code ``-1`` is reserved for ties."""
        return ["neg", "pos"] if self.scalar_output else list(range(self.d_out))

    def class_code(self, label) -> int:
        labels = self.class_labels()
        if label not in labels or isinstance(label, bool):
            raise InputError(f"invalid class {label!r}; expected one of {labels}")
        return labels.index(label)


@dataclass
class TraceRecord:
    preactivations: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    output: np.ndarray | None = None


def _as_input(net: Network, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != net.d_in:
        raise InputError(f"expected input of length {net.d_in}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("input must be finite")
    return x


def forward(net: Network, x) -> np.ndarray:
    """Evaluate ``F(x)``; ``x`` may be one point or an ``(n, d_in)`` batch."""
    a = _as_input(net, x)
    act = net.activation
    for layer in net.hidden:
        a = act(layer.apply(a))
    return net.output.apply(a)


def forward_trace(net: Network, x) -> TraceRecord:
    a = _as_input(net, x)
    trace = TraceRecord()
    act = net.activation
    for layer in net.hidden:
        z = layer.apply(a)
        a = act(z)
        trace.preactivations.append(z)
        trace.activations.append(a)
    out = net.output.apply(a)
    trace.preactivations.append(out)
    trace.output = out
    return trace


def hidden_output(net: Network, x) -> np.ndarray:
    """Image of ``x`` under ``A_{L-1} o ... o A_1`` (the input to the output layer)."""
    a = _as_input(net, x)
    for layer in net.hidden:
        a = net.activation(layer.apply(a))
    return a


def decide_codes(net: Network, out) -> np.ndarray:
    """Map raw outputs to class codes; ``-1`` marks an exact tie."""
    out = np.asarray(out)
    if net.scalar_output:
        v = out[..., 0]
        return np.where(v < 0, 0, np.where(v > 0, 1, -1))
    top = np.argmax(out, axis=-1)
    best = np.take_along_axis(out, top[..., None], axis=-1)
    unique = np.sum(out == best, axis=-1) == 1
    return np.where(unique, top, -1)


def decide_batch(net: Network, x) -> np.ndarray:
    return decide_codes(net, forward(net, x))


def decide(net: Network, x):
    """Class of ``x``: strict argmax index, or ``"neg"``/``"pos"`` for scalar output.

    Returns None on an exact tie.
    """
    x = _as_input(net, x)
    if x.ndim != 1:
        raise InputError("decide takes a single point; use decide_batch for batches")
    code = int(decide_codes(net, forward(net, x)))
    return None if code < 0 else net.class_labels()[code]


def width(net: Network) -> int:
    return max(layer.d_out for layer in net.layers)


def kernel_directions(net: Network, tol: float = 1e-10) -> list[np.ndarray]:
    """Orthonormal basis of the numerical kernel of the first weight matrix.

    Moving the input along any of these directions leaves ``F`` unchanged.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    return nullspace(net.layers[0].weights, tol)


def random_network(rng, dims: Sequence[int], activation: ActivationKind = RELU,
                   weight_scale=1.0, bias_scale=0.5) -> Network:
    """Gaussian weights scaled by ``1/sqrt(fan_in)`` and Gaussian biases."""
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((fan_out, fan_in)) * weight_scale / np.sqrt(fan_in)
        b = rng.standard_normal(fan_out) * bias_scale
        layers.append(Layer(w, b))
    return Network(tuple(layers[:-1]), layers[-1], activation)


# --- fixture documents -------------------------------------------------------

def _layer_doc(layer: Layer) -> dict:
    return {"weights": layer.weights.tolist(), "bias": layer.bias.tolist()}


def to_dict(net: Network) -> dict:
    doc = {"activation": net.activation.kind}
    if net.activation.kind == "leaky_relu":
        doc["leaky_beta"] = net.activation.beta
    doc.update({
        "d_in": net.d_in,
        "d_out": net.d_out,
        "hidden": [_layer_doc(layer) for layer in net.hidden],
        "output": _layer_doc(net.output),
    })
    return doc


def serialize(net: Network) -> str:
    # json writes floats with repr(), the shortest round-tripping text
    return json.dumps(to_dict(net), indent=1)


def _parse_layer(doc, name) -> Layer:
    if not isinstance(doc, dict):
        raise SchemaError(name, "layer must be an object")
    for key in ("weights", "bias"):
        if key not in doc:
            raise SchemaError(f"{name}.{key}", "missing")
    w, b = doc["weights"], doc["bias"]
    if not isinstance(w, list) or not w or not all(isinstance(r, list) for r in w):
        raise SchemaError(f"{name}.weights", "must be a non-empty list of rows")
    if len({len(r) for r in w}) != 1 or not w[0]:
        raise SchemaError(f"{name}.weights", "rows must be non-empty and of equal length")
    if not isinstance(b, list):
        raise SchemaError(f"{name}.bias", "must be a list")
    for arr, key in ((w, "weights"), (b, "bias")):
        flat = [v for r in arr for v in r] if key == "weights" else arr
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in flat):
            raise SchemaError(f"{name}.{key}", "entries must be numbers")
    if len(b) != len(w):
        raise SchemaError(f"{name}.bias", f"length {len(b)} does not match {len(w)} weight rows")
    try:
        return Layer(w, b)
    except SchemaError as exc:
        raise SchemaError(f"{name}.{exc.field}", str(exc).split(": ", 1)[-1]) from None


def from_dict(doc) -> Network:
    if not isinstance(doc, dict):
        raise SchemaError("document", "top level must be an object")
    known = {"activation", "leaky_beta", "d_in", "d_out", "hidden", "output"}
    extra = sorted(set(doc) - known)
    if extra:
        raise SchemaError(extra[0], "unknown field")
    for key in ("activation", "d_in", "d_out", "hidden", "output"):
        if key not in doc:
            raise SchemaError(key, "missing")
    if doc["activation"] not in ACTIVATIONS:
        raise SchemaError("activation", f"unknown activation {doc['activation']!r}")
    act = ActivationKind(doc["activation"], doc.get("leaky_beta"))
    if not isinstance(doc["hidden"], list):
        raise SchemaError("hidden", "must be a list of layers")
    hidden = [_parse_layer(h, f"hidden[{i}]") for i, h in enumerate(doc["hidden"])]
    output = _parse_layer(doc["output"], "output")
    for key in ("d_in", "d_out"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool) or doc[key] < 1:
            raise SchemaError(key, "must be a positive integer")
    net = Network(tuple(hidden), output, act)
    if net.d_in != doc["d_in"]:
        raise SchemaError("d_in", f"declared {doc['d_in']} but first layer takes {net.d_in}")
    if net.d_out != doc["d_out"]:
        raise SchemaError("d_out", f"declared {doc['d_out']} but output layer emits {net.d_out}")
    return net


def deserialize(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("document", f"not valid JSON ({exc.msg})") from None
    return from_dict(doc)


def load(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())
