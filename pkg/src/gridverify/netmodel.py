"""Dense ReLU networks with per-neuron activation masks.

A layer computes ``act(W v + b)`` where ``act`` applies ``max(., 0)`` only to
the neurons whose mask entry is true; the remaining neurons are identity
(passthrough). Networks built by the min-encoding transform mix both kinds of
neuron in one layer, which is why the mask is per-neuron rather than
per-layer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .fileio import LineReader, ParseError, fmt_vec

FORMAT_TAG = "gridverify-model"
FORMAT_VERSION = "v1"


class ShapeError(ValueError):
    """Raised when vector/matrix dimensions do not chain."""


ModelFormatError = ParseError  # model files share the package text format


def _as_float_matrix(a, rows=None, cols=None) -> np.ndarray:
    m = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    return m


@dataclass(frozen=True)
class Layer:
    """One affine map plus a per-neuron ReLU mask.

    mask[i] true: output i is ReLU(pre-activation i); false: identity.
    """

    weight: np.ndarray
    bias: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        w = _as_float_matrix(self.weight)
        b = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float64)).reshape(-1)
        m = np.ascontiguousarray(np.asarray(self.mask, dtype=bool)).reshape(-1)
        for arr in (w, b, m):
            arr.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "mask", m)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def violations(self, idx: int) -> List[str]:
        out = []
        if self.bias.shape[0] != self.weight.shape[0]:
            out.append(
                f"layer {idx}: bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        if self.mask.shape[0] != self.weight.shape[0]:
            out.append(
                f"layer {idx}: mask length {self.mask.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        if not np.all(np.isfinite(self.weight)) or not np.all(np.isfinite(self.bias)):
            out.append(f"layer {idx}: non-finite weight or bias entries")
        return out


def affine_layer(weight, bias) -> Layer:
    """Pure affine layer (all-false mask)."""
    w = _as_float_matrix(weight)
    return Layer(w, bias, np.zeros(w.shape[0], dtype=bool))


def relu_layer(weight, bias) -> Layer:
    """Standard fully-ReLU layer (all-true mask)."""
    w = _as_float_matrix(weight)
    return Layer(w, bias, np.ones(w.shape[0], dtype=bool))


@dataclass(frozen=True)
class DenseNN:
    """Immutable feed-forward network: an ordered chain of Layers."""

    layers: Tuple[Layer, ...]
    input_dim: int
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def from_layers(cls, layers: Iterable[Layer]) -> "DenseNN":
        layers = tuple(layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        return cls(layers, layers[0].in_dim, layers[-1].out_dim)

    @property
    def num_relu(self) -> int:
        return int(sum(int(l.mask.sum()) for l in self.layers))

    def widths(self) -> List[int]:
        return [self.input_dim] + [l.out_dim for l in self.layers]


def validate(nn: DenseNN) -> List[str]:
    """Return every invariant violation found (empty list means ok)."""
    out: List[str] = []
    if not nn.layers:
        return ["network has no layers"]
    for i, layer in enumerate(nn.layers):
        out.extend(layer.violations(i))
    for i in range(len(nn.layers) - 1):
        a, b = nn.layers[i], nn.layers[i + 1]
        if a.out_dim != b.in_dim:
            out.append(
                f"layer {i} output width {a.out_dim} does not chain into layer {i + 1} input width {b.in_dim}"
            )
    if nn.layers[0].in_dim != nn.input_dim:
        out.append(
            f"input_dim {nn.input_dim} != first layer input width {nn.layers[0].in_dim}"
        )
    if nn.layers[-1].out_dim != nn.output_dim:
        out.append(
            f"output_dim {nn.output_dim} != last layer output width {nn.layers[-1].out_dim}"
        )
    return out


def layer_forward(layer: Layer, v: np.ndarray) -> np.ndarray:
    pre = v @ layer.weight.T + layer.bias
    if layer.mask.any():
        pre = np.where(layer.mask, np.maximum(pre, 0.0), pre)
    return pre


def forward(nn: DenseNN, x) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.shape[0] != nn.input_dim:
        raise ShapeError(f"input length {v.shape[0]} != input_dim {nn.input_dim}")
    for layer in nn.layers:
        if v.shape[-1] != layer.in_dim:
            raise ShapeError(
                f"layer expects {layer.in_dim} inputs, got {v.shape[-1]}"
            )
        v = layer_forward(layer, v)
    return v


def forward_many(nn: DenseNN, xs) -> np.ndarray:
    """Evaluate on a batch of inputs, shape (n, input_dim) -> (n, output_dim)."""
    vs = np.asarray(xs, dtype=np.float64)
    if vs.ndim != 2 or vs.shape[1] != nn.input_dim:
        raise ShapeError(f"expected (n, {nn.input_dim}) batch, got {vs.shape}")
    for layer in nn.layers:
        vs = layer_forward(layer, vs)
    return vs


def prepend_affine(nn: DenseNN, weight, bias) -> DenseNN:
    """New network applying an affine map before the existing layers."""
    lead = affine_layer(weight, bias)
    if lead.out_dim != nn.input_dim:
        raise ShapeError(
            f"prepended map outputs {lead.out_dim}, network expects {nn.input_dim}"
        )
    return DenseNN((lead,) + nn.layers, lead.in_dim, nn.output_dim)


def append_layers(nn: DenseNN, layers: Sequence[Layer]) -> DenseNN:
    new = DenseNN(nn.layers + tuple(layers), nn.input_dim, layers[-1].out_dim)
    bad = validate(new)
    if bad:
        raise ShapeError("appended layers do not chain: " + "; ".join(bad))
    return new


# ---------------------------------------------------------------------------
# serialization: line-oriented text, 17 significant digits (exact round trip)
# ---------------------------------------------------------------------------


def dumps(nn: DenseNN) -> str:
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}"]
    lines.append(f"input_dim {nn.input_dim}")
    lines.append(f"output_dim {nn.output_dim}")
    lines.append(f"layers {len(nn.layers)}")
    for i, layer in enumerate(nn.layers):
        lines.append(f"layer {i}")
        lines.append(f"rows {layer.out_dim}")
        lines.append(f"cols {layer.in_dim}")
        lines.append("weight " + fmt_vec(layer.weight))
        lines.append("bias " + fmt_vec(layer.bias))
        lines.append("mask " + " ".join("1" if m else "0" for m in layer.mask))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save(nn: DenseNN, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(nn))


def loads(text: str) -> DenseNN:
    cur = LineReader(text)
    cur.header(FORMAT_TAG, FORMAT_VERSION)
    input_dim = cur.take_int("input_dim")
    output_dim = cur.take_int("output_dim")
    n_layers = cur.take_int("layers")
    layers = []
    for i in range(n_layers):
        idx = cur.take_int("layer")
        if idx != i:
            raise ModelFormatError(f"layer index {idx}, expected {i}", line=cur.pos, field="layer")
        rows = cur.take_int("rows")
        cols = cur.take_int("cols")
        w = cur.take_floats("weight", rows * cols).reshape(rows, cols)
        b = cur.take_floats("bias", rows)
        lineno = cur.pos + 1
        mtoks = cur.take("mask")
        if len(mtoks) != rows or any(t not in ("0", "1") for t in mtoks):
            raise ModelFormatError(f"mask expects {rows} 0/1 entries", line=lineno, field="mask")
        layers.append(Layer(w, b, np.array([t == "1" for t in mtoks])))
    cur.take("end")
    nn = DenseNN(tuple(layers), input_dim, output_dim)
    bad = validate(nn)
    if bad:
        raise ModelFormatError("model violates invariants: " + "; ".join(bad))
    return nn


def load(path) -> DenseNN:
    with open(path) as fh:
        return loads(fh.read())


def model_hash(nn: DenseNN) -> str:
    return hashlib.sha256(dumps(nn).encode()).hexdigest()[:16]
