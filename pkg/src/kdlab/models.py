"""MLP model family: teacher, student, and self-learning-teacher networks.

Capacity is expressed purely through width and depth, which is what the
distillation experiments vary. Models are plain data; parameters mutate only
inside an owning training loop.
"""

from __future__ import annotations

import hashlib
import math
import random
from array import array
from dataclasses import dataclass
from typing import Iterator, Sequence

from kdlab import _kernels as K
from kdlab.errors import ContractError, DimensionError, ParseError
from kdlab.tensor import Tensor, _active_tape, add_bias, matmul, relu

_FORMAT_TAG = "kdlab-model"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: input width, hidden widths, class count."""

    input_dim: int
    hidden: tuple[int, ...]
    classes: int

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise ContractError(f"input_dim must be positive, got {self.input_dim}")
        if any(h < 1 for h in self.hidden):
            raise ContractError(f"hidden widths must be positive, got {self.hidden}")
        if self.classes < 2:
            raise ContractError(f"need at least 2 classes, got {self.classes}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.classes]


class Model:
    """An MLP: spec plus per-layer weight and bias tensors."""

    __slots__ = ("spec", "weights", "biases", "param_seed")

    def __init__(self, spec: ModelSpec, weights: list[Tensor], biases: list[Tensor], param_seed: int):
        self.spec = spec
        self.weights = weights
        self.biases = biases
        self.param_seed = param_seed

    def parameters(self) -> Iterator[Tensor]:
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


def init_model(spec: ModelSpec, seed: int) -> Model:
    """Seeded init: weights uniform in ±1/√fan_in, biases zero."""
    rng = random.Random(seed)
    weights, biases = [], []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        w = array("d", (rng.uniform(-bound, bound) for _ in range(fan_in * fan_out)))
        weights.append(Tensor((fan_in, fan_out), w))
        biases.append(Tensor((fan_out,), array("d", bytes(8 * fan_out))))
    return Model(spec, weights, biases, seed)


def clone_architecture(model: Model, seed: int) -> Model:
    """Fresh model with the same architecture and new seeded parameters."""
    return init_model(model.spec, seed)


def forward(model: Model, x: Tensor) -> Tensor:
    """Logits for a batch: affine + rectifier stacks, raw final affine.

    Under an active tape the model's parameters are watched, so the pass is
    differentiable; with no tape this is plain inference.
    """
    if len(x.shape) != 2 or x.shape[1] != model.spec.input_dim:
        raise DimensionError(
            f"input shape {x.shape} does not match input_dim {model.spec.input_dim}"
        )
    tape = _active_tape()
    if tape is not None:
        for p in model.parameters():
            tape.watch(p)
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = add_bias(matmul(h, w), b)
        if i != last:
            h = relu(h)
    return h


def num_params(model: Model) -> int:
    return sum(p.size for p in model.parameters())


def param_checksum(model: Model) -> str:
    """SHA-256 over all parameter bytes; detects any parameter mutation."""
    digest = hashlib.sha256()
    for p in model.parameters():
        digest.update(p.data.tobytes())
    return digest.hexdigest()


def save_model(model: Model, path: str) -> None:
    """Write the flat text format: spec header, then per-layer value rows."""
    lines = [
        f"{_FORMAT_TAG} {_FORMAT_VERSION}",
        f"input_dim {model.spec.input_dim}",
        "hidden" + "".join(f" {h}" for h in model.spec.hidden),
        f"classes {model.spec.classes}",
        f"seed {model.param_seed}",
    ]
    for li, (w, b) in enumerate(zip(model.weights, model.biases)):
        fan_in, fan_out = w.shape
        lines.append(f"layer {li} weight {fan_in} {fan_out}")
        for r in range(fan_in):
            row = w.data[r * fan_out : (r + 1) * fan_out]
            lines.append(" ".join(f"{v:.17g}" for v in row))
        lines.append(f"layer {li} bias {fan_out}")
        lines.append(" ".join(f"{v:.17g}" for v in b.data))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_floats(text: str, count: int, lineno: int) -> array:
    parts = text.split()
    if len(parts) != count:
        raise ParseError(f"line {lineno}: expected {count} values, got {len(parts)}")
    try:
        return array("d", (float(p) for p in parts))
    except ValueError as exc:
        raise ParseError(f"line {lineno}: {exc}") from None


def load_model(path: str) -> Model:
    """Inverse of :func:`save_model`; round-trips values exactly."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()

    def expect(idx: int, key: str) -> list[str]:
        if idx >= len(lines):
            raise ParseError(f"line {idx + 1}: unexpected end of file, wanted '{key}'")
        parts = lines[idx].split()
        if not parts or parts[0] != key:
            raise ParseError(f"line {idx + 1}: expected '{key}', got {lines[idx]!r}")
        return parts[1:]

    head = expect(0, _FORMAT_TAG)
    if head != [str(_FORMAT_VERSION)]:
        raise ParseError(f"line 1: unsupported format version {head}")
    try:
        input_dim = int(expect(1, "input_dim")[0])
        hidden = tuple(int(v) for v in expect(2, "hidden"))
        classes = int(expect(3, "classes")[0])
        seed = int(expect(4, "seed")[0])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed header: {exc}") from None
    spec = ModelSpec(input_dim, hidden, classes)

    weights, biases = [], []
    idx = 5
    dims = spec.layer_dims
    for li, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        decl = expect(idx, "layer")
        if decl[:3] != [str(li), "weight", str(fan_in)] or decl[3] != str(fan_out):
            raise ParseError(f"line {idx + 1}: bad weight declaration {lines[idx]!r}")
        idx += 1
        w = array("d")
        for _ in range(fan_in):
            w.extend(_parse_floats(lines[idx] if idx < len(lines) else "", fan_out, idx + 1))
            idx += 1
        weights.append(Tensor((fan_in, fan_out), w))
        decl = expect(idx, "layer")
        if decl != [str(li), "bias", str(fan_out)]:
            raise ParseError(f"line {idx + 1}: bad bias declaration {lines[idx]!r}")
        idx += 1
        biases.append(Tensor((fan_out,), _parse_floats(lines[idx] if idx < len(lines) else "", fan_out, idx + 1)))
        idx += 1
    return Model(spec, weights, biases, seed)


def copy_model(model: Model) -> Model:
    """Deep copy sharing no parameter storage."""
    return Model(
        model.spec,
        [w.detach() for w in model.weights],
        [b.detach() for b in model.biases],
        model.param_seed,
    )


def argmax_logits(logits: Tensor) -> array:
    """Per-row argmax with ties going to the lowest class index."""
    m, n = logits.shape
    out = array("q", bytes(8 * m))
    K.argmax_rows(logits.data, out, m, n)
    return out


def models_agree(a: Model, b: Model) -> bool:
    """True when spec and every parameter value match exactly."""
    if a.spec != b.spec:
        return False
    return all(
        pa.data.tobytes() == pb.data.tobytes()
        for pa, pb in zip(a.parameters(), b.parameters())
    )


def hand_set_params(model: Model, layers: Sequence[tuple[Sequence[Sequence[float]], Sequence[float]]]) -> None:
    """Overwrite parameters from nested lists (test and fixture helper)."""
    if len(layers) != len(model.weights):
        raise ContractError(f"expected {len(model.weights)} layers, got {len(layers)}")
    for (w_rows, b_vals), w, b in zip(layers, model.weights, model.biases):
        flat = [float(v) for row in w_rows for v in row]
        if len(flat) != w.size or len(b_vals) != b.size:
            raise DimensionError("hand-set parameter sizes do not match the model")
        w.data[:] = array("d", flat)
        b.data[:] = array("d", (float(v) for v in b_vals))
