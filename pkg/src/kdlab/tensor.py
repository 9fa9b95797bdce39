"""Dense 2-D/1-D/scalar tensors with a define-by-run reverse-mode gradient tape.

A :class:`Tape` records operations while it is the active context; exiting the
context stops recording but the graph stays alive until :func:`backward`
consumes it. Tensors built outside any tape (or from untracked inputs) are
plain values, which is how detached supervision targets are produced. A tape
and its tensors belong to one thread; finished tensors are immutable and may
be shared freely.
"""

from __future__ import annotations

import math
import threading
from array import array
from typing import Callable, Iterable, Sequence

from kdlab import _kernels as K
from kdlab.errors import ContractError, DimensionError, NumericError

Shape = tuple[int, ...]

_tls = threading.local()


def _zeros(n: int) -> array:
    return array("d", bytes(8 * n))


def _active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tensor:
    """Flat row-major value buffer plus shape, optionally tied to a tape."""

    __slots__ = ("shape", "data", "node")

    def __init__(self, shape: Iterable[int], data: array, node: "Tape | None" = None):
        self.shape = tuple(shape)
        self.data = data
        self.node = node
        if _size(self.shape) != len(data):
            raise DimensionError(
                f"shape {self.shape} needs {_size(self.shape)} values, got {len(data)}"
            )

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "Tensor":
        flat = array("d")
        width = len(rows[0])
        for r in rows:
            if len(r) != width:
                raise DimensionError("ragged rows")
            flat.extend(float(v) for v in r)
        return cls((len(rows), width), flat)

    @classmethod
    def vector(cls, values: Sequence[float]) -> "Tensor":
        return cls((len(values),), array("d", (float(v) for v in values)))

    @classmethod
    def scalar(cls, value: float) -> "Tensor":
        return cls((), array("d", [float(value)]))

    @classmethod
    def zeros(cls, shape: Iterable[int]) -> "Tensor":
        shape = tuple(shape)
        return cls(shape, _zeros(_size(shape)))

    @property
    def size(self) -> int:
        return len(self.data)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return self.data[0]

    def detach(self) -> "Tensor":
        """Copy of the values with no tape attachment."""
        return Tensor(self.shape, array("d", self.data))

    def tolist(self) -> list:
        if len(self.shape) == 2:
            m, n = self.shape
            return [list(self.data[i * n : (i + 1) * n]) for i in range(m)]
        return list(self.data)

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, backend={K.BACKEND})"


def _size(shape: Shape) -> int:
    n = 1
    for s in shape:
        n *= s
    return n


class Tape:
    """Ordered operation record for one forward pass.

    Operations append in creation order, which is already topological; the
    backward sweep walks the list once in reverse, accumulating gradients.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[array], None]]] = []
        self._grads: dict[int, array] = {}
        self._keep: dict[int, Tensor] = {}
        self._params: list[Tensor] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = self._prev

    def watch(self, t: Tensor) -> None:
        """Register a leaf tensor (parameter) so ops through it record."""
        if id(t) not in self._keep:
            self._keep[id(t)] = t
            self._params.append(t)

    def tracks(self, t: Tensor) -> bool:
        return t.node is self or id(t) in self._keep

    def grad_buf(self, t: Tensor) -> array:
        g = self._grads.get(id(t))
        if g is None:
            g = _zeros(t.size)
            self._grads[id(t)] = g
            self._keep.setdefault(id(t), t)
        return g

    def record(self, out: Tensor, bwd: Callable[[array], None]) -> None:
        out.node = self
        self._keep[id(out)] = out
        self._records.append((out, bwd))

    def grad_of(self, t: Tensor) -> Tensor:
        """Gradient accumulated for ``t``; zeros if it was unreachable."""
        g = self._grads.get(id(t))
        return Tensor(t.shape, array("d", g) if g is not None else _zeros(t.size))


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse sweep from a scalar loss.

    Returns the gradient for every watched parameter tensor; parameters the
    loss does not reach get zero gradients.
    """
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.node
    if not isinstance(tape, Tape):
        raise ContractError("loss is not registered on any tape")
    if tape._consumed:
        raise ContractError("tape already consumed by a previous backward")
    tape._consumed = True
    tape.grad_buf(loss)[0] = 1.0
    for out, bwd in reversed(tape._records):
        g = tape._grads.get(id(out))
        if g is None:
            continue
        bwd(g)
    return {p: tape.grad_of(p) for p in tape._params}


def _recording_tape(*tensors: Tensor) -> "Tape | None":
    tape = _active_tape()
    if tape is None:
        return None
    for t in tensors:
        if tape.tracks(t):
            return tape
    return None


def _require_2d(t: Tensor, what: str) -> tuple[int, int]:
    if len(t.shape) != 2:
        raise DimensionError(f"{what} must be 2-D, got shape {t.shape}")
    return t.shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product a[m,k] . b[k,n]."""
    m, k = _require_2d(a, "matmul lhs")
    k2, n = _require_2d(b, "matmul rhs")
    if k != k2:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor((m, n), _zeros(m * n))
    K.matmul(a.data, b.data, out.data, m, k, n)
    tape = _recording_tape(a, b)
    if tape is not None:
        ta, tb = tape.tracks(a), tape.tracks(b)

        def bwd(g: array) -> None:
            if ta:
                K.matmul_grad_a(g, b.data, tape.grad_buf(a), m, k, n)
            if tb:
                K.matmul_grad_b(a.data, g, tape.grad_buf(b), m, k, n)

        tape.record(out, bwd)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast addition of a width-n bias to an [m,n] tensor."""
    m, n = _require_2d(x, "add_bias input")
    if b.shape != (n,):
        raise DimensionError(f"bias shape {b.shape} does not match width of {x.shape}")
    out = Tensor((m, n), _zeros(m * n))
    K.add_bias(x.data, b.data, out.data, m, n)
    tape = _recording_tape(x, b)
    if tape is not None:
        tx, tb = tape.tracks(x), tape.tracks(b)

        def bwd(g: array) -> None:
            if tx:
                K.acc(tape.grad_buf(x), g, m * n)
            if tb:
                K.colsum_acc(g, tape.grad_buf(b), m, n)

        tape.record(out, bwd)
    return out


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    out = Tensor(x.shape, _zeros(x.size))
    K.relu(x.data, out.data, x.size)
    tape = _recording_tape(x)
    if tape is not None:

        def bwd(g: array) -> None:
            K.relu_grad_acc(x.data, g, tape.grad_buf(x), x.size)

        tape.record(out, bwd)
    return out


def log_softmax_rows(x: Tensor) -> Tensor:
    """Per-row log-softmax of an [m,n] tensor, max-subtracted for stability."""
    m, n = _require_2d(x, "log_softmax input")
    if n < 1:
        raise DimensionError("log_softmax needs at least one column")
    out = Tensor((m, n), _zeros(m * n))
    if K.log_softmax(x.data, out.data, m, n):
        raise NumericError("log_softmax received non-finite input")
    tape = _recording_tape(x)
    if tape is not None:

        def bwd(g: array) -> None:
            K.log_softmax_grad_acc(out.data, g, tape.grad_buf(x), m, n)

        tape.record(out, bwd)
    return out


def scale(x: Tensor, s: float) -> Tensor:
    """Elementwise multiplication by a finite scalar."""
    s = float(s)
    if not math.isfinite(s):
        raise ContractError(f"scale factor must be finite, got {s!r}")
    out = Tensor(x.shape, _zeros(x.size))
    K.scale_v(x.data, s, out.data, x.size)
    tape = _recording_tape(x)
    if tape is not None:

        def bwd(g: array) -> None:
            K.axpy(tape.grad_buf(x), g, s, x.size)

        tape.record(out, bwd)
    return out


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of same-shape tensors."""
    if x.shape != y.shape:
        raise DimensionError(f"add shapes disagree: {x.shape} vs {y.shape}")
    out = Tensor(x.shape, _zeros(x.size))
    K.add_v(x.data, y.data, out.data, x.size)
    tape = _recording_tape(x, y)
    if tape is not None:
        tx, ty = tape.tracks(x), tape.tracks(y)

        def bwd(g: array) -> None:
            if tx:
                K.acc(tape.grad_buf(x), g, x.size)
            if ty:
                K.acc(tape.grad_buf(y), g, y.size)

        tape.record(out, bwd)
    return out


def add_const(x: Tensor, c: float) -> Tensor:
    """Elementwise addition of a finite constant."""
    c = float(c)
    if not math.isfinite(c):
        raise ContractError(f"constant must be finite, got {c!r}")
    out = Tensor(x.shape, _zeros(x.size))
    K.add_scalar_v(x.data, c, out.data, x.size)
    tape = _recording_tape(x)
    if tape is not None:

        def bwd(g: array) -> None:
            K.acc(tape.grad_buf(x), g, x.size)

        tape.record(out, bwd)
    return out


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if x.shape != y.shape:
        raise DimensionError(f"mul shapes disagree: {x.shape} vs {y.shape}")
    out = Tensor(x.shape, _zeros(x.size))
    K.mul_v(x.data, y.data, out.data, x.size)
    tape = _recording_tape(x, y)
    if tape is not None:
        tx, ty = tape.tracks(x), tape.tracks(y)

        def bwd(g: array) -> None:
            if tx:
                K.mul_acc(tape.grad_buf(x), g, y.data, x.size)
            if ty:
                K.mul_acc(tape.grad_buf(y), g, x.data, y.size)

        tape.record(out, bwd)
    return out


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor((), array("d", [K.vsum(x.data, x.size)]))
    tape = _recording_tape(x)
    if tape is not None:

        def bwd(g: array) -> None:
            K.acc_scalar(tape.grad_buf(x), g[0], x.size)

        tape.record(out, bwd)
    return out


def weighted_sum(x: Tensor, weights: array) -> Tensor:
    """Scalar Σ w∘x with constant weights; the gradient of x is the weights."""
    if len(weights) != x.size:
        raise DimensionError(f"weight count {len(weights)} does not match tensor size {x.size}")
    out = Tensor((), array("d", [K.vdot(x.data, weights, x.size)]))
    tape = _recording_tape(x)
    if tape is not None:

        def bwd(g: array) -> None:
            K.axpy(tape.grad_buf(x), weights, g[0], x.size)

        tape.record(out, bwd)
    return out


def neg_mean_gather(x: Tensor, labels: array) -> Tensor:
    """Scalar −mean over rows of x[row, labels[row]]."""
    m, n = _require_2d(x, "neg_mean_gather input")
    if len(labels) != m:
        raise DimensionError(f"{len(labels)} labels for {m} rows")
    out = Tensor((), array("d", [K.pick_neg_mean(x.data, labels, m, n)]))
    tape = _recording_tape(x)
    if tape is not None:

        def bwd(g: array) -> None:
            K.pick_grad_acc(tape.grad_buf(x), labels, -g[0] / m, m, n)

        tape.record(out, bwd)
    return out


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient oracle: (f(x+hεᵢ) − f(x−hεᵢ)) / 2h per coordinate."""
    if h <= 0:
        raise ContractError(f"step size must be positive, got {h}")
    out = _zeros(x.size)
    for i in range(x.size):
        up = array("d", x.data)
        up[i] += h
        fp = float(f(Tensor(x.shape, up)))
        dn = array("d", x.data)
        dn[i] -= h
        fm = float(f(Tensor(x.shape, dn)))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"objective not finite near coordinate {i}: {fp!r}, {fm!r}")
        out[i] = (fp - fm) / (2.0 * h)
    return Tensor(x.shape, out)
