"""Dense tensor with recorded reverse-mode differentiation.

Every differentiable operation is a :class:`DualOp`: a forward function that
returns ``(output, saved)`` and a vector-Jacobian product that maps
``(saved, upstream)`` to one gradient per input.  :func:`apply` runs the
forward pass and records the node; :meth:`Tensor.backward` replays the
recorded nodes in reverse topological order.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Any, BinaryIO, Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


@dataclass(frozen=True)
class DualOp:
    """A forward function paired with its vector-Jacobian product.

    ``forward(*inputs, **attrs) -> (out, saved)``
    ``vjp(saved, grad) -> tuple`` with one entry per input (``None`` allowed
    for inputs that are not differentiable, e.g. integer labels).
    """

    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    vjp: Callable[[Any, np.ndarray], tuple]

    def __call__(self, *inputs, **attrs) -> "Tensor":
        return apply(self, *inputs, **attrs)


class _Node:
    __slots__ = ("op", "saved", "parents")

    def __init__(self, op: DualOp, saved: Any, parents: tuple):
        self.op = op
        self.saved = saved
        self.parents = parents


class Tensor:
    """N-dimensional float array that can take part in a recorded graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "tag", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 tag: str = "base"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.tag = tag
        self._node: _Node | None = None

    # -- metadata -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.scale(_lift(other, self.dtype), -1.0))

    def __rsub__(self, other):
        from . import ops
        return ops.add(_lift(other, self.dtype), ops.scale(self, -1.0))

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape=tuple(shape))

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes=tuple(axes))

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_mean(self, axis=axis, keepdims=keepdims)

    # -- differentiation ----------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) * grad into ``.grad`` of every leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"upstream gradient shape {grad.shape} != output shape {self.shape}")

        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._node is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            parent_grads = t._node.op.vjp(t._node.saved, g)
            for parent, pg in zip(t._node.parents, parent_grads):
                if pg is None or not isinstance(parent, Tensor) or not _needs_grad(parent):
                    continue
                if pg.shape != parent.shape:
                    raise RuntimeError(
                        f"{t._node.op.name}: vjp produced shape {pg.shape} for input {parent.shape}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _lift(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._node is not None


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if isinstance(p, Tensor) and id(p) not in seen and _needs_grad(p):
                    stack.append((p, False))
    return order


def apply(op: DualOp, *inputs, **attrs) -> Tensor:
    """Run ``op`` forward on tensors (or arrays) and record it for backward."""
    arrays = [x.data if isinstance(x, Tensor) else x for x in inputs]
    out, saved = op.forward(*arrays, **attrs)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op.name} produced non-finite values")
    result = Tensor(out)
    if any(isinstance(x, Tensor) and _needs_grad(x) for x in inputs):
        result._node = _Node(op, saved, tuple(inputs))
    return result


def as_dual(fn: Callable[..., Tensor], name: str = "graph") -> DualOp:
    """Wrap a function of tensors into a DualOp whose vjp is the recorded graph.

    Lets :func:`cgc.gradcheck.gradcheck` treat a whole composite (for example
    a CGC layer) as one operation.
    """

    def forward(*arrays, **attrs):
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        out = fn(*leaves, **attrs)
        return out.data, (leaves, out)

    def vjp(saved, grad):
        leaves, out = saved
        for leaf in leaves:
            leaf.grad = None
        out.backward(grad)
        return tuple(np.zeros_like(l.data) if l.grad is None else l.grad for l in leaves)

    return DualOp(name, forward, vjp)


# -- serialization ------------------------------------------------------------

def write_tensor(fh: BinaryIO, array: np.ndarray) -> None:
    """Write ``shape: d0 d1 ...`` then the values as little-endian float64."""
    array = np.asarray(array)
    fh.write(("shape:" + "".join(f" {d}" for d in array.shape) + "\n").encode("ascii"))
    fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    header = fh.readline().decode("ascii").rstrip("\n")
    if not header.startswith("shape:"):
        raise ValueError(f"expected a 'shape:' header line, got {header!r}")
    shape = tuple(int(tok) for tok in header[len("shape:"):].split())
    count = int(np.prod(shape, dtype=np.int64))
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError(f"truncated tensor payload: wanted {8 * count} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def dumps_tensor(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()


def loads_tensor(blob: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(blob))


def save_sections(path, sections: Iterable[tuple[str, np.ndarray]],
                  header: dict[str, Any] | None = None) -> None:
    """Checkpoint layout: ``key=value`` config lines, then named tensor sections.

    Each section is a ``tensor: NAME`` line followed by one serialized tensor.
    """
    with open(path, "wb") as fh:
        for key, value in (header or {}).items():
            line = f"{key}={value}"
            if "\n" in line:
                raise ValueError(f"header entry {key!r} spans lines")
            fh.write((line + "\n").encode("utf-8"))
        for name, array in sections:
            fh.write(f"tensor: {name}\n".encode("utf-8"))
            write_tensor(fh, array)


def load_sections(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    header: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        while True:
            line = fh.readline()
            if not line:
                break
            text = line.decode("utf-8").rstrip("\n")
            if text.startswith("tensor: "):
                tensors[text[len("tensor: "):]] = read_tensor(fh)
            elif "=" in text:
                key, value = text.split("=", 1)
                header[key] = value
            elif text:
                raise ValueError(f"unrecognised checkpoint line {text!r}")
    return header, tensors


def unbroadcast(grad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad
