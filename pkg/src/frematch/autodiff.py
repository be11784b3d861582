"""Minimal reverse-mode autodiff over dense fp64 numpy arrays.

Every operation records its operands and a gradient rule on the output
tensor.  backward() linearizes the reachable graph into a Tape (reverse
topological order) and pushes gradients through each rule exactly once.
First-order only: gradient rules compute with raw numpy, so nothing is
differentiable twice.

Broadcasting is deliberately restricted: the only allowed mismatch is a
1-d row vector against the columns of a 2-d matrix (add/sub), which is
what bias terms and per-column means need.  Everything else must match
shapes exactly and raises ShapeError otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested primitive."""


class Tensor:
    """Dense fp64 array plus the bookkeeping backward() needs.

    Leaves are created directly (requires_grad set by the caller);
    op outputs carry their operand tuple and a gradient rule.  The rule
    is a closure taking the output gradient and accumulating into the
    operands' .grad fields.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._grad_fn: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # small operator surface; everything routes through the primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


def _from_op(values: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _as2d(name: str, x: Tensor) -> np.ndarray:
    if x.data.ndim != 2:
        raise ShapeError(f"{name}: expected 2-d operand, got shape {x.data.shape}")
    return x.data


# ---------------------------------------------------------------------------
# primitives


def _binary_shapes(name: str, a: Tensor, b: Tensor) -> bool:
    """Validate add/sub operands.  Returns True when b is a row vector
    broadcast over the rows of a."""
    if a.data.shape == b.data.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        return True
    raise ShapeError(f"{name}: shapes {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _binary_shapes("add", a, b)
    out_vals = a.data + b.data

    def grad_fn(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0) if broadcast else g)

    return _from_op(out_vals, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _binary_shapes("sub", a, b)
    out_vals = a.data - b.data

    def grad_fn(g):
        _accum(a, g)
        _accum(b, -g.sum(axis=0) if broadcast else -g)

    return _from_op(out_vals, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product, equal shapes only."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} vs {b.data.shape}")
    out_vals = a.data * b.data

    def grad_fn(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _from_op(out_vals, (a, b), grad_fn)


def scalar_mul(x: Tensor, k: float) -> Tensor:
    k = float(k)

    def grad_fn(g):
        _accum(x, k * g)

    return _from_op(k * x.data, (x,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = _as2d("matmul", a), _as2d("matmul", b)
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: shapes {av.shape} vs {bv.shape}")
    out_vals = av @ bv

    def grad_fn(g):
        _accum(a, g @ bv.T)
        _accum(b, av.T @ g)

    return _from_op(out_vals, (a, b), grad_fn)


def transpose(x: Tensor) -> Tensor:
    xv = _as2d("transpose", x)

    def grad_fn(g):
        _accum(x, np.ascontiguousarray(g.T))

    return _from_op(np.ascontiguousarray(xv.T), (x,), grad_fn)


def mean(x: Tensor, axis: int) -> Tensor:
    """Mean over rows (axis=0, per-column result) or columns (axis=1)."""
    xv = _as2d("mean", x)
    if axis not in (0, 1):
        raise ShapeError(f"mean: axis must be 0 or 1, got {axis}")
    n = xv.shape[axis]

    def grad_fn(g):
        if axis == 0:
            _accum(x, np.broadcast_to(g / n, xv.shape).copy())
        else:
            _accum(x, np.broadcast_to(g[:, None] / n, xv.shape).copy())

    return _from_op(xv.mean(axis=axis), (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    def grad_fn(g):
        _accum(x, g * (x.data > 0.0))

    return _from_op(np.maximum(x.data, 0.0), (x,), grad_fn)


def _softmax_vals(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax, max-shifted for stability."""
    xv = _as2d("softmax", x)
    s = _softmax_vals(xv)

    def grad_fn(g):
        # ds_ij/dx_ik = s_ij (delta_jk - s_ik)
        _accum(x, s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _from_op(s, (x,), grad_fn)


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log softmax via the log-sum-exp shift."""
    xv = _as2d("log_softmax", x)
    shifted = xv - xv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_vals = shifted - lse
    s = np.exp(out_vals)

    def grad_fn(g):
        _accum(x, g - s * g.sum(axis=1, keepdims=True))

    return _from_op(out_vals, (x,), grad_fn)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise ValueError("log: non-positive input")

    def grad_fn(g):
        _accum(x, g / x.data)

    return _from_op(np.log(x.data), (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    # stable in both tails
    s = np.where(x.data >= 0.0,
                 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def grad_fn(g):
        _accum(x, g * s * (1.0 - s))

    return _from_op(s, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    def grad_fn(g):
        _accum(x, np.full_like(x.data, float(g)))

    return _from_op(x.data.sum(), (x,), grad_fn)


def mean_of_squares(x: Tensor) -> Tensor:
    """Scalar mean of the squared entries (the matrix penalty l_m)."""
    size = x.data.size

    def grad_fn(g):
        _accum(x, (2.0 / size) * float(g) * x.data)

    return _from_op(np.mean(x.data * x.data), (x,), grad_fn)


def diag(v: Tensor) -> Tensor:
    """Embed a vector as a diagonal matrix."""
    if v.data.ndim != 1:
        raise ShapeError(f"diag: expected 1-d operand, got shape {v.data.shape}")

    def grad_fn(g):
        _accum(v, np.diagonal(g).copy())

    return _from_op(np.diag(v.data), (v,), grad_fn)


def argmax(x: Tensor) -> np.ndarray:
    """Row-wise argmax, lowest index on ties.  Detached by construction."""
    xv = _as2d("argmax", x)
    return np.argmax(xv, axis=1)


def detach(x: Tensor) -> Tensor:
    return x.detach()


# ---------------------------------------------------------------------------
# reverse pass


class Tape:
    """Reverse-pass schedule: the op outputs reachable from a root, in
    topological order (every node's operands precede it)."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                nodes.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(nodes)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad for every reachable leaf
    with requires_grad.  The root must be a scalar."""
    if root.data.shape != ():
        raise ShapeError(f"backward: root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    tape = Tape.from_root(root)
    root.grad = np.ones(())
    for t in reversed(tape.nodes):
        if t._grad_fn is not None and t.grad is not None:
            t._grad_fn(t.grad)


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_input: list = field(default_factory=list)
    passed: bool = False


def grad_check(loss_fn, inputs: Sequence[Tensor], step: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of a scalar loss against central
    differences, one perturbed element at a time.

    Relative error uses max(|analytic|, |numeric|, 1e-6) as the
    denominator so exactly-zero gradients compare at a sane scale.
    The loss must be deterministic: it is evaluated twice up front and
    any bitwise disagreement is rejected.
    """
    if not (1e-7 <= step <= 1e-3):
        raise ValueError(f"grad_check: step {step} outside [1e-7, 1e-3]")

    first = loss_fn(*inputs)
    second = loss_fn(*inputs)
    if first.data.shape != () or second.data.shape != ():
        raise ShapeError("grad_check: loss_fn must return a scalar")
    if first.data.tobytes() != second.data.tobytes():
        raise ValueError("grad_check: loss_fn is not deterministic across calls")

    backward(first)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    def value() -> float:
        return float(loss_fn(*inputs).data)

    per_input = []
    for t, a in zip(inputs, analytic):
        worst = 0.0
        if t.requires_grad:
            flat = t.data.reshape(-1)
            aflat = a.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                up = value()
                flat[i] = keep - step
                down = value()
                flat[i] = keep
                numeric = (up - down) / (2.0 * step)
                denom = max(abs(aflat[i]), abs(numeric), 1e-6)
                worst = max(worst, abs(aflat[i] - numeric) / denom)
        per_input.append(worst)

    worst_overall = max(per_input) if per_input else 0.0
    return GradCheckReport(max_rel_err=worst_overall, per_input=per_input,
                           passed=worst_overall <= tol)
