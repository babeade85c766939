"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every primitive below computes its forward value eagerly and, when a
:class:`Tape` is active and some input requires a gradient, appends a
record holding its inputs, its output and a backward rule. Tapes are
rebuilt per forward pass; ``backward`` walks one tape in reverse.

Broadcasting is numpy's; backward rules sum gradients back to each
input's shape.
"""

from __future__ import annotations

import contextvars
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from utils.error_handler import ArgumentError, ContractError, DimensionError
from utils.logger import get_logger

logger = get_logger('tensor')

_active_tape: contextvars.ContextVar[Tape | None] = contextvars.ContextVar(
    'active_tape', default=None
)

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """An n-dimensional float64 array that can take part in a tape.

    ``data`` is read-only; optimizers rebind it instead of writing into it.
    ``grad`` accumulates across ``backward`` calls until ``zero_grad``.
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'name')

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        array = np.array(data, dtype=np.float64)
        array.flags.writeable = False
        self.data = array
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        array.flags.writeable = False
        out.data = array
        out.grad = None
        out.requires_grad = requires_grad
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Writable copy of the data."""
        return np.array(self.data)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f'item() needs a single element, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def assign(self, array: np.ndarray) -> None:
        """Rebind the data to a new array of the same shape."""
        array = np.asarray(array, dtype=np.float64)
        if array.shape != self.data.shape:
            raise DimensionError('assign', self.data.shape, array.shape)
        array = np.array(array)
        array.flags.writeable = False
        self.data = array

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f' name={self.name!r}' if self.name else ''
        return f'Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})'

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, _as_tensor(other))

    def __radd__(self, other) -> Tensor:
        return add(_as_tensor(other), self)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, _as_tensor(other))

    def __mul__(self, other) -> Tensor:
        return mul(self, _as_tensor(other))

    def __rmul__(self, other) -> Tensor:
        return mul(_as_tensor(other), self)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


@dataclass(frozen=True)
class TapeEntry:
    """One executed primitive."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: BackwardFn


class Tape:
    """Ordered record of executed primitives; usable as a context manager.

    Entries are appended in execution order, so every entry's inputs were
    produced by earlier entries or are leaves.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._outputs: set[int] = set()
        self._token: contextvars.Token | None = None

    def __enter__(self) -> Tape:
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._outputs

    def record(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        backward_fn: BackwardFn,
    ) -> None:
        self.entries.append(TapeEntry(op, inputs, output, backward_fn))
        self._outputs.add(id(output))

    def ops(self) -> list[str]:
        return [entry.op for entry in self.entries]


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    """Create a Tensor from anything numpy can turn into a float64 array."""
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(
    op: str, inputs: tuple[Tensor, ...], data: np.ndarray, backward_fn: BackwardFn
) -> Tensor:
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad)
    tape = _active_tape.get()
    if tape is not None and requires_grad:
        tape.record(op, inputs, out, backward_fn)
    return out


def custom_op(
    op: str, inputs: Sequence[Tensor], data: np.ndarray, backward_fn: BackwardFn
) -> Tensor:
    """Register a fused primitive computed outside this module.

    ``backward_fn`` maps the upstream gradient to one gradient (or None)
    per input, in order.
    """
    return _record(op, tuple(inputs), data, backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast('add', a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record('add', (a, b), a.data + b.data, backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast('sub', a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _record('sub', (a, b), a.data - b.data, backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast('mul', a, b)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record('mul', (a, b), a.data * b.data, backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""

    def backward_fn(g):
        return (g * factor,)

    return _record('scale', (x,), x.data * factor, backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product a[..., n, k] @ b[..., k, m]."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError('matmul', a.shape, b.shape)

    def backward_fn(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _record('matmul', (a, b), a.data @ b.data, backward_fn)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x·w + b over the last axis of x, broadcast over leading dims."""
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise DimensionError('linear', x.shape, w.shape)
    if b.shape != (w.shape[1],):
        raise DimensionError('linear', w.shape, b.shape)
    in_dim, out_dim = w.shape

    def backward_fn(g):
        flat_g = g.reshape(-1, out_dim)
        flat_x = x.data.reshape(-1, in_dim)
        grad_x = (g @ w.data.T).reshape(x.shape)
        return grad_x, flat_x.T @ flat_g, flat_g.sum(axis=0)

    return _record('linear', (x, w, b), x.data @ w.data + b.data, backward_fn)


def relu(x: Tensor) -> Tensor:
    active = x.data > 0

    def backward_fn(g):
        return (g * active,)

    return _record('relu', (x,), np.where(active, x.data, 0.0), backward_fn)


def softplus(x: Tensor) -> Tensor:
    """ln(1 + e^x), evaluated without overflow."""

    def backward_fn(g):
        return (g * expit(x.data),)

    return _record('softplus', (x,), np.logaddexp(0.0, x.data), backward_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with the row maximum subtracted first."""
    if not -x.ndim <= axis < x.ndim:
        raise ArgumentError(f'softmax axis {axis} out of range for shape {x.shape}')
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record('softmax', (x,), out, backward_fn)


def layer_norm(
    x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5
) -> Tensor:
    """Standardize the last axis (population variance, +eps), then gain/bias."""
    d = x.shape[-1]
    if gain.shape != (d,):
        raise DimensionError('layer_norm', x.shape, gain.shape)
    if bias.shape != (d,):
        raise DimensionError('layer_norm', x.shape, bias.shape)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def backward_fn(g):
        g_normed = g * gain.data
        grad_x = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        grad_gain = (flat_g * normed.reshape(-1, d)).sum(axis=0)
        return grad_x, grad_gain, flat_g.sum(axis=0)

    return _record(
        'layer_norm', (x, gain, bias), normed * gain.data + bias.data, backward_fn
    )


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _record('reshape', (x,), x.data.reshape(shape), backward_fn)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward_fn(g):
        return (g.transpose(inverse),)

    return _record('transpose', (x,), x.data.transpose(axes), backward_fn)


def masked_fill(x: Tensor, keep: np.ndarray, fill: float) -> Tensor:
    """Replace entries where ``keep`` is False with a constant."""
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), x.shape)

    def backward_fn(g):
        return (np.where(keep, g, 0.0),)

    return _record('masked_fill', (x,), np.where(keep, x.data, fill), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    def backward_fn(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record('sum', (x,), np.asarray(x.data.sum()), backward_fn)


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def backward_fn(g):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _record('mean', (x,), np.asarray(x.data.mean()), backward_fn)


def backward(loss: Tensor, tape: Tape) -> dict[str, np.ndarray]:
    """Accumulate reverse-mode gradients of ``loss`` into every tensor on ``tape``.

    Returns the gradients of named leaf tensors keyed by name.
    """
    if loss.size != 1:
        raise ContractError(f'backward needs a scalar loss, got shape {loss.shape}')
    if loss not in tape:
        raise ContractError('loss was not produced on the given tape')

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for entry in reversed(tape.entries):
        grad = pending.pop(id(entry.output), None)
        if grad is None:
            continue
        entry.output.grad = grad if entry.output.grad is None else entry.output.grad + grad
        for inp, inp_grad in zip(
            entry.inputs, entry.backward_fn(grad), strict=True
        ):
            if inp_grad is None or not inp.requires_grad:
                continue
            key = id(inp)
            pending[key] = inp_grad if key not in pending else pending[key] + inp_grad
            if inp not in tape:
                leaves[key] = inp

    named: dict[str, np.ndarray] = {}
    for key, leaf in leaves.items():
        grad = pending.pop(key)
        leaf.grad = grad if leaf.grad is None else leaf.grad + grad
        if leaf.name is not None:
            named[leaf.name] = leaf.grad
    return named


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``f`` recomputes a scalar loss from the current ``params`` data. The
    relative error per element is |a - c| / max(|a| + |c|, floor). The floor
    keeps elements whose gradient is below central-difference roundoff
    (about eps * |loss| / h) from dominating the result.
    """
    if h <= 0:
        raise ArgumentError(f'finite difference step must be positive, got {h}')
    if floor <= 0:
        raise ArgumentError(f'relative error floor must be positive, got {floor}')

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    analytic = [
        p.grad if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    worst = 0.0
    for p, grad in zip(params, analytic, strict=True):
        original = p.numpy()
        flat = original.reshape(-1)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + h
            p.assign(bumped.reshape(original.shape))
            upper = f().item()
            bumped[i] = flat[i] - h
            p.assign(bumped.reshape(original.shape))
            lower = f().item()
            central = (upper - lower) / (2.0 * h)
            a = float(grad.reshape(-1)[i])
            err = abs(a - central) / max(abs(a) + abs(central), floor)
            worst = max(worst, err)
        p.assign(original)
    logger.debug(f'finite difference check over {len(params)} tensors: {worst:.3e}')
    return worst
