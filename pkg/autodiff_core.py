"""Dense float64 primitives with explicit backward rules, plus a finite-difference checker.

Every primitive returns ``(value, backward)`` where ``backward(grad_out)`` gives
the gradients for the primitive's tensor inputs, in argument order. Values
are plain numpy arrays of rank <= 3; NaN/Inf in any output raises
``NumericFaultError``.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from errors import NumericFaultError, ShapeError

logger = logging.getLogger("autodiff_core")

Backward = Callable[[np.ndarray], Tuple[np.ndarray, ...]]
MAX_RANK = 3


def as_tensor(x, op: str = "tensor") -> np.ndarray:
    t = np.asarray(x, dtype=np.float64)
    if t.ndim > MAX_RANK:
        raise ShapeError(op, t.shape)
    return t


def check_finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericFaultError(f"{op} produced a non-finite value")
    return x


def matmul(a, b) -> Tuple[np.ndarray, Backward]:
    a, b = as_tensor(a, "matmul"), as_tensor(b, "matmul")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = check_finite(a @ b, "matmul")

    def backward(g):
        return g @ b.T, a.T @ g

    return out, backward


def add(a, b) -> Tuple[np.ndarray, Backward]:
    """a + b, where b either matches a or matches a's trailing axes (broadcast over the leading axis)."""
    a, b = as_tensor(a, "add"), as_tensor(b, "add")
    if a.shape == b.shape:
        broadcast = False
    elif a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
        broadcast = True
    else:
        raise ShapeError("add", a.shape, b.shape)
    out = check_finite(a + b, "add")

    def backward(g):
        return g, (g.sum(axis=0) if broadcast else g)

    return out, backward


def multiply(a, b) -> Tuple[np.ndarray, Backward]:
    """Hadamard product."""
    a, b = as_tensor(a, "multiply"), as_tensor(b, "multiply")
    if a.shape != b.shape:
        raise ShapeError("multiply", a.shape, b.shape)
    out = check_finite(a * b, "multiply")

    def backward(g):
        return g * b, g * a

    return out, backward


def scale(a, factor: float) -> Tuple[np.ndarray, Backward]:
    a = as_tensor(a, "scale")
    out = check_finite(a * factor, "scale")

    def backward(g):
        return (g * factor,)

    return out, backward


def sigmoid(x) -> Tuple[np.ndarray, Backward]:
    x = as_tensor(x, "sigmoid")
    # exp of a non-positive argument only, so no overflow for large |x|
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    check_finite(out, "sigmoid")

    def backward(g):
        return (g * out * (1.0 - out),)

    return out, backward


def tanh(x) -> Tuple[np.ndarray, Backward]:
    x = as_tensor(x, "tanh")
    out = check_finite(np.tanh(x), "tanh")

    def backward(g):
        return (g * (1.0 - out * out),)

    return out, backward


def relu(x) -> Tuple[np.ndarray, Backward]:
    x = as_tensor(x, "relu")
    check_finite(x, "relu")
    active = x > 0
    out = np.where(active, x, 0.0)

    def backward(g):
        return (g * active,)

    return out, backward


def softmax(x) -> Tuple[np.ndarray, Backward]:
    """Softmax over the last axis, max-subtracted."""
    x = as_tensor(x, "softmax")
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("softmax", x.shape)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = check_finite(e / e.sum(axis=-1, keepdims=True), "softmax")

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return out, backward


def max_over_axis(x, axis: int) -> Tuple[np.ndarray, np.ndarray, Backward]:
    """Maximum along ``axis``; returns (values, argmax, backward).

    Ties resolve to the lowest index and only that position receives gradient.
    """
    x = as_tensor(x, "max_over_axis")
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError("max_over_axis", x.shape)
    check_finite(x, "max_over_axis")
    argmax = np.argmax(x, axis=axis)
    values = np.take_along_axis(x, np.expand_dims(argmax, axis), axis=axis).squeeze(axis)

    def backward(g):
        dx = np.zeros_like(x)
        np.put_along_axis(dx, np.expand_dims(argmax, axis), np.expand_dims(g, axis), axis=axis)
        return (dx,)

    return values, argmax, backward


def concat(tensors: Sequence, axis: int = -1) -> Tuple[np.ndarray, Backward]:
    tensors = [as_tensor(t, "concat") for t in tensors]
    try:
        out = np.concatenate(tensors, axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return out, backward


def slice_rows(x, start: int, stop: int) -> Tuple[np.ndarray, Backward]:
    """x[start:stop] along the leading axis."""
    x = as_tensor(x, "slice")
    if x.ndim == 0 or not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError("slice", x.shape, (start, stop))
    out = x[start:stop].copy()

    def backward(g):
        dx = np.zeros_like(x)
        dx[start:stop] = g
        return (dx,)

    return out, backward


def transpose(x) -> Tuple[np.ndarray, Backward]:
    x = as_tensor(x, "transpose")
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)

    def backward(g):
        return (g.T,)

    return x.T.copy(), backward


def reshape(x, shape) -> Tuple[np.ndarray, Backward]:
    x = as_tensor(x, "reshape")
    try:
        out = x.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    if out.ndim > MAX_RANK:
        raise ShapeError("reshape", x.shape, shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return out, backward


def windows(x, width: int) -> Tuple[np.ndarray, Backward]:
    """Stack every contiguous ``width``-row window of a T x d matrix as one
    flattened row: (T - width + 1) x (width * d)."""
    x = as_tensor(x, "windows")
    if x.ndim != 2 or width < 1 or x.shape[0] < width:
        raise ShapeError("windows", x.shape, (width,))
    T, d = x.shape
    L = T - width + 1
    view = np.lib.stride_tricks.sliding_window_view(x, (width, d))[:, 0]
    out = view.reshape(L, width * d).copy()

    def backward(g):
        dx = np.zeros_like(x)
        g = g.reshape(L, width, d)
        # fixed loop order keeps the summation order reproducible
        for offset in range(width):
            dx[offset:offset + L] += g[:, offset, :]
        return (dx,)

    return out, backward


def reduce_sum(x) -> Tuple[np.ndarray, Backward]:
    x = as_tensor(x, "sum")
    out = check_finite(np.asarray(x.sum()), "sum")

    def backward(g):
        return (np.full_like(x, float(g)),)

    return out, backward


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    worst_index: Tuple[int, ...]
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    params: List[ParamCheck]
    tol: float

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def worst(self):
        return max(self.params, key=lambda p: p.max_rel_error, default=None)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def grad_check(f: Callable[[Dict[str, np.ndarray]], Tuple[float, Dict[str, np.ndarray]]],
               point: Dict[str, np.ndarray], eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare ``f``'s analytic gradients with central differences.

    ``f(point)`` returns ``(scalar, {name: gradient})`` and must be deterministic.
    Each coordinate of each named tensor is nudged by +/-eps; relative error is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    point = {name: as_tensor(value).copy() for name, value in point.items()}
    _, analytic = f(point)

    checks = []
    for name, value in point.items():
        numeric = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + eps
            plus, _ = f(point)
            value[index] = original - eps
            minus, _ = f(point)
            value[index] = original
            numeric[index] = (float(plus) - float(minus)) / (2.0 * eps)
        grad = np.broadcast_to(as_tensor(analytic[name]), value.shape)
        errors = relative_error(grad, numeric)
        if errors.size:
            worst = np.unravel_index(int(np.argmax(errors)), errors.shape)
            checks.append(ParamCheck(name, float(errors[worst]), tuple(int(i) for i in worst),
                                     float(grad[worst]), float(numeric[worst])))
        else:
            checks.append(ParamCheck(name, 0.0, (), 0.0, 0.0))
    report = GradCheckReport(checks, tol)
    logger.debug(f"grad_check: max relative error {report.max_rel_error:.3e} (tol {tol})")
    return report
