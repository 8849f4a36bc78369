"""Dense float64 matrix kernel and the finite-difference gradient oracle.

Every numeric value in this package is carried by a plain 2-D
``numpy.ndarray`` of float64 (``Matrix`` below).  The kernel is
deliberately small: deterministic matmul, numerically stable row
softmax, a handful of entrywise maps, and an independent central
finite-difference gradient oracle used to verify every backward pass
in the package.

Masking convention: "minus infinity" is realized as the finite
sentinel ``NEG_INF`` (-1e9).  After adding a realistic score and
dividing by sqrt(d) for any d <= 1024, the argument of exp stays far
below the float64 underflow threshold (~-745), so masked positions
come out of softmax as exactly 0.0 while gradients never see a NaN.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Matrix = np.ndarray
Vector = np.ndarray

NEG_INF = -1.0e9

# Rows whose maximum falls at or below this level have no visible entry.
_DEGENERATE_LEVEL = NEG_INF / 2.0


class DimensionError(ValueError):
    """Operand shapes violate an operation's contract."""


class DegenerateRowError(ValueError):
    """A softmax row has no entry above the masking level."""


class OracleFailure(RuntimeError):
    """The finite-difference oracle hit a non-finite function value."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce nested sequences to a float64 2-D array, optionally checking shape."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise DimensionError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionError(f"expected {cols} cols, got {m.shape[1]}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check.

    Summation is delegated to numpy's dot, which uses a fixed
    accumulation order for a given build, so results are reproducible
    across runs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m: Matrix) -> Matrix:
    """Row-wise softmax with per-row max subtraction.

    Entries at the NEG_INF level underflow to exactly 0.0.  A row whose
    largest entry is itself at the masking level has no visible entry;
    that is reported as DegenerateRowError rather than silently
    producing NaN or a uniform row.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"softmax_rows needs a 2-D matrix, got shape {m.shape}")
    row_max = m.max(axis=1, keepdims=True)
    bad = np.nonzero(row_max[:, 0] <= _DEGENERATE_LEVEL)[0]
    if bad.size:
        raise DegenerateRowError(f"softmax row {int(bad[0])} has no entry above the mask level")
    e = np.exp(m - row_max)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(m) -> Matrix:
    """Entrywise logistic function, stable for large |x|; sigmoid(0) = 0.5 exactly."""
    x = np.asarray(m, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(m) -> Matrix:
    """Entrywise hyperbolic tangent; tanh(0) = 0 exactly."""
    return np.tanh(np.asarray(m, dtype=np.float64))


def add(a: Matrix, b: Matrix) -> Matrix:
    """Exact-shape entrywise sum.  No broadcasting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def scale(m: Matrix, c: float) -> Matrix:
    """Multiply every entry by the scalar c."""
    return np.asarray(m, dtype=np.float64) * float(c)


_ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "add": add, "scale": scale}


def elementwise(op: str, *operands) -> Matrix:
    """Dispatch an entrywise operation by name: tanh | sigmoid | add | scale."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


def finite_diff_grad(
    f: Callable[[Vector], float], x: Sequence[float], eps: float = 1e-5
) -> Vector:
    """Central-difference gradient of a scalar function of a flat vector.

    This is the package's independent oracle: it never shares code with
    any backward pass it is used to check.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside the supported range [1e-7, 1e-3]")
    x = np.asarray(x, dtype=np.float64).ravel().copy()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        hi = float(f(x))
        x[i] = orig - eps
        lo = float(f(x))
        x[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OracleFailure(f"non-finite value at coordinate {i}: f(+)={hi}, f(-)={lo}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad
