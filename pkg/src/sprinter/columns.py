"""Column sources: the design-matrix abstraction behind every lasso fit.

A source exposes raw columns, their sample moments (divisor n), and a
bulk gradient ``n^{-1} X' resid``.  Two implementations:

* :class:`DenseColumnSource` - an explicit matrix with named columns.
* :class:`PairColumnSource` - p main effects followed by all q = p(p+1)/2
  interaction columns in tau order, with products built on the fly and
  gradients computed through the blocked triangle kernel, so the n x q
  matrix is never materialized.

Column naming convention used everywhere in the package: main effect j
is ``"Xj"`` and interaction (j, k) is ``"Xj*Xk"`` with 1-based j <= k.
"""

from __future__ import annotations

import numpy as np

from .core import TauMap
from .errors import InputError, SchemaError
from .screen import pair_moment_arrays, pair_weighted_moments

DEFAULT_BLOCK = 512


def main_name(j: int) -> str:
    return f"X{j}"


def pair_name(j: int, k: int) -> str:
    if j > k:
        j, k = k, j
    return f"X{j}*X{k}"


def parse_column_name(name: str) -> tuple[int, ...]:
    """Return (j,) for a main effect or (j, k) for an interaction."""
    parts = name.split("*")
    try:
        idx = tuple(int(part[1:]) for part in parts if part.startswith("X"))
        if len(idx) != len(parts) or not parts or any(i < 1 for i in idx):
            raise ValueError
    except ValueError:
        raise SchemaError(f"cannot parse column id {name!r}") from None
    if len(idx) == 1:
        return idx
    if len(idx) == 2:
        j, k = idx
        return (j, k) if j <= k else (k, j)
    raise SchemaError(f"cannot parse column id {name!r}")


def build_named_columns(X: np.ndarray, names) -> np.ndarray:
    """Materialize the named columns against a main-effect matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("X must be an n x p matrix")
    p = X.shape[1]
    cols = []
    for name in names:
        idx = parse_column_name(name)
        if max(idx) > p:
            raise SchemaError(
                f"column id {name!r} needs main effect {max(idx)} "
                f"but the data has only p={p}"
            )
        if len(idx) == 1:
            cols.append(X[:, idx[0] - 1])
        else:
            cols.append(X[:, idx[0] - 1] * X[:, idx[1] - 1])
    if not cols:
        return np.empty((X.shape[0], 0))
    return np.column_stack(cols)


class DenseColumnSource:
    """An explicit n x K matrix with one name per column."""

    def __init__(self, matrix, names):
        M = np.asarray(matrix, dtype=np.float64)
        if M.ndim != 2:
            raise InputError("column matrix must be 2-d")
        if not np.all(np.isfinite(M)):
            raise InputError("non-finite value in design columns")
        names = list(names)
        if len(names) != M.shape[1]:
            raise InputError("one name per column required")
        self._M = M
        self._names = names
        self.means = M.mean(axis=0)
        self.sds = M.std(axis=0)  # divisor n

    @property
    def n_rows(self) -> int:
        return self._M.shape[0]

    @property
    def n_cols(self) -> int:
        return self._M.shape[1]

    def name(self, i: int) -> str:
        return self._names[i]

    def raw_column(self, i: int) -> np.ndarray:
        return self._M[:, i]

    def raw_gradient(self, resid: np.ndarray) -> np.ndarray:
        return self._M.T @ resid / self._M.shape[0]

    def restrict_rows(self, rows) -> "DenseColumnSource":
        return DenseColumnSource(self._M[rows], self._names)


class PairColumnSource:
    """p main effects plus all q pairwise interactions, never materialized.

    Moment arrays for the q interaction columns are computed once per
    instance with the blocked kernel (O(n p^2) time, O(q) extra values,
    which the all-pairs solver needs anyway for its coefficient vector).
    """

    def __init__(self, X, block: int = DEFAULT_BLOCK):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise InputError("X must be an n x p matrix")
        if not np.all(np.isfinite(X)):
            raise InputError("non-finite value in X")
        self._X = X
        self._block = block
        self._tm = TauMap(X.shape[1])
        pair_mean, pair_ez2 = pair_moment_arrays(X, block=block)
        pair_var = np.maximum(pair_ez2 - pair_mean * pair_mean, 0.0)
        self.means = np.concatenate([X.mean(axis=0), pair_mean])
        self.sds = np.concatenate([X.std(axis=0), np.sqrt(pair_var)])

    @property
    def n_rows(self) -> int:
        return self._X.shape[0]

    @property
    def n_cols(self) -> int:
        return self._X.shape[1] + self._tm.q

    @property
    def p(self) -> int:
        return self._X.shape[1]

    def name(self, i: int) -> str:
        if i < self.p:
            return main_name(i + 1)
        return pair_name(*self._tm.tau_inverse(i - self.p + 1))

    def raw_column(self, i: int) -> np.ndarray:
        if i < self.p:
            return self._X[:, i]
        j, k = self._tm.tau_inverse(i - self.p + 1)
        return self._X[:, j - 1] * self._X[:, k - 1]

    def raw_gradient(self, resid: np.ndarray) -> np.ndarray:
        n = self._X.shape[0]
        g_main = self._X.T @ resid / n
        g_pairs = pair_weighted_moments(self._X, resid, block=self._block)
        return np.concatenate([g_main, g_pairs])

    def restrict_rows(self, rows) -> "PairColumnSource":
        return PairColumnSource(self._X[rows], block=self._block)
