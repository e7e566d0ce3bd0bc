"""Index arithmetic, dataset container, and on-the-fly interaction columns.

Pairs of features are identified by 1-based indices ``(j, k)`` with
``j <= k``, and every interaction column has a scalar id ``ell`` in
``1..q`` where ``q = p*(p+1)/2``.  The ordering is lexicographic:
``(1,1) -> 1, (1,2) -> 2, ..., (p,p) -> q``, i.e. squares are ordinary
pairs with ``j == k``.  All sample statistics in this package use the
divisor ``n`` (not ``n-1``) so that correlation values are reproducible
bit-for-bit across modules.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class TauMap:
    """Bijection between ordered pairs (j, k), j <= k, and ids 1..q.

    The closed form gives O(1) evaluation in both directions:
    ``ell = (j-1)*p - (j-1)*(j-2)/2 + (k-j+1)``.
    """

    p: int
    q: int = field(init=False)

    def __post_init__(self):
        if self.p < 1:
            raise IndexError(f"p must be >= 1, got {self.p}")
        object.__setattr__(self, "q", self.p * (self.p + 1) // 2)

    def tau(self, j: int, k: int) -> int:
        """Return the 1-based interaction id of the unordered pair (j, k)."""
        if j > k:
            j, k = k, j
        if not (1 <= j <= k <= self.p):
            raise IndexError(f"pair ({j}, {k}) out of range for p={self.p}")
        return (j - 1) * self.p - (j - 1) * (j - 2) // 2 + (k - j + 1)

    def tau_inverse(self, ell: int) -> tuple[int, int]:
        """Return the pair (j, k), j <= k, with ``tau(j, k) == ell``."""
        if not (1 <= ell <= self.q):
            raise IndexError(f"id {ell} out of range for q={self.q}")
        p = self.p
        # row j is the smallest j with cum(j) >= ell, cum(j) = j*p - j*(j-1)/2
        j = int((2 * p + 1 - math.sqrt((2 * p + 1) ** 2 - 8 * ell)) // 2)
        j = max(j, 1)
        while j * p - j * (j - 1) // 2 < ell:
            j += 1
        while j > 1 and (j - 1) * p - (j - 1) * (j - 2) // 2 >= ell:
            j -= 1
        prev = (j - 1) * p - (j - 1) * (j - 2) // 2
        k = j + (ell - prev) - 1
        return j, k


def tau(p: int, j: int, k: int) -> int:
    """Functional form of :meth:`TauMap.tau`."""
    return TauMap(p).tau(j, k)


def tau_inverse(p: int, ell: int) -> tuple[int, int]:
    """Functional form of :meth:`TauMap.tau_inverse`."""
    return TauMap(p).tau_inverse(ell)


@dataclass(frozen=True)
class Dataset:
    """An n x p main-effect matrix with optional response.

    The matrix is made read-only on construction; instances are safe to
    share across threads.  ``column_means``/``column_sds`` are sample
    statistics with divisor n.
    """

    X: np.ndarray
    y: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None
    column_means: np.ndarray = field(init=False)
    column_sds: np.ndarray = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InputError(f"X must be a 2-d matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            i, j = np.argwhere(~np.isfinite(X))[0]
            raise InputError(f"non-finite value at row {i + 1}, column {j + 1}")
        X = np.ascontiguousarray(X)
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.float64).ravel()
            if y.shape[0] != X.shape[0]:
                raise InputError(
                    f"response length {y.shape[0]} != sample count {X.shape[0]}"
                )
            if not np.all(np.isfinite(y)):
                i = int(np.argwhere(~np.isfinite(y))[0])
                raise InputError(f"non-finite response at row {i + 1}")
            y.setflags(write=False)
            object.__setattr__(self, "y", y)
        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != X.shape[1]:
                raise InputError("feature_names length does not match X")
            object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "column_means", X.mean(axis=0))
        object.__setattr__(self, "column_sds", X.std(axis=0))  # divisor n
        self.column_means.setflags(write=False)
        self.column_sds.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def taumap(self) -> TauMap:
        return TauMap(self.p)

    def restrict_rows(self, rows: np.ndarray) -> "Dataset":
        """A new Dataset on a subset of rows (stats recomputed)."""
        y = None if self.y is None else self.y[rows]
        return Dataset(self.X[rows], y, self.feature_names)


def interaction_column(data: Dataset, j: int, k: int) -> np.ndarray:
    """Element-wise product of columns j and k (1-based, order-free).

    Pure and allocation-light; callers in streaming contexts never
    materialize the full n x q interaction matrix.
    """
    p = data.p
    if not (1 <= j <= p and 1 <= k <= p):
        raise IndexError(f"pair ({j}, {k}) out of range for p={p}")
    return data.X[:, j - 1] * data.X[:, k - 1]


def read_delimited(
    path,
    response: str | int | None = None,
    delimiter: str | None = None,
) -> Dataset:
    """Read a comma- or tab-separated file with a header row.

    Parameters
    ----------
    path : str or Path
        File with one observation per row.
    response : str, int, or None
        Response column, selected by header name or 1-based index.
        None means the file holds main effects only.
    delimiter : str, optional
        Inferred from the header line when omitted (tab wins if present).

    Raises
    ------
    InputError
        On any parse failure, with the offending row and column named.
    """
    with open(path, "r", newline="") as fh:
        first = fh.readline()
        if not first:
            raise InputError(f"{path}: empty file")
        if delimiter is None:
            delimiter = "\t" if "\t" in first else ","
        header = next(csv.reader([first], delimiter=delimiter))
        header = [h.strip() for h in header]
        ncol = len(header)
        if ncol == 0:
            raise InputError(f"{path}: empty header row")

        resp_idx: int | None = None
        if response is not None:
            if isinstance(response, int):
                if not (1 <= response <= ncol):
                    raise InputError(
                        f"{path}: response index {response} out of range 1..{ncol}"
                    )
                resp_idx = response - 1
            else:
                try:
                    resp_idx = header.index(response)
                except ValueError:
                    raise InputError(
                        f"{path}: response column {response!r} not in header"
                    ) from None

        rows: list[list[float]] = []
        yvals: list[float] = []
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or (len(rec) == 1 and rec[0].strip() == ""):
                continue  # trailing blank line
            if len(rec) != ncol:
                raise InputError(
                    f"{path}: row {lineno} has {len(rec)} fields, expected {ncol}"
                )
            vals = []
            for cidx, cell in enumerate(rec):
                cell = cell.strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(
                        f"{path}: row {lineno}, column {header[cidx]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                if not math.isfinite(v):
                    raise InputError(
                        f"{path}: row {lineno}, column {header[cidx]!r}: "
                        f"non-finite value {cell!r}"
                    )
                vals.append(v)
            if resp_idx is not None:
                yvals.append(vals.pop(resp_idx))
            rows.append(vals)

    if not rows:
        raise InputError(f"{path}: no data rows")
    names = list(header)
    if resp_idx is not None:
        names.pop(resp_idx)
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(yvals, dtype=np.float64) if resp_idx is not None else None
    return Dataset(X, y, tuple(names))
