"""Cyclic coordinate-descent lasso with a geometric lambda path.

Columns are standardized internally to mean 0 / sd 1 (divisor n) and the
intercept is unpenalized; reported coefficients are on the original
scale.  The solver works against a :mod:`sprinter.columns` source, so the
same code fits dense designs and the never-materialized all-pairs design.

Per lambda the solver cycles a working set (current support plus a
sequential strong rule), with the inner sweep compiled by numba.  A fit
is accepted only when the working-set KKT residuals fall below
``tol * sd(y)`` and a full-gradient pass finds no violation outside the
set, so every fit carries a certified ``kkt_max_violation``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .columns import DenseColumnSource, parse_column_name
from .errors import ConfigError, InputError, SchemaError


@dataclass(frozen=True)
class LassoConfig:
    n_lambda: int = 100
    # default picked at fit time: 1e-2 when n < n_cols else 1e-4
    lambda_min_ratio: float | None = None
    tol: float = 1e-8
    max_iter: int = 100_000
    check_objective: bool = False


@dataclass(frozen=True)
class LassoFit:
    """One point on the path; coefficients are original-scale and sparse."""

    lam: float
    intercept: float
    coefficients: dict[str, float]
    n_iterations: int
    converged: bool
    kkt_max_violation: float
    index_coefficients: dict[int, float] = field(repr=False, default_factory=dict)


@dataclass(frozen=True)
class LassoPath:
    lambdas: np.ndarray
    fits: tuple[LassoFit, ...]
    cv_mean: np.ndarray | None = None
    cv_se: np.ndarray | None = None
    best_index: int | None = None

    @property
    def best_lambda(self) -> float | None:
        return None if self.best_index is None else float(self.lambdas[self.best_index])

    @property
    def best_fit(self) -> LassoFit | None:
        return None if self.best_index is None else self.fits[self.best_index]


def soft_threshold(u: float, lam: float) -> float:
    if u > lam:
        return u - lam
    if u < -lam:
        return u + lam
    return 0.0


@njit(cache=True)
def _sweep_kernel(W, colsq, b, resid, lam):
    """One cyclic pass; exact coordinate minimization per column.

    Returns the largest coefficient move.  Serial accumulation keeps the
    result independent of BLAS threading.
    """
    n, K = W.shape
    maxd = 0.0
    for c in range(K):
        cs = colsq[c]
        g = 0.0
        for i in range(n):
            g += W[i, c] * resid[i]
        g /= n
        u = b[c] * cs + g
        if u > lam:
            bn = (u - lam) / cs
        elif u < -lam:
            bn = (u + lam) / cs
        else:
            bn = 0.0
        d = bn - b[c]
        if d != 0.0:
            for i in range(n):
                resid[i] -= d * W[i, c]
            b[c] = bn
            ad = abs(d)
            if ad > maxd:
                maxd = ad
    return maxd


@njit(cache=True)
def _kkt_kernel(W, b, resid, lam):
    """Worst KKT violation over the stacked working columns."""
    n, K = W.shape
    worst = 0.0
    for c in range(K):
        g = 0.0
        for i in range(n):
            g += W[i, c] * resid[i]
        g /= n
        if b[c] > 0.0:
            v = abs(g - lam)
        elif b[c] < 0.0:
            v = abs(g + lam)
        else:
            v = abs(g) - lam
            if v < 0.0:
                v = 0.0
        if v > worst:
            worst = v
    return worst


def _nonneg_lasso_face(A, y, lam, n, enter_tol, u0=None):
    """Exact minimizer of 0.5/n ||y - A u||^2 + lam * sum(u) over u >= 0.

    Lawson-Hanson style active-set iteration, warm-startable from ``u0``.
    Returns None when the iteration budget is exhausted (the caller then
    falls back to plain coordinate descent).  Finite and deterministic.
    """
    F = A.shape[1]
    if F == 0:
        return np.zeros(0)
    gram = A.T @ A / n
    aty = A.T @ y / n
    if u0 is None:
        u = np.zeros(F)
    else:
        u = np.maximum(u0, 0.0)
    passive = u > 0.0
    grad = lam - aty + (gram @ u if passive.any() else 0.0)
    budget = 3 * F + 24

    def solve_passive(idx):
        # stationarity (A_P'A_P/n) u = aty_P - lam through the SVD of the
        # column block itself; Gram-based solves square the condition
        # number and return non-minimizing points on saturated faces.
        # Also returns the null-space shadow of the all-ones vector: on a
        # rank-deficient face the quadratic part is flat along null(A_P)
        # while the linear penalty is not, so the face minimum sits at a
        # boundary reached by descending along that shadow.
        U, sv, Vt = np.linalg.svd(A[:, idx], full_matrices=False)
        keep_sv = sv > sv[0] * 1e-10
        sv, Vt = sv[keep_sv], Vt[keep_sv]
        trial = Vt.T @ ((Vt @ (aty[idx] - lam)) * (n / sv ** 2))
        ones = np.ones(idx.size)
        null_shadow = ones - Vt.T @ (Vt @ ones)
        return trial, null_shadow

    def deactivate(idx, moved):
        snap = 1e-14 * max(1.0, float(np.abs(moved).max()))
        drop = moved <= snap
        moved = moved.copy()
        moved[drop] = 0.0
        out = np.zeros(F)
        out[idx] = moved
        passive[idx[drop]] = False
        return out

    while budget > 0:
        while passive.any() and budget > 0:
            budget -= 1
            idx = np.flatnonzero(passive)
            trial, null_shadow = solve_passive(idx)
            if np.all(trial > 0.0):
                descent = null_shadow @ null_shadow > 1e-18 * idx.size
                sinking = null_shadow > 0.0
                if descent and sinking.any():
                    # slide along the flat direction until a coordinate
                    # hits zero: strictly reduces the linear penalty
                    alpha = float(np.min(trial[sinking] / null_shadow[sinking]))
                    u = deactivate(idx, trial - alpha * null_shadow)
                    continue
                u = np.zeros(F)
                u[idx] = trial
                break
            cur = u[idx]
            neg = trial <= 0.0
            denom = cur[neg] - trial[neg]
            steps = np.where(denom > 0.0, cur[neg] / np.where(denom > 0, denom, 1.0), 0.0)
            alpha = float(steps.min()) if steps.size else 0.0
            u = deactivate(idx, cur + alpha * (trial - cur))
        grad = lam - aty + gram @ u
        cand = np.flatnonzero(~passive & (grad < -enter_tol))
        if cand.size == 0:
            return u
        passive[cand[np.argmin(grad[cand])]] = True
    return None


def as_source(columns):
    """Accept a column source, an n x K matrix, or a list of vectors."""
    if hasattr(columns, "raw_gradient"):
        return columns
    M = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns]) \
        if isinstance(columns, (list, tuple)) else np.asarray(columns, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    names = [f"X{i + 1}" for i in range(M.shape[1])]
    return DenseColumnSource(M, names)


class _Solver:
    """Path state shared across lambdas (warm starts)."""

    def __init__(self, source, y, config: LassoConfig):
        y = np.asarray(y, dtype=np.float64).ravel()
        if not np.all(np.isfinite(y)):
            raise InputError("non-finite response")
        if y.shape[0] != source.n_rows:
            raise InputError("response length does not match columns")
        self.source = source
        self.cfg = config
        self.n = y.shape[0]
        self.ybar = float(y.mean())
        self.yc = y - self.ybar
        sdy = float(self.yc.std())
        self.scale = sdy if sdy > 0 else 1.0
        self.usable = source.sds > 0
        if source.n_cols == 0:
            raise InputError("need at least one column")
        self.b = np.zeros(source.n_cols)
        self.resid = self.yc.copy()
        self.cache: dict[int, tuple[np.ndarray, float]] = {}
        self.gstd = self._full_gradient()
        self._gstd_fresh = True
        self.lam_own_max = float(np.max(np.abs(self.gstd))) if self.usable.any() else 0.0

    def _std_col(self, i: int) -> tuple[np.ndarray, float]:
        hit = self.cache.get(i)
        if hit is None:
            x = self.source.raw_column(i)
            xt = (x - self.source.means[i]) / self.source.sds[i]
            hit = (xt, float(xt @ xt / self.n))
            self.cache[i] = hit
        return hit

    def _full_gradient(self) -> np.ndarray:
        graw = self.source.raw_gradient(self.resid)
        mres = float(self.resid.mean())
        g = np.where(
            self.usable,
            (graw - self.source.means * mres) / np.where(self.usable, self.source.sds, 1.0),
            0.0,
        )
        return g

    def _stack(self, working: list[int]) -> tuple[np.ndarray, np.ndarray]:
        W = np.empty((self.n, len(working)), order="F")
        colsq = np.empty(len(working))
        for c, i in enumerate(working):
            xt, cs = self._std_col(i)
            W[:, c] = xt
            colsq[c] = cs
        return W, colsq

    def solve(self, lam: float, lam_prev: float) -> tuple[int, bool, float]:
        cfg = self.cfg
        tol_abs = cfg.tol * self.scale
        if lam >= self.lam_own_max and not np.any(self.b):
            # |g_j| <= lam for every j, so the null fit is exactly optimal
            return 0, True, self._kkt_violation(lam)
        strong = (np.abs(self.gstd) >= (2.0 * lam - lam_prev)) & self.usable
        strong[np.flatnonzero(self.b)] = True
        working = [int(i) for i in np.flatnonzero(strong)]
        sweeps = 0
        converged = True
        while True:
            W, colsq, bw = *self._stack(working), self.b[working]
            rounds = 0
            while working:
                sweeps += 1
                self._checked_sweep(W, colsq, bw, lam, full=True)
                maxd = self._last_maxd
                # the certificate is the KKT residual, so test it directly:
                # coefficients may still slide along near-null directions
                # (maxd above tol) after the gradient has converged
                if (maxd < tol_abs or sweeps % 8 == 0) \
                        and _kkt_kernel(W, bw, self.resid, lam) <= tol_abs:
                    break
                if sweeps >= cfg.max_iter:
                    converged = False
                    break
                rounds += 1
                if rounds % 6 == 0:
                    # sustained stall: the quick jump below keeps making
                    # progress without converging, so bring in the exact
                    # nonnegative face solve
                    self._refine_lh(W, bw, lam)
                # polish the current support: exact equality-KKT jump when
                # accepted, otherwise sub-sweeps with periodic retries
                if not self._refine_support(W, bw, lam):
                    sweeps = self._crawl_support(W, colsq, bw, lam, tol_abs, sweeps)
                    if sweeps >= cfg.max_iter:
                        converged = False
                        break
            self.b[working] = bw
            if not self._gstd_fresh:
                self.gstd = self._full_gradient()
                self._gstd_fresh = True
            in_working = np.zeros(self.source.n_cols, dtype=bool)
            in_working[working] = True
            viol = (~in_working) & self.usable & (
                np.abs(self.gstd) > lam + 1e-12 * max(1.0, self.lam_own_max)
            )
            if not converged or not viol.any():
                break
            working = sorted(working + [int(i) for i in np.flatnonzero(viol)])
        kkt = self._kkt_violation(lam)
        return sweeps, converged, kkt

    def _objective_of(self, bw: np.ndarray, lam: float) -> float:
        return 0.5 * float(self.resid @ self.resid) / self.n \
            + lam * float(np.abs(bw).sum())

    def _checked_sweep(self, W, colsq, bw, lam, full=False) -> None:
        if self.cfg.check_objective:
            before = self._objective_of(bw, lam)
        maxd = _sweep_kernel(W, colsq, bw, self.resid, lam)
        if maxd > 0.0:
            self._gstd_fresh = False
        if self.cfg.check_objective:
            after = self._objective_of(bw, lam)
            if after > before + 1e-12 * max(1.0, abs(before)):
                raise AssertionError(
                    f"objective increased within a sweep: {before} -> {after}"
                )
        self._last_maxd = maxd

    _CRAWL_CHUNK = 20

    def _crawl_support(self, W, colsq, bw, lam, tol_abs, sweeps) -> int:
        """Sub-sweeps over the nonzero coordinates until they settle.

        The quick face jump is retried between chunks; after sustained
        stalls the exact nonnegative-face solve takes over (it resolves
        the degenerate vertices where coordinate descent zigzags).
        """
        chunks = 0
        while sweeps < self.cfg.max_iter:
            active = np.flatnonzero(bw)
            if active.size == 0 or active.size >= bw.shape[0]:
                return sweeps
            Wa = np.asfortranarray(W[:, active])
            csa = colsq[active]
            ba = bw[active]
            done = False
            for step in range(self._CRAWL_CHUNK):
                sweeps += 1
                self._checked_sweep(Wa, csa, ba, lam)
                if (self._last_maxd < tol_abs or step % 4 == 3) \
                        and _kkt_kernel(Wa, ba, self.resid, lam) <= tol_abs:
                    done = True
                    break
                if sweeps >= self.cfg.max_iter:
                    break
            bw[active] = ba
            if done or self._refine_support(W, bw, lam):
                return sweeps
            chunks += 1
            if chunks % 4 == 0 and self._refine_lh(W, bw, lam):
                return sweeps
        return sweeps

    def _refine_support(self, W: np.ndarray, bw: np.ndarray, lam: float) -> bool:
        """Jump to the exact minimizer on the current support and signs.

        Solving (W_A'W_A/n) b = W_A'(resid + W_A b_A)/n - lam*sign(b_A)
        short-circuits the coordinate-descent crawl near saturation.  The
        jump is applied only when it respects the assumed signs and does
        not increase the objective; otherwise the caller falls back to
        plain sweeps.  The KKT certificate is still earned by the normal
        exit test, never by this shortcut.
        """
        nz = np.flatnonzero(bw)
        if nz.size == 0:
            return False
        yface = self.resid + W[:, nz] @ bw[nz]
        before = 0.5 * float(self.resid @ self.resid) / self.n \
            + lam * float(np.abs(bw[nz]).sum())
        signs = np.sign(bw[nz])
        Wf = W[:, nz]

        def face_solve(cols):
            # stationarity through the SVD of the column block itself:
            # forming the Gram matrix would square the condition number,
            # which is exactly what breaks saturated faces
            U, sv, Vt = np.linalg.svd(Wf[:, cols], full_matrices=False)
            keep_sv = sv > sv[0] * 1e-10
            U, sv, Vt = U[:, keep_sv], sv[keep_sv], Vt[keep_sv]
            w = (U.T @ yface) / sv - self.n * lam * (Vt @ signs[cols]) / sv ** 2
            return Vt.T @ w

        keep = np.arange(nz.size)
        bsol = None
        for _ in range(3):
            trial = face_solve(keep)
            bad = np.sign(trial) != signs[keep]
            if not bad.any():
                bsol = trial
                break
            if bad.all():
                return False
            keep = keep[~bad]  # drop sign-crossing coordinates, resolve
        if bsol is None:
            return False
        bface = np.zeros(nz.size)
        bface[keep] = bsol
        new_resid = yface - Wf @ bface
        after = 0.5 * float(new_resid @ new_resid) / self.n \
            + lam * float(np.abs(bface).sum())
        if after > before:
            return False
        self.resid[:] = new_resid
        bw[nz] = bface
        self._gstd_fresh = False
        return True

    def _refine_lh(self, W, bw, lam) -> bool:
        """Exact face optimization for degenerate (saturated) fits.

        The candidate face is the current support plus every coordinate
        whose gradient sits within the current KKT error of the boundary
        (at the optimum |g| = lam exactly on the support); the face
        subproblem is then solved by the nonnegative active-set method,
        which selects the right sub-support on rank-deficient faces where
        sign-guessing fails.
        """
        nz = np.flatnonzero(bw)
        if nz.size == 0:
            return False
        g = W.T @ self.resid / self.n
        kkt_now = float(np.abs(g[nz] - lam * np.sign(bw[nz])).max())
        zero_mask = np.ones(bw.shape[0], dtype=bool)
        zero_mask[nz] = False
        if zero_mask.any():
            kkt_now = max(kkt_now, float(np.abs(g[zero_mask]).max()) - lam)
        thr = lam - 2.0 * kkt_now - self.cfg.tol * self.scale
        in_face = np.abs(g) >= thr
        in_face[nz] = True
        face = np.flatnonzero(in_face)
        if face.size == 0 or face.size > max(4 * nz.size + 16, 2 * self.n):
            return False
        signs = np.where(g[face] != 0.0, np.sign(g[face]), 1.0)
        sup_pos = np.searchsorted(face, nz)
        signs[sup_pos] = np.where(g[nz] != 0.0, np.sign(g[nz]), np.sign(bw[nz]))

        yface = self.resid + W[:, nz] @ bw[nz]
        before = 0.5 * float(self.resid @ self.resid) / self.n \
            + lam * float(np.abs(bw[nz]).sum())
        A = W[:, face] * signs[None, :]
        u = _nonneg_lasso_face(A, yface, lam, self.n,
                               enter_tol=0.25 * self.cfg.tol * self.scale,
                               u0=signs * bw[face])
        if u is None:
            return False
        new_resid = yface - A @ u
        after = 0.5 * float(new_resid @ new_resid) / self.n + lam * float(u.sum())
        if after > before:
            return False
        self.resid[:] = new_resid
        bw[:] = 0.0
        bw[face] = signs * u
        self._gstd_fresh = False
        return True

    def _kkt_violation(self, lam: float) -> float:
        g = self.gstd
        nz = self.b != 0.0
        worst = 0.0
        if nz.any():
            worst = float(np.max(np.abs(g[nz] - lam * np.sign(self.b[nz]))))
        zero_side = self.usable & ~nz
        if zero_side.any():
            worst = max(worst, float(np.max(np.abs(g[zero_side])) - lam))
        return max(worst, 0.0)

    def record(self, lam: float, sweeps: int, converged: bool, kkt: float) -> LassoFit:
        nz = np.flatnonzero(self.b)
        idx_coefs = {}
        named = {}
        for i in nz:
            orig = self.b[i] / self.source.sds[i]
            idx_coefs[int(i)] = float(orig)
            named[self.source.name(int(i))] = float(orig)
        intercept = self.ybar - sum(
            c * self.source.means[i] for i, c in idx_coefs.items()
        )
        return LassoFit(
            lam=float(lam),
            intercept=float(intercept),
            coefficients=named,
            n_iterations=sweeps,
            converged=converged,
            kkt_max_violation=float(kkt),
            index_coefficients=idx_coefs,
        )


def default_lambda_grid(lam_max: float, n_rows: int, n_cols: int, config: LassoConfig) -> np.ndarray:
    ratio = config.lambda_min_ratio
    if ratio is None:
        ratio = 1e-2 if n_rows < n_cols else 1e-4
    if lam_max <= 0:
        return np.array([0.0])
    k = max(2, config.n_lambda)
    return lam_max * ratio ** (np.arange(k) / (k - 1))


def fit_path(columns, y, config: LassoConfig | None = None, lambdas=None) -> LassoPath:
    """Fit the full regularization path with warm starts.

    ``lambdas`` overrides the automatic geometric grid (used by
    cross-validation to share one grid across folds).
    """
    config = config or LassoConfig()
    source = as_source(columns)
    solver = _Solver(source, y, config)
    if lambdas is None:
        lambdas = default_lambda_grid(solver.lam_own_max, source.n_rows, source.n_cols, config)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.ndim != 1 or lambdas.shape[0] < 1 or np.any(np.diff(lambdas) > 0):
        raise ConfigError("lambda grid must be non-increasing and non-empty")
    fits = []
    lam_prev = max(solver.lam_own_max, float(lambdas[0]))
    for lam in lambdas:
        sweeps, converged, kkt = solver.solve(float(lam), lam_prev)
        fits.append(solver.record(float(lam), sweeps, converged, kkt))
        lam_prev = float(lam)
    return LassoPath(lambdas=lambdas, fits=tuple(fits))


def predict_on_source(source, fit: LassoFit, rows=None) -> np.ndarray:
    """Fitted values against the source's own columns (by index)."""
    n = source.n_rows if rows is None else len(rows)
    out = np.full(n, fit.intercept)
    for i, c in fit.index_coefficients.items():
        col = source.raw_column(i)
        out += c * (col if rows is None else col[rows])
    return out


def predict(fit: LassoFit, X_new, interaction_pairs=None) -> np.ndarray:
    """Predictions on a fresh main-effect matrix.

    Column ids resolve against the p columns of ``X_new``; interaction
    columns are built on the fly.  When ``interaction_pairs`` is given,
    any interaction id outside that list is a schema error.
    """
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim == 1:
        X_new = X_new[:, None]
    allowed = None
    if interaction_pairs is not None:
        allowed = {(min(j, k), max(j, k)) for j, k in interaction_pairs}
    out = np.full(X_new.shape[0], fit.intercept)
    for name, coef in fit.coefficients.items():
        idx = parse_column_name(name)
        if max(idx) > X_new.shape[1]:
            raise SchemaError(
                f"column id {name!r} does not resolve: data has p={X_new.shape[1]}"
            )
        if len(idx) == 1:
            col = X_new[:, idx[0] - 1]
        else:
            if allowed is not None and idx not in allowed:
                raise SchemaError(f"interaction {name!r} not in the declared pair list")
            col = X_new[:, idx[0] - 1] * X_new[:, idx[1] - 1]
        out += coef * col
    return out


def kkt_residuals(fit: LassoFit, columns, y) -> float:
    """Recompute the worst KKT violation of a fit from scratch.

    Standardized-column convention: for zero coefficients
    ``|n^{-1} x' (y - yhat)| <= lam``, for nonzero ones the gradient must
    equal ``lam * sign`` (all on the standardized scale).
    """
    source = as_source(columns)
    y = np.asarray(y, dtype=np.float64).ravel()
    resid = y - predict_on_source(source, fit)
    n = source.n_rows
    worst = 0.0
    for i in range(source.n_cols):
        if source.sds[i] <= 0:
            continue
        xt = (source.raw_column(i) - source.means[i]) / source.sds[i]
        g = float(xt @ resid) / n
        coef = fit.index_coefficients.get(i, 0.0)
        if coef != 0.0:
            v = abs(g - fit.lam * np.sign(coef))
        else:
            v = max(abs(g) - fit.lam, 0.0)
        worst = max(worst, v)
    return worst


def fold_assignments(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic, nearly balanced fold index sets."""
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise ConfigError(f"folds={folds} exceeds sample count n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(folds, n // folds)
    sizes[: n % folds] += 1
    out = []
    start = 0
    for s in sizes:
        out.append(np.sort(perm[start:start + s]))
        start += s
    return out


def cross_validate(columns, y, folds: int, config: LassoConfig | None = None,
                   seed: int = 0) -> tuple[float, LassoPath]:
    """K-fold CV over a shared lambda grid computed from the full data.

    Returns the error-minimizing lambda (ties go to the larger value)
    and the full-data path annotated with per-lambda CV mean and SE.
    """
    config = config or LassoConfig()
    source = as_source(columns)
    y = np.asarray(y, dtype=np.float64).ravel()
    full_path = fit_path(source, y, config)
    lambdas = full_path.lambdas
    assignments = fold_assignments(source.n_rows, folds, seed)
    errors = np.empty((folds, len(lambdas)))
    for f, test_idx in enumerate(assignments):
        mask = np.ones(source.n_rows, dtype=bool)
        mask[test_idx] = False
        train_idx = np.flatnonzero(mask)
        sub = source.restrict_rows(train_idx)
        path_f = fit_path(sub, y[train_idx], config, lambdas=lambdas)
        for k, fit in enumerate(path_f.fits):
            pred = predict_on_source(source, fit, rows=test_idx)
            errors[f, k] = float(np.mean((y[test_idx] - pred) ** 2))
    cv_mean = errors.mean(axis=0)
    cv_se = errors.std(axis=0, ddof=1) / np.sqrt(folds)
    best = int(np.argmin(cv_mean))  # first minimum = largest lambda on ties
    path = replace(full_path, cv_mean=cv_mean, cv_se=cv_se, best_index=best)
    return float(lambdas[best]), path
