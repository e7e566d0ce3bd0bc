"""One streaming pass over all q = p(p+1)/2 pairwise interactions.

The pass never allocates anything proportional to q in top-m mode: pair
moments are produced in column-chunk blocks through three GEMMs per block
(``X_J' (r_c * X_K)`` for the residual product, ``X_J' X_K`` for means,
``S_J' S_K`` with ``S = X*X`` for second moments), and a bounded min-heap
keeps the m best candidates.  Selection uses the strict total order
``(score, -ell)`` so the kept set is independent of scan or worker order;
ties on equal scores therefore go to the smaller interaction id.

Memory use is O(n*(p+m) + block^2); time is O(n*p^2 + p^2*log m).
"""

from __future__ import annotations

import heapq
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Dataset, TauMap
from .errors import DegenerateResidualError

DEFAULT_BLOCK = 512

# relative floor below which a residual is considered constant
_DEGENERATE_REL = 1e-12


@dataclass(frozen=True)
class ScreenScore:
    """One selected interaction: 1-based pair (j, k), j <= k, and its score."""

    pair: tuple[int, int]
    score: float


@dataclass(frozen=True)
class ScreenResult:
    """Outcome of a screening pass.

    ``selected`` is sorted by descending score, ties by smaller pair id.
    ``pass_stats`` reports pairs_scanned (= q) and peak_tracked (<= m).
    """

    mode: str  # "top-m" | "threshold"
    selected: tuple[ScreenScore, ...]
    pass_stats: dict


def residual_correlation(z, r) -> float:
    """Centered Pearson sample correlation (divisor n), clipped to [-1, 1].

    Returns 0.0 if either vector has zero sample variance; degenerate
    *residuals* are rejected upstream by the screening entry points.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    if z.shape != r.shape:
        raise ValueError("z and r must have equal length")
    zc = z - z.mean()
    rc = r - r.mean()
    vz = float(zc @ zc)
    vr = float(rc @ rc)
    if vz <= 0.0 or vr <= 0.0:
        return 0.0
    return float(np.clip((zc @ rc) / np.sqrt(vz * vr), -1.0, 1.0))


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.X
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected an n x p matrix")
    return X


def _col_chunks(p: int, block: int) -> list[tuple[int, int]]:
    block = max(1, min(block, p))
    return [(lo, min(lo + block, p)) for lo in range(0, p, block)]


def _block_ids(p: int, jlo: int, jhi: int, klo: int, khi: int) -> np.ndarray:
    """1-based interaction ids for the (j, k) grid of one block."""
    jj = np.arange(jlo + 1, jhi + 1, dtype=np.int64)[:, None]
    kk = np.arange(klo + 1, khi + 1, dtype=np.int64)[None, :]
    return (jj - 1) * p - (jj - 1) * (jj - 2) // 2 + (kk - jj + 1)


def _check_residual(r: np.ndarray) -> tuple[np.ndarray, float]:
    r = np.asarray(r, dtype=np.float64).ravel()
    rc = r - r.mean()
    sd_r = float(np.sqrt(rc @ rc / rc.shape[0]))
    if sd_r <= _DEGENERATE_REL * max(1.0, abs(float(r.mean()))):
        raise DegenerateResidualError(
            "residual has (numerically) zero variance; every correlation "
            "with it is undefined"
        )
    return rc, sd_r


def _scan_chunk_pairs(X, S, rc, chunks, k_indices, consume):
    """Run the blocked triangle scan for the given K-chunk indices.

    For each block, hands ``consume`` the raw moment blocks:
    ``prod = X_J'(rc*X_K)/n``, ``mean = X_J'X_K/n``, ``ez2 = S_J'S_K/n``
    plus the block's coordinates.  Blocks and their float content are
    identical regardless of how ``k_indices`` is partitioned.
    """
    n = X.shape[0]
    for t in k_indices:
        klo, khi = chunks[t]
        XK = X[:, klo:khi]
        RK = XK * rc[:, None]
        SK = S[:, klo:khi]
        for s in range(t + 1):
            jlo, jhi = chunks[s]
            XJ = X[:, jlo:jhi]
            prod = XJ.T @ RK / n
            mean = XJ.T @ XK / n
            ez2 = S[:, jlo:jhi].T @ SK / n
            consume(jlo, jhi, klo, khi, prod, mean, ez2)


def _block_scores(prod, mean, ez2, sd_r):
    """Absolute correlation per block entry; zero-variance pairs -> -1.

    Returning -1 (instead of the score-0 convention) keeps zero-variance
    pairs out of every selection; they are excluded from q_effective.
    """
    var = ez2 - mean * mean
    ok = var > 0.0
    denom = np.sqrt(np.where(ok, var, 1.0)) * sd_r
    score = np.abs(prod) / denom
    return np.where(ok, score, -1.0)


def screen_topm(data, r, m: int, block: int = DEFAULT_BLOCK, workers: int = 1) -> ScreenResult:
    """Keep the m interactions with the largest |cor(Z_ell, r)|.

    Identical (set and order) to brute-force enumeration of all q
    correlations under the documented tie-break.  Zero-variance
    interaction columns are never selected.
    """
    X = _as_matrix(data)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rc, sd_r = _check_residual(r)
    if rc.shape[0] != X.shape[0]:
        raise ValueError("residual length does not match sample count")
    n, p = X.shape
    tm = TauMap(p)
    S = X * X
    chunks = _col_chunks(p, block)

    def scan_worker(k_indices):
        heap: list[tuple[float, int]] = []

        def consume(jlo, jhi, klo, khi, prod, mean, ez2):
            score = _block_scores(prod, mean, ez2, sd_r)
            ids = _block_ids(p, jlo, jhi, klo, khi)
            sel = score >= 0.0
            if jlo == klo:
                # keep the j <= k half of a diagonal block
                jj = np.arange(jlo, jhi)[:, None]
                kk = np.arange(klo, khi)[None, :]
                sel &= kk >= jj
            if len(heap) == m:
                sel &= score >= heap[0][0]
            for sc, ell in zip(score[sel], ids[sel]):
                item = (float(sc), -int(ell))
                if len(heap) < m:
                    heapq.heappush(heap, item)
                elif item > heap[0]:
                    heapq.heapreplace(heap, item)

        _scan_chunk_pairs(X, S, rc, chunks, k_indices, consume)
        return heap

    heaps = _run_partitioned(scan_worker, len(chunks), workers)
    merged: list[tuple[float, int]] = []
    for h in heaps:
        for item in h:
            if len(merged) < m:
                heapq.heappush(merged, item)
            elif item > merged[0]:
                heapq.heapreplace(merged, item)

    order = sorted(merged, key=lambda it: (-it[0], -it[1]))
    selected = tuple(
        ScreenScore(pair=tm.tau_inverse(-neg_ell), score=sc) for sc, neg_ell in order
    )
    stats = {"pairs_scanned": tm.q, "peak_tracked": len(selected)}
    return ScreenResult(mode="top-m", selected=selected, pass_stats=stats)


def screen_threshold(data, r, eta: float, block: int = DEFAULT_BLOCK, workers: int = 1) -> ScreenResult:
    """All interactions with sd(r) * |cor(Z_ell, r)| strictly above eta.

    eta = 0 returns every pair with nonzero score (the all-pairs limit);
    eta = inf returns the empty set (the main-effects-only limit).
    """
    X = _as_matrix(data)
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    rc, sd_r = _check_residual(r)
    if rc.shape[0] != X.shape[0]:
        raise ValueError("residual length does not match sample count")
    n, p = X.shape
    tm = TauMap(p)
    S = X * X
    chunks = _col_chunks(p, block)

    def scan_worker(k_indices):
        kept_ids: list[np.ndarray] = []
        kept_scores: list[np.ndarray] = []

        def consume(jlo, jhi, klo, khi, prod, mean, ez2):
            score = _block_scores(prod, mean, ez2, sd_r) * sd_r
            ids = _block_ids(p, jlo, jhi, klo, khi)
            sel = score > eta
            if jlo == klo:
                jj = np.arange(jlo, jhi)[:, None]
                kk = np.arange(klo, khi)[None, :]
                sel &= kk >= jj
            if np.any(sel):
                kept_ids.append(ids[sel])
                kept_scores.append(score[sel])

        _scan_chunk_pairs(X, S, rc, chunks, k_indices, consume)
        return kept_ids, kept_scores

    parts = _run_partitioned(scan_worker, len(chunks), workers)
    ids = np.concatenate([a for part in parts for a in part[0]] or [np.empty(0, np.int64)])
    scores = np.concatenate([a for part in parts for a in part[1]] or [np.empty(0)])
    order = np.lexsort((ids, -scores))
    selected = tuple(
        ScreenScore(pair=tm.tau_inverse(int(ids[i])), score=float(scores[i]))
        for i in order
    )
    stats = {"pairs_scanned": tm.q, "peak_tracked": len(selected)}
    return ScreenResult(mode="threshold", selected=selected, pass_stats=stats)


def _run_partitioned(worker_fn, n_chunks, workers):
    """Round-robin the K-chunks over workers; results merge order-free."""
    indices = list(range(n_chunks))
    if workers <= 1 or n_chunks <= 1:
        return [worker_fn(indices)]
    parts = [indices[w::workers] for w in range(workers)]
    parts = [part for part in parts if part]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(worker_fn, parts))


def pair_moment_arrays(X, block: int = DEFAULT_BLOCK) -> tuple[np.ndarray, np.ndarray]:
    """Means and raw second moments of all q interaction columns (tau order).

    Materializes two q-length arrays; intended for the all-pairs solver
    where a q-length coefficient vector already exists, not for the
    bounded-memory screening pass.
    """
    X = _as_matrix(X)
    n, p = X.shape
    tm = TauMap(p)
    S = X * X
    mean_q = np.empty(tm.q)
    ez2_q = np.empty(tm.q)
    chunks = _col_chunks(p, block)
    for t in range(len(chunks)):
        klo, khi = chunks[t]
        XK = X[:, klo:khi]
        SK = S[:, klo:khi]
        for s in range(t + 1):
            jlo, jhi = chunks[s]
            mean = X[:, jlo:jhi].T @ XK / n
            ez2 = S[:, jlo:jhi].T @ SK / n
            ids = _block_ids(p, jlo, jhi, klo, khi)
            if jlo == klo:
                jj = np.arange(jlo, jhi)[:, None]
                kk = np.arange(klo, khi)[None, :]
                keep = kk >= jj
                mean_q[ids[keep] - 1] = mean[keep]
                ez2_q[ids[keep] - 1] = ez2[keep]
            else:
                mean_q[ids.ravel() - 1] = mean.ravel()
                ez2_q[ids.ravel() - 1] = ez2.ravel()
    return mean_q, ez2_q


def pair_weighted_moments(X, w, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """q-length array of n^{-1} sum_i X_ij X_ik w_i in tau order."""
    X = _as_matrix(X)
    w = np.asarray(w, dtype=np.float64).ravel()
    n, p = X.shape
    if w.shape[0] != n:
        raise ValueError("weight length does not match sample count")
    tm = TauMap(p)
    out = np.empty(tm.q)
    chunks = _col_chunks(p, block)
    for t in range(len(chunks)):
        klo, khi = chunks[t]
        WK = X[:, klo:khi] * w[:, None]
        for s in range(t + 1):
            jlo, jhi = chunks[s]
            prod = X[:, jlo:jhi].T @ WK / n
            ids = _block_ids(p, jlo, jhi, klo, khi)
            if jlo == klo:
                jj = np.arange(jlo, jhi)[:, None]
                kk = np.arange(klo, khi)[None, :]
                keep = kk >= jj
                out[ids[keep] - 1] = prod[keep]
            else:
                out[ids.ravel() - 1] = prod.ravel()
    return out


def pair_scores_dense(data, r, block: int = DEFAULT_BLOCK) -> tuple[np.ndarray, np.ndarray]:
    """All q screening quantities at once: (|cor| array, sd(r)).

    Brute-force companion to the streaming pass (q-length allocation);
    zero-variance pairs carry -1 so they sort after every real score.
    """
    X = _as_matrix(data)
    rc, sd_r = _check_residual(r)
    n, p = X.shape
    tm = TauMap(p)
    S = X * X
    out = np.empty(tm.q)
    chunks = _col_chunks(p, block)
    for t in range(len(chunks)):
        klo, khi = chunks[t]
        XK = X[:, klo:khi]
        RK = XK * rc[:, None]
        SK = S[:, klo:khi]
        for s in range(t + 1):
            jlo, jhi = chunks[s]
            prod = X[:, jlo:jhi].T @ RK / n
            mean = X[:, jlo:jhi].T @ XK / n
            ez2 = S[:, jlo:jhi].T @ SK / n
            score = _block_scores(prod, mean, ez2, sd_r)
            ids = _block_ids(p, jlo, jhi, klo, khi)
            if jlo == klo:
                jj = np.arange(jlo, jhi)[:, None]
                kk = np.arange(klo, khi)[None, :]
                keep = kk >= jj
                out[ids[keep] - 1] = score[keep]
            else:
                out[ids.ravel() - 1] = score.ravel()
    return out, sd_r
