"""End-to-end reluctant interaction fitting plus reference baselines.

The three-step procedure: (1) cross-validated lasso on main effects
(optionally plus squares), (2) one streaming screen of all pairwise
interactions against the step-1 residual, (3) cross-validated lasso on
main effects plus the survivors.  Steps 2 and 3 are tuned together: the
screen is redone inside every training fold so held-out error reflects
the full procedure.

Baselines: the all-pairs lasso (APL) over p + q columns with on-the-fly
interaction columns, the main-effects lasso (MEL), marginal screening of
all p + q columns against the raw response followed by a lasso (SIS),
and least squares on a known true support.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .columns import DenseColumnSource, PairColumnSource, build_named_columns, main_name, pair_name
from .core import Dataset, TauMap
from .errors import ConfigError, DegenerateResidualError, InputError, ResourceBudgetError
from .lasso import (
    LassoConfig,
    LassoFit,
    LassoPath,
    cross_validate,
    fit_path,
    fold_assignments,
    predict_on_source,
)
from .lasso import predict as lasso_predict
from .screen import ScreenResult, ScreenScore, screen_threshold, screen_topm

MODEL_FORMAT_VERSION = 1
TAU_ORDERING_TAG = "lexicographic_j_le_k_1based"


def m_preset(n: int, kind: str = "n") -> int:
    """Screening budgets in common use: 'n' or 'n_over_log_n'."""
    if kind == "n":
        return n
    if kind == "n_over_log_n":
        return math.ceil(n / math.log(n))
    raise ConfigError(f"unknown m preset {kind!r}")


@dataclass(frozen=True)
class SprinterConfig:
    include_squares_step1: bool = True
    m: int | None = None  # None -> n; 0 skips screening entirely
    eta: float | None = None  # threshold mode when set (overrides m)
    folds: int = 5
    seed: int = 0
    lasso: LassoConfig = field(default_factory=LassoConfig)
    screen_block: int = 512
    workers: int = 1
    apl_p_cap: int = 5000

    def validate(self, n: int) -> None:
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.folds > n:
            raise ConfigError(f"folds={self.folds} exceeds n={n}")
        if self.m is not None and self.m < 0:
            raise ConfigError(f"m must be >= 0, got {self.m}")
        if self.eta is not None and self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")


@dataclass(frozen=True)
class SprinterModel:
    step1: LassoFit
    residual: np.ndarray
    screened: ScreenResult
    step3: LassoFit
    chosen_lambdas: dict[str, float]
    p: int
    seed: int
    config: SprinterConfig
    status: str = "ok"
    method: str = "sprinter"

    def predict(self, X_new) -> np.ndarray:
        return lasso_predict(self.step3, X_new)

    @property
    def screened_pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(s.pair for s in self.screened.selected)


@dataclass(frozen=True)
class BaselineModel:
    method: str
    fit: LassoFit
    p: int
    best_lambda: float | None = None
    selected_mains: tuple[int, ...] | None = None
    selected_pairs: tuple[tuple[int, int], ...] | None = None

    def predict(self, X_new) -> np.ndarray:
        return lasso_predict(self.fit, X_new)


_EMPTY_SCREEN = ScreenResult(
    mode="top-m", selected=(), pass_stats={"pairs_scanned": 0, "peak_tracked": 0}
)


def _require_response(data: Dataset) -> np.ndarray:
    if data.y is None:
        raise InputError("dataset has no response column")
    return data.y


def _screen_step2(X: np.ndarray, r: np.ndarray, cfg: SprinterConfig, m: int) -> ScreenResult:
    if cfg.eta is not None:
        return screen_threshold(X, r, cfg.eta, block=cfg.screen_block, workers=cfg.workers)
    if m == 0:
        return _EMPTY_SCREEN
    return screen_topm(X, r, m, block=cfg.screen_block, workers=cfg.workers)


def _step3_source(X: np.ndarray, pairs) -> DenseColumnSource:
    p = X.shape[1]
    names = [main_name(j) for j in range(1, p + 1)] + [pair_name(j, k) for j, k in pairs]
    M = np.column_stack([X] + [X[:, j - 1] * X[:, k - 1] for j, k in pairs]) if pairs else X
    return DenseColumnSource(M, names)


def fit_sprinter(data: Dataset, config: SprinterConfig | None = None) -> SprinterModel:
    """Run the full three-step procedure on a dataset with response."""
    cfg = config or SprinterConfig()
    y = _require_response(data)
    cfg.validate(data.n)
    X = data.X
    n, p = X.shape
    m = cfg.m if cfg.m is not None else n

    # Step 1: cross-validated lasso on mains (plus squares by default)
    if cfg.include_squares_step1:
        names1 = [main_name(j) for j in range(1, p + 1)] + [pair_name(j, j) for j in range(1, p + 1)]
        src1 = DenseColumnSource(np.column_stack([X, X * X]), names1)
    else:
        src1 = DenseColumnSource(X, [main_name(j) for j in range(1, p + 1)])
    lam1, path1 = cross_validate(src1, y, cfg.folds, cfg.lasso, seed=cfg.seed)
    step1 = path1.best_fit
    r = y - predict_on_source(src1, step1)

    sdy = float(y.std())
    if float(r.std()) <= 1e-10 * max(1.0, sdy):
        warnings.warn(
            "step-1 fit is (numerically) perfect; no residual left to screen",
            RuntimeWarning,
        )
        return SprinterModel(
            step1=step1, residual=r, screened=_EMPTY_SCREEN, step3=step1,
            chosen_lambdas={"step1": lam1, "step3": lam1},
            p=p, seed=cfg.seed, config=cfg, status="degenerate_residual",
        )

    # Step 2 on the full data
    screened = _screen_step2(X, r, cfg, m)
    pairs_full = tuple(s.pair for s in screened.selected)

    # Steps 2+3 tuned jointly: one shared grid from the full-data design,
    # screening redone inside each training fold.
    src3 = _step3_source(X, pairs_full)
    full_path3 = fit_path(src3, y, cfg.lasso)
    lambdas = full_path3.lambdas
    assignments = fold_assignments(n, cfg.folds, cfg.seed)
    errors = np.empty((cfg.folds, len(lambdas)))
    for f, test_idx in enumerate(assignments):
        mask = np.ones(n, dtype=bool)
        mask[test_idx] = False
        train_idx = np.flatnonzero(mask)
        try:
            screened_f = _screen_step2(X[train_idx], r[train_idx], cfg, m)
            pairs_f = tuple(s.pair for s in screened_f.selected)
        except DegenerateResidualError:
            pairs_f = ()
        src_f = _step3_source(X, pairs_f)
        path_f = fit_path(src_f.restrict_rows(train_idx), y[train_idx], cfg.lasso,
                          lambdas=lambdas)
        for k, fit in enumerate(path_f.fits):
            pred = predict_on_source(src_f, fit, rows=test_idx)
            errors[f, k] = float(np.mean((y[test_idx] - pred) ** 2))
    cv_mean = errors.mean(axis=0)
    best = int(np.argmin(cv_mean))  # ties resolve to the larger lambda
    step3 = full_path3.fits[best]

    screened_set = set(pairs_full)
    for name in step3.coefficients:
        if "*" in name:
            j, k = (int(part[1:]) for part in name.split("*"))
            assert (j, k) in screened_set, "step-3 interaction outside screened set"

    return SprinterModel(
        step1=step1, residual=r, screened=screened, step3=step3,
        chosen_lambdas={"step1": lam1, "step3": float(lambdas[best])},
        p=p, seed=cfg.seed, config=cfg, status="ok",
    )


def fit_mel(data: Dataset, config: SprinterConfig | None = None) -> BaselineModel:
    """Cross-validated lasso on the p main effects only."""
    cfg = config or SprinterConfig()
    y = _require_response(data)
    cfg.validate(data.n)
    src = DenseColumnSource(data.X, [main_name(j) for j in range(1, data.p + 1)])
    lam, path = cross_validate(src, y, cfg.folds, cfg.lasso, seed=cfg.seed)
    return BaselineModel(method="mel", fit=path.best_fit, p=data.p, best_lambda=lam)


def fit_apl(data: Dataset, config: SprinterConfig | None = None) -> BaselineModel:
    """Cross-validated lasso over all p + q columns.

    Interaction columns are generated on the fly (gradients through the
    blocked triangle kernel), so the n x q design is never materialized;
    p above the configured cap is refused up front.
    """
    cfg = config or SprinterConfig()
    y = _require_response(data)
    cfg.validate(data.n)
    if data.p > cfg.apl_p_cap:
        raise ResourceBudgetError(
            f"all-pairs lasso refused for p={data.p} > cap {cfg.apl_p_cap} "
            f"(q = {TauMap(data.p).q} interaction columns)"
        )
    src = PairColumnSource(data.X, block=cfg.screen_block)
    lam, path = cross_validate(src, y, cfg.folds, cfg.lasso, seed=cfg.seed)
    return BaselineModel(method="apl", fit=path.best_fit, p=data.p, best_lambda=lam)


def fit_sis_lasso(data: Dataset, m: int, config: SprinterConfig | None = None) -> BaselineModel:
    """Marginal screening of all p + q columns against the raw response,
    then a cross-validated lasso on the m survivors.

    Ranking ties resolve to main effects first, then the smaller pair id.
    """
    cfg = config or SprinterConfig()
    y = _require_response(data)
    cfg.validate(data.n)
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    X = data.X
    n, p = X.shape
    yc = y - y.mean()
    sdy = float(np.sqrt(yc @ yc / n))
    if sdy == 0.0:
        raise DegenerateResidualError("constant response: every correlation undefined")
    Xc = X - X.mean(axis=0)
    sdx = X.std(axis=0)
    ok = sdx > 0
    main_scores = np.zeros(p)
    main_scores[ok] = np.abs(Xc[:, ok].T @ yc) / (n * sdx[ok] * sdy)

    # top-m among interactions is enough: the merged top-m cannot need more
    pair_budget = min(m, TauMap(p).q)
    pair_part = screen_topm(X, y, pair_budget, block=cfg.screen_block, workers=cfg.workers)

    candidates: list[tuple[float, int, tuple]] = []
    for j in range(1, p + 1):
        if ok[j - 1]:
            candidates.append((-main_scores[j - 1], 0, (j,)))
    for s in pair_part.selected:
        candidates.append((-s.score, 1, s.pair))
    candidates.sort()
    kept = candidates[:m]
    mains = tuple(idx[0] for _, kind, idx in kept if kind == 0)
    pairs = tuple(idx for _, kind, idx in kept if kind == 1)

    names = [main_name(j) for j in mains] + [pair_name(j, k) for j, k in pairs]
    M = build_named_columns(X, names)
    src = DenseColumnSource(M, names)
    lam, path = cross_validate(src, y, cfg.folds, cfg.lasso, seed=cfg.seed)
    return BaselineModel(
        method="sis", fit=path.best_fit, p=p, best_lambda=lam,
        selected_mains=mains, selected_pairs=pairs,
    )


def fit_oracle_ls(data: Dataset, main_indices, pairs) -> BaselineModel:
    """Unpenalized least squares on exactly the given true columns."""
    y = _require_response(data)
    mains = tuple(int(j) for j in main_indices)
    pairs = tuple((min(j, k), max(j, k)) for j, k in pairs)
    if len(mains) + len(pairs) >= data.n:
        raise ConfigError("oracle support must be smaller than n")
    names = [main_name(j) for j in mains] + [pair_name(j, k) for j, k in pairs]
    M = build_named_columns(data.X, names)
    A = np.column_stack([np.ones(data.n), M]) if names else np.ones((data.n, 1))
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1]:
        warnings.warn(
            "oracle design is rank deficient; using the pseudoinverse solution",
            RuntimeWarning,
        )
    named = {nm: float(c) for nm, c in zip(names, coef[1:]) if c != 0.0}
    idx_coefs = {i: float(c) for i, c in enumerate(coef[1:]) if c != 0.0}
    fit = LassoFit(
        lam=0.0, intercept=float(coef[0]), coefficients=named,
        n_iterations=1, converged=True, kkt_max_violation=0.0,
        index_coefficients=idx_coefs,
    )
    return BaselineModel(
        method="oracle_ls", fit=fit, p=data.p,
        selected_mains=mains, selected_pairs=pairs,
    )


def evaluate(model, test: Dataset) -> dict:
    """Held-out mean squared error and the normalized error ratio
    ||y - yhat||^2 / ||y||^2 (smaller is better; 0 means perfect)."""
    y = _require_response(test)
    pred = model.predict(test.X)
    err = y - pred
    mse = float(err @ err) / test.n
    denom = float(y @ y)
    r2 = None if denom == 0.0 else float(err @ err) / denom
    return {"mse": mse, "r_squared_normalized": r2}


# ---------------------------------------------------------------------------
# Model files: structured text, sufficient for exact prediction reload.
# ---------------------------------------------------------------------------

def _fit_to_json(fit: LassoFit) -> dict:
    return {
        "lambda": fit.lam,
        "intercept": fit.intercept,
        "coefficients": fit.coefficients,
        "n_iterations": fit.n_iterations,
        "converged": fit.converged,
        "kkt_max_violation": fit.kkt_max_violation,
    }


def _fit_from_json(obj: dict) -> LassoFit:
    return LassoFit(
        lam=obj["lambda"], intercept=obj["intercept"],
        coefficients=dict(obj["coefficients"]),
        n_iterations=obj["n_iterations"], converged=obj["converged"],
        kkt_max_violation=obj["kkt_max_violation"],
    )


def save_model(model, path) -> None:
    if isinstance(model, SprinterModel):
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "method": model.method,
            "p": model.p,
            "tau_ordering": TAU_ORDERING_TAG,
            "seed": model.seed,
            "status": model.status,
            "chosen_lambdas": model.chosen_lambdas,
            "screened_pairs": [list(pr) for pr in model.screened_pairs],
            "screened_scores": [s.score for s in model.screened.selected],
            "screen_mode": model.screened.mode,
            "pass_stats": model.screened.pass_stats,
            "step1": _fit_to_json(model.step1),
            "fit": _fit_to_json(model.step3),
        }
    elif isinstance(model, BaselineModel):
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "method": model.method,
            "p": model.p,
            "tau_ordering": TAU_ORDERING_TAG,
            "best_lambda": model.best_lambda,
            "selected_mains": list(model.selected_mains) if model.selected_mains else None,
            "selected_pairs": [list(pr) for pr in model.selected_pairs] if model.selected_pairs else None,
            "fit": _fit_to_json(model.fit),
        }
    else:
        raise ConfigError(f"cannot serialize model of type {type(model).__name__}")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class LoadedModel:
    method: str
    p: int
    fit: LassoFit
    document: dict

    def predict(self, X_new) -> np.ndarray:
        return lasso_predict(self.fit, X_new)


def load_model(path) -> LoadedModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("tau_ordering") != TAU_ORDERING_TAG:
        raise InputError(f"{path}: unknown pair-ordering tag {doc.get('tau_ordering')!r}")
    return LoadedModel(
        method=doc["method"], p=doc["p"], fit=_fit_from_json(doc["fit"]), document=doc,
    )
