"""Analytic population quantities and Monte-Carlo verifiers.

Two closed-form regimes are implemented end-to-end: unit-variance
Gaussian main effects (product moments via Isserlis) and independent
Bernoulli main effects (exact four-outcome enumeration).  On top of
these sit checkable conclusions of the theory: the heavy-tail moment
bound E|U|^k <= 2 * norm^k * (k/nu) * Gamma(k/nu) for Orlicz-bounded
variables, and the screening-recovery experiment (the true interaction
lands in the screened set with frequency -> 1 while the set stays below
an analytic size budget).

Absolute constants left unspecified by the theory are never
instantiated; every check here is a containment, order, or monotonicity
property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, TauMap
from .errors import ConfigError, NumericError
from .lasso import LassoConfig, cross_validate, predict_on_source
from .columns import DenseColumnSource
from .screen import screen_threshold, screen_topm
from .simgen import gen_gaussian_ar


# ---------------------------------------------------------------------------
# Gaussian closed forms (unit-diagonal covariance)
# ---------------------------------------------------------------------------

def _check_unit_diagonal(main_cov: np.ndarray) -> np.ndarray:
    main_cov = np.asarray(main_cov, dtype=np.float64)
    if main_cov.ndim != 2 or main_cov.shape[0] != main_cov.shape[1]:
        raise ConfigError("main-effect covariance must be square")
    if not np.allclose(np.diag(main_cov), 1.0, atol=1e-12):
        raise ConfigError("Gaussian closed forms require a unit-diagonal covariance")
    return main_cov


def gaussian_interaction_cov(main_cov, pair_a, pair_b) -> float:
    """Cov(Z_a, Z_b) for products of zero-mean unit-variance Gaussians:
    rho_jt * rho_ks + rho_js * rho_kt for pairs a=(j,k), b=(t,s)."""
    R = _check_unit_diagonal(main_cov)
    j, k = (i - 1 for i in pair_a)
    t, s = (i - 1 for i in pair_b)
    return float(R[j, t] * R[k, s] + R[j, s] * R[k, t])


def gaussian_pair_variance(main_cov, pair) -> float:
    """Var(Z_jk) = 1 + rho_jk^2."""
    R = _check_unit_diagonal(main_cov)
    j, k = (i - 1 for i in pair)
    return float(1.0 + R[j, k] ** 2)


def gaussian_pair_second_moment(main_cov, pair) -> float:
    """E(Z_jk^2) = 1 + 2 rho_jk^2."""
    R = _check_unit_diagonal(main_cov)
    j, k = (i - 1 for i in pair)
    return float(1.0 + 2.0 * R[j, k] ** 2)


def gaussian_pair_cov_matrix(main_cov, pairs) -> np.ndarray:
    """Covariance matrix of the listed interaction columns."""
    R = _check_unit_diagonal(main_cov)
    ja = np.array([p[0] - 1 for p in pairs])
    ka = np.array([p[1] - 1 for p in pairs])
    return R[np.ix_(ja, ja)] * R[np.ix_(ka, ka)] + R[np.ix_(ja, ka)] * R[np.ix_(ka, ja)]


# ---------------------------------------------------------------------------
# Independent Bernoulli closed forms
# ---------------------------------------------------------------------------

def _check_prob(value: float, name: str) -> float:
    if not (0.0 < value < 1.0):
        raise ConfigError(f"{name} must be strictly inside (0, 1), got {value}")
    return float(value)


def bernoulli_screening_signal(p1: float, p2: float, gamma: float) -> dict:
    """Closed forms for one interaction of independent Bernoullis.

    psi    = Var(Z_12) = p1 p2 (1 - p1 p2)
    cov_zw = Cov(Z_12, W_12) = p1 p2 (1 + p1 p2 - p1 - p2)
    eta    = (2/3) * |1 + p1 p2 - p1 - p2| / (1 - p1 p2) * |gamma|,
    the detection threshold on the nonempty-target branch.
    """
    p1 = _check_prob(p1, "p1")
    p2 = _check_prob(p2, "p2")
    prod = p1 * p2
    psi = prod * (1.0 - prod)
    cov_zw = prod * (1.0 + prod - p1 - p2)
    eta = (2.0 / 3.0) * abs(1.0 + prod - p1 - p2) / (1.0 - prod) * abs(gamma)
    return {"psi": psi, "cov_zw": cov_zw, "eta": eta}


def bernoulli_enumerate_moments(p1: float, p2: float) -> dict:
    """Exact moments of (Z_12, W_12) by summing the four (X1, X2) outcomes.

    The independent brute-force oracle for the closed forms above:
    W_12 = Z_12 - (p2 X1 + p1 X2).
    """
    p1 = _check_prob(p1, "p1")
    p2 = _check_prob(p2, "p2")
    ez = ez2 = ew = ezw = 0.0
    for x1 in (0.0, 1.0):
        for x2 in (0.0, 1.0):
            w_outcome = (p1 if x1 else 1.0 - p1) * (p2 if x2 else 1.0 - p2)
            z = x1 * x2
            w = z - (p2 * x1 + p1 * x2)
            ez += w_outcome * z
            ez2 += w_outcome * z * z
            ew += w_outcome * w
            ezw += w_outcome * z * w
    return {
        "psi": ez2 - ez * ez,
        "cov_zw": ezw - ez * ew,
        "mean_z": ez,
    }


def bernoulli_main_cov(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    for v in probs:
        _check_prob(float(v), "success probability")
    return np.diag(probs * (1.0 - probs))


def bernoulli_cross_cov(probs, pairs) -> np.ndarray:
    """Cov(X_j, Z_ts) for independent Bernoullis, p x len(pairs).

    Nonzero only when j is one of the pair: p_t p_s (1 - p_j) for j in
    {t, s}, t != s, and p_j (1 - p_j) for the square (j, j).
    """
    probs = np.asarray(probs, dtype=np.float64)
    p = probs.shape[0]
    out = np.zeros((p, len(pairs)))
    for c, (t, s) in enumerate(pairs):
        pt, ps = probs[t - 1], probs[s - 1]
        if t == s:
            out[t - 1, c] = pt * (1.0 - pt)
        else:
            out[t - 1, c] = pt * ps * (1.0 - pt)
            out[s - 1, c] = pt * ps * (1.0 - ps)
    return out


def _bernoulli_product_mean(probs, indices) -> float:
    # E of a product of independent 0/1 variables: X^2 = X, so each
    # distinct index contributes its probability once.
    out = 1.0
    for i in set(indices):
        out *= probs[i - 1]
    return out


def bernoulli_pair_cov_matrix(probs, pairs) -> np.ndarray:
    """Cov(Z_a, Z_b) over the listed pairs, by exact moment products."""
    probs = np.asarray(probs, dtype=np.float64)
    L = len(pairs)
    out = np.empty((L, L))
    means = [_bernoulli_product_mean(probs, pr) for pr in pairs]
    for a in range(L):
        for b in range(a, L):
            joint = _bernoulli_product_mean(probs, pairs[a] + pairs[b])
            out[a, b] = out[b, a] = joint - means[a] * means[b]
    return out


# ---------------------------------------------------------------------------
# Reparameterization: pure interactions and their covariance
# ---------------------------------------------------------------------------

def pure_interaction_decompose(main_cov, cross_cov, pair_cov, interaction_coefs) -> dict:
    """Split interaction signal into its main-effect shadow and residue.

    theta_shift = Sigma^{-1} Phi gamma is the main-effect coefficient
    shift that absorbs the explainable part; pure_cov = Psi - Phi'
    Sigma^{-1} Phi is the covariance of what remains.  For zero-mean
    Gaussian mains Phi = 0, so theta_shift = 0 and pure_cov = Psi.
    """
    main_cov = np.asarray(main_cov, dtype=np.float64)
    cross_cov = np.asarray(cross_cov, dtype=np.float64)
    pair_cov = np.asarray(pair_cov, dtype=np.float64)
    gamma = np.asarray(interaction_coefs, dtype=np.float64)
    cond = np.linalg.cond(main_cov)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericError(
            f"main-effect covariance is numerically singular (cond = {cond:.3e})"
        )
    inv_phi = np.linalg.solve(main_cov, cross_cov)
    theta_shift = inv_phi @ gamma
    pure_cov = pair_cov - cross_cov.T @ inv_phi
    return {"theta_shift": theta_shift, "pure_cov": pure_cov}


@dataclass(frozen=True)
class ScreeningSignal:
    """Population screening strengths and the detection threshold."""

    population_scores: np.ndarray  # (pure_cov @ gamma) / sqrt(diag(pair_cov))
    threshold: float  # two-thirds of the weakest target strength
    target_pairs: tuple[tuple[int, int], ...]


def screening_signal(pair_cov, pure_cov, interaction_coefs, pairs, target_pairs) -> ScreeningSignal:
    """Per-pair population score and the (2/3) * min-over-target threshold."""
    pair_cov = np.asarray(pair_cov, dtype=np.float64)
    pure_cov = np.asarray(pure_cov, dtype=np.float64)
    gamma = np.asarray(interaction_coefs, dtype=np.float64)
    scores = (pure_cov @ gamma) / np.sqrt(np.diag(pair_cov))
    target_pairs = tuple(target_pairs)
    if not target_pairs:
        threshold = math.inf
    else:
        index = {pr: i for i, pr in enumerate(pairs)}
        threshold = (2.0 / 3.0) * min(abs(scores[index[pr]]) for pr in target_pairs)
    return ScreeningSignal(scores, float(threshold), target_pairs)


# ---------------------------------------------------------------------------
# Heavy-tail moment bound
# ---------------------------------------------------------------------------

# Closed-form Orlicz norms: for a standard Gaussian U and nu = 2,
# E exp(U^2 / z^2) = (1 - 2/z^2)^{-1/2} equals 2 at z^2 = 8/3.  Products
# of independent standard Gaussians carry the standard norm *bound*
# norm(X)^n_factors at nu = 2/n_factors.
_GAUSS_PSI2 = math.sqrt(8.0 / 3.0)

MOMENT_DISTRIBUTIONS = {
    "gaussian": {"factors": 1, "nu": 2.0, "norm": _GAUSS_PSI2},
    "gaussian_product_3": {"factors": 3, "nu": 2.0 / 3.0, "norm": _GAUSS_PSI2 ** 3},
    "gaussian_product_4": {"factors": 4, "nu": 0.5, "norm": _GAUSS_PSI2 ** 4},
}


def orlicz_norm_from_samples(samples, nu: float, tol: float = 1e-12) -> float:
    """Root of mean(exp(|u|^nu / z^nu)) = 2 by bisection on z.

    The sample-mean quadrature of the defining expectation; exponents are
    clipped at 700 to avoid overflow, which only affects z far below the
    root where the mean is astronomically above 2 anyway.
    """
    u = np.abs(np.asarray(samples, dtype=np.float64).ravel()) ** nu

    def crosses(z: float) -> bool:
        return float(np.mean(np.exp(np.minimum(u / z ** nu, 700.0)))) <= 2.0

    lo, hi = 1.0, 1.0
    while not crosses(hi):
        hi *= 2.0
        if hi > 1e12:
            raise NumericError("Orlicz norm bisection failed to bracket")
    while crosses(lo):
        lo /= 2.0
        if lo < 1e-12:
            return 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if crosses(mid):
            hi = mid
        else:
            lo = mid
    return hi


def moment_bound_check(distribution: str, nu: float, k: int, mc_n: int,
                       seed: int = 0) -> dict:
    """Monte-Carlo E|U|^k against 2 * norm^k * (k/nu) * Gamma(k/nu).

    ``holds`` allows three standard errors of simulation slack on the
    left side.  Unknown distributions are a configuration error.
    """
    info = MOMENT_DISTRIBUTIONS.get(distribution)
    if info is None:
        raise ConfigError(
            f"unknown distribution {distribution!r}; "
            f"pick one of {sorted(MOMENT_DISTRIBUTIONS)}"
        )
    if k < 1:
        raise ConfigError(f"k must be a positive integer, got {k}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(mc_n)
    for _ in range(info["factors"] - 1):
        u = u * rng.standard_normal(mc_n)
    if math.isclose(nu, info["nu"], rel_tol=1e-9):
        norm = info["norm"]
    else:
        norm = orlicz_norm_from_samples(u[: min(mc_n, 10 ** 6)], nu)
    absk = np.abs(u) ** k
    lhs = float(absk.mean())
    se = float(absk.std(ddof=1) / math.sqrt(mc_n))
    rhs = 2.0 * norm ** k * (k / nu) * math.gamma(k / nu)
    return {"lhs": lhs, "rhs": rhs, "se": se, "holds": lhs <= rhs + 3.0 * se,
            "norm": norm}


# ---------------------------------------------------------------------------
# Screening recovery at desk scale
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecoveryScenario:
    """Single-interaction truth with an analytic detection threshold."""

    kind: str = "gaussian"  # "gaussian" | "bernoulli"
    p: int = 50
    pair: tuple[int, int] = (1, 2)
    gamma: float = 3.0
    sigma: float = 1.0
    rho: float = 0.0  # Gaussian feature correlation, AR(rho)
    prob: float = 0.5  # Bernoulli success probability
    eta: float | None = None  # default: the analytic threshold
    mode: str = "threshold"  # or "topm"
    m: int | None = None  # for topm mode; default n
    fit_step1: bool = True
    lasso: LassoConfig = field(default_factory=lambda: LassoConfig(n_lambda=50))
    folds: int = 5

    def analytic_eta(self) -> float:
        j, k = self.pair
        if self.kind == "gaussian":
            rho_jk = self.rho ** abs(j - k)
            return (2.0 / 3.0) * math.sqrt(1.0 + rho_jk ** 2) * abs(self.gamma)
        if self.kind == "bernoulli":
            return bernoulli_screening_signal(self.prob, self.prob, self.gamma)["eta"]
        raise ConfigError(f"unknown scenario kind {self.kind!r}")

    def size_budget(self) -> float:
        """4 eta^{-2} lambda_max(corr-scaled pure covariance) Var(W'gamma)."""
        eta = self.eta if self.eta is not None else self.analytic_eta()
        if eta == 0.0 or not math.isfinite(eta):
            return math.inf
        tm = TauMap(self.p)
        pairs = [tm.tau_inverse(ell) for ell in range(1, tm.q + 1)]
        gamma_vec = np.zeros(tm.q)
        gamma_vec[tm.tau(*self.pair) - 1] = self.gamma
        if self.kind == "gaussian":
            R = np.array([[self.rho ** abs(a - b) for b in range(self.p)]
                          for a in range(self.p)])
            pair_cov = gaussian_pair_cov_matrix(R, pairs)
            pure_cov = pair_cov  # zero-mean Gaussian: nothing to project out
        else:
            probs = np.full(self.p, self.prob)
            pair_cov = bernoulli_pair_cov_matrix(probs, pairs)
            dec = pure_interaction_decompose(
                bernoulli_main_cov(probs), bernoulli_cross_cov(probs, pairs),
                pair_cov, gamma_vec,
            )
            pure_cov = dec["pure_cov"]
        d = 1.0 / np.sqrt(np.diag(pair_cov))
        scaled = pure_cov * d[:, None] * d[None, :]
        lam_max = float(np.linalg.eigvalsh(scaled)[-1])
        var_w = float(gamma_vec @ pure_cov @ gamma_vec)
        return 4.0 * lam_max * var_w / eta ** 2

    def generate(self, n: int, seed: int) -> Dataset:
        rng = np.random.default_rng(seed)
        if self.kind == "gaussian":
            X = gen_gaussian_ar(n, self.p, rho=self.rho, seed=seed).X
        elif self.kind == "bernoulli":
            X = (rng.random((n, self.p)) < self.prob).astype(np.float64)
        else:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        j, k = self.pair
        noise_rng = np.random.default_rng((seed, 1))
        y = self.gamma * X[:, j - 1] * X[:, k - 1] + self.sigma * noise_rng.standard_normal(n)
        return Dataset(X, y)


def screening_recovery_experiment(scenario: RecoveryScenario, n_grid, reps: int,
                                  base_seed: int = 0) -> list[dict]:
    """Frequency, over seeded repetitions, that the true pair is screened.

    Each repetition draws fresh data, fits the step-1 lasso on main
    effects, screens the residual, and records containment of the true
    pair plus the screened-set size against the scenario's budget.
    """
    eta = scenario.eta if scenario.eta is not None else scenario.analytic_eta()
    budget = scenario.size_budget()
    rows = []
    for n in n_grid:
        hits = 0
        sizes = []
        within = 0
        for rep in range(reps):
            seed = base_seed + 100_000 * rep + n
            data = scenario.generate(n, seed)
            if scenario.fit_step1:
                src = DenseColumnSource(data.X, [f"X{j}" for j in range(1, data.p + 1)])
                _, path = cross_validate(src, data.y, scenario.folds,
                                         scenario.lasso, seed=seed)
                resid = data.y - predict_on_source(src, path.best_fit)
            else:
                resid = data.y.copy()
            if scenario.mode == "threshold":
                result = screen_threshold(data.X, resid, eta)
            else:
                result = screen_topm(data.X, resid, scenario.m or n)
            pairs = {s.pair for s in result.selected}
            hits += scenario.pair in pairs
            sizes.append(len(pairs))
            within += len(pairs) <= budget
        rows.append({
            "n": n,
            "reps": reps,
            "recovery_freq": hits / reps,
            "mean_selected": float(np.mean(sizes)),
            "budget": budget,
            "budget_freq": within / reps,
        })
    return rows


def recovery_is_monotone(rows, slack_se: float = 3.0) -> bool:
    """Nondecreasing recovery over the n grid, within binomial noise."""
    for a, b in zip(rows, rows[1:]):
        se = math.sqrt(max(a["recovery_freq"] * (1 - a["recovery_freq"]), 1e-12)
                       / a["reps"])
        if b["recovery_freq"] < a["recovery_freq"] - slack_se * se:
            return False
    return True
