"""Simulation designs: binary-tree features, AR(rho) Gaussian features,
named signal structures, SNR-calibrated noise, and the main-effect /
interaction signal ratio diagnostic.

All generation is pure and seed-driven: the same seed reproduces the
same bytes.  Indices in signal specifications are 1-based, matching the
pair convention of :mod:`sprinter.core`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .errors import ConfigError

STRUCTURES = (
    "mixed",
    "hierarchical",
    "anti_hierarchical",
    "interaction_only",
    "main_only",
    "squared_only",
)

MIR_PRESETS = {"large": 0.9, "medium": 0.5, "small": 0.1}


@dataclass(frozen=True)
class SignalSpec:
    """True-signal layout: which mains, squares, and pairs are active."""

    main_indices: tuple[int, ...]
    square_indices: tuple[int, ...]
    interaction_pairs: tuple[tuple[int, int], ...]
    beta_value: float = 2.0
    gamma_value: float = 3.0
    name: str = "custom"

    def validate(self, p: int) -> None:
        if any(not (1 <= j <= p) for j in self.main_indices):
            raise ConfigError(f"main index out of range for p={p}")
        if any(not (1 <= j <= p) for j in self.square_indices):
            raise ConfigError(f"square index out of range for p={p}")
        for j, k in self.interaction_pairs:
            if not (1 <= j <= p and 1 <= k <= p):
                raise ConfigError(f"pair ({j}, {k}) out of range for p={p}")

    def active_pairs(self) -> tuple[tuple[int, int], ...]:
        """All pairs carrying gamma: squares as (j, j), then listed pairs."""
        squares = tuple((j, j) for j in self.square_indices)
        ordered = tuple((min(j, k), max(j, k)) for j, k in self.interaction_pairs)
        return squares + ordered

    def theta(self, p: int) -> np.ndarray:
        out = np.zeros(p)
        for j in self.main_indices:
            out[j - 1] = self.beta_value
        return out


@dataclass(frozen=True)
class SimulatedData:
    """A generated dataset plus everything needed to reproduce it."""

    dataset: Dataset
    theta_star: np.ndarray
    gamma_star: dict[tuple[int, int], float]
    sigma: float
    structure_name: str
    seed: int
    snr: float
    snr_convention: str
    mir: float | None = None


def gen_binary_tree(depth: int, leaf_prob: float = 0.1, n: int = 100, seed: int = 0) -> Dataset:
    """Binary features from a perfect binary tree of the given depth.

    Leaves are independent Bernoulli(leaf_prob); each internal node is the
    maximum of the node values in its subtree (the union of the leaf
    events below it).  Column j holds node j in heap order: the root is
    node 1 and node v has children 2v and 2v+1, so p = 2**(depth+1) - 1.
    """
    if depth < 0:
        raise ConfigError(f"depth must be >= 0, got {depth}")
    if not (0.0 < leaf_prob < 1.0):
        raise ConfigError(f"leaf_prob must be in (0, 1), got {leaf_prob}")
    p = 2 ** (depth + 1) - 1
    rng = np.random.default_rng(seed)
    X = np.zeros((n, p))
    n_leaves = 2 ** depth
    X[:, n_leaves - 1:] = rng.random((n, n_leaves)) < leaf_prob
    for v in range(n_leaves - 1, 0, -1):  # internal nodes, bottom-up
        X[:, v - 1] = np.maximum(X[:, 2 * v - 1], X[:, 2 * v])
    return Dataset(X)


def gen_gaussian_ar(n: int, p: int, rho: float = 0.5, seed: int = 0) -> Dataset:
    """Zero-mean Gaussian rows with Cov(X_j, X_k) = rho**|j-k|.

    The AR(1) recursion X_j = rho*X_{j-1} + sqrt(1-rho^2)*xi_j realizes
    this covariance exactly.
    """
    if not abs(rho) < 1:
        raise ConfigError(f"|rho| must be < 1, got {rho}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = noise[:, 0]
    scale = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + scale * noise[:, j]
    return Dataset(X)


def structure(name: str, p: int) -> SignalSpec:
    """One of the six named Gaussian-study signal layouts (p >= 20)."""
    if p < 20:
        raise ConfigError(f"structures need p >= 20, got p={p}")
    one_to_six = tuple(range(1, 7))
    if name == "mixed":
        spec = SignalSpec(one_to_six, (1, 5, 15),
                          ((1, 5), (4, 18), (10, 11), (9, 17), (1, 13), (4, 17)),
                          name=name)
    elif name == "hierarchical":
        spec = SignalSpec(one_to_six, (1, 2, 3),
                          ((1, 3), (2, 4), (3, 4), (1, 8), (2, 8), (5, 10)),
                          name=name)
    elif name == "anti_hierarchical":
        spec = SignalSpec(one_to_six, (11, 12, 13),
                          ((11, 13), (12, 14), (13, 14), (11, 18), (12, 18), (15, 20)),
                          name=name)
    elif name == "interaction_only":
        spec = SignalSpec((), (),
                          ((1, 3), (2, 4), (3, 4), (1, 8), (2, 8), (5, 10)),
                          name=name)
    elif name == "main_only":
        spec = SignalSpec(one_to_six, (), (), name=name)
    elif name == "squared_only":
        spec = SignalSpec((), one_to_six, (), name=name)
    else:
        raise ConfigError(f"unknown structure {name!r}; pick one of {STRUCTURES}")
    spec.validate(p)
    return spec


# Ancestor-descendant node pairs (interaction column == descendant column)
# and disjoint-subtree pairs, in heap order; valid for any depth >= 2.
_TREE_AD_PAIRS = ((2, 4), (3, 6), (2, 5), (3, 7), (1, 2), (1, 3))
_TREE_INDEP_PAIRS = ((4, 6), (5, 7), (4, 7), (5, 6), (2, 6), (3, 4))


def tree_structure(depth: int, mir_preset: str = "medium") -> SignalSpec:
    """Signal layout for the binary-tree study.

    The preset controls how much interaction signal main effects can
    absorb, by choosing how many of the 6 active pairs are
    ancestor-descendant (their product equals the descendant column):
    large -> 5 of 6, medium -> 3, small -> 1.  The index sets themselves
    are artifact-defined presets, not a published table.
    """
    if depth < 2:
        raise ConfigError("tree presets need depth >= 2")
    if mir_preset not in MIR_PRESETS:
        raise ConfigError(f"unknown preset {mir_preset!r}; pick one of {sorted(MIR_PRESETS)}")
    n_ad = round(MIR_PRESETS[mir_preset] * 6)
    pairs = _TREE_AD_PAIRS[:n_ad] + _TREE_INDEP_PAIRS[: 6 - n_ad]
    return SignalSpec(
        main_indices=tuple(range(1, 7)),
        square_indices=(),  # squares duplicate mains on binary data
        interaction_pairs=pairs,
        name=f"tree_{mir_preset}_mir",
    )


def _signal_components(X: np.ndarray, spec: SignalSpec) -> tuple[np.ndarray, np.ndarray]:
    theta = spec.theta(X.shape[1])
    main_part = X @ theta
    inter_part = np.zeros(X.shape[0])
    for j, k in spec.active_pairs():
        inter_part += spec.gamma_value * X[:, j - 1] * X[:, k - 1]
    return main_part, inter_part


def make_response(data: Dataset, spec: SignalSpec, snr: float,
                  snr_convention: str = "root", seed: int = 0,
                  structure_name: str | None = None,
                  compute_mir: bool = False) -> SimulatedData:
    """Attach a response with noise calibrated to the realized signal.

    The signal-to-noise identity holds exactly by construction on the
    component norms s2 = ||main signal||^2 + ||interaction signal||^2:
    squared convention  s2 / (n * sigma^2) = snr,
    root convention     sqrt(s2 / (n * sigma^2)) = snr.
    """
    if snr <= 0:
        raise ConfigError(f"snr must be > 0, got {snr}")
    if snr_convention not in ("squared", "root"):
        raise ConfigError(f"snr_convention must be 'squared' or 'root', got {snr_convention!r}")
    spec.validate(data.p)
    main_part, inter_part = _signal_components(data.X, spec)
    s2 = float(main_part @ main_part) + float(inter_part @ inter_part)
    if s2 == 0.0:
        raise ConfigError("zero realized signal with finite snr")
    n = data.n
    if snr_convention == "squared":
        sigma = math.sqrt(s2 / (n * snr))
    else:
        sigma = math.sqrt(s2 / n) / snr
    rng = np.random.default_rng(seed)
    y = main_part + inter_part + sigma * rng.standard_normal(n)
    gamma = {pair: spec.gamma_value for pair in spec.active_pairs()}
    out = Dataset(data.X, y, data.feature_names)
    ratio = mir(data, spec) if compute_mir else None
    return SimulatedData(
        dataset=out,
        theta_star=spec.theta(data.p),
        gamma_star=gamma,
        sigma=sigma,
        structure_name=structure_name or spec.name,
        seed=seed,
        snr=snr,
        snr_convention=snr_convention,
        mir=ratio,
    )


def mir(data: Dataset, spec: SignalSpec) -> float:
    """Main-effect / pure-interaction signal ratio on this sample.

    Numerator: squared norm of the main-effect signal.  Denominator:
    squared norm of the interaction signal after each active interaction
    column is residualized on [1, X] by least squares, the sample
    analogue of removing everything main effects can explain.
    """
    spec.validate(data.p)
    pairs = spec.active_pairs()
    if not pairs:
        return math.inf
    theta = spec.theta(data.p)
    main_part = data.X @ theta
    num = float(main_part @ main_part)
    if num == 0.0 and not spec.main_indices:
        return 0.0
    A = np.column_stack([np.ones(data.n), data.X])
    pure = np.zeros(data.n)
    for j, k in pairs:
        z = data.X[:, j - 1] * data.X[:, k - 1]
        coef, *_ = np.linalg.lstsq(A, z, rcond=None)
        pure += spec.gamma_value * (z - A @ coef)
    den = float(pure @ pure)
    if den == 0.0:
        return math.inf
    return num / den


def write_simulation(sim: SimulatedData, data_path, sidecar_path) -> None:
    """Write the dataset as CSV (X1..Xp, y) plus a JSON truth sidecar."""
    X = sim.dataset.X
    y = sim.dataset.y
    header = [f"X{j}" for j in range(1, X.shape[1] + 1)] + ["y"]
    with open(data_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(X.shape[0]):
            fields = [repr(float(v)) for v in X[i]] + [repr(float(y[i]))]
            fh.write(",".join(fields) + "\n")
    sidecar = {
        "structure": sim.structure_name,
        "seed": sim.seed,
        "sigma": sim.sigma,
        "snr": sim.snr,
        "snr_convention": sim.snr_convention,
        "mir": None if sim.mir is None else (
            "inf" if math.isinf(sim.mir) else sim.mir
        ),
        "theta_star": {str(j + 1): v for j, v in enumerate(sim.theta_star) if v != 0.0},
        "gamma_star": {f"{j},{k}": v for (j, k), v in sim.gamma_star.items()},
        "n": sim.dataset.n,
        "p": sim.dataset.p,
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sidecar(path) -> dict:
    with open(path) as fh:
        out = json.load(fh)
    if out.get("mir") == "inf":
        out["mir"] = math.inf
    return out
