"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``predict``, ``bench``,
``oracle-check``, ``replay``.  Every run writes a manifest (resolved
configuration, seed, input/output digests, wall-clock and peak-memory
measurements) so that any result can be reproduced exactly; ``replay``
re-executes a manifest and fails if any output digest changes.

Exit codes: 0 success, 2 configuration, 3 input/schema, 4 resource
budget, 5 convergence/numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import resource
import sys
import time
import tracemalloc

import numpy as np

from . import __version__
from .core import Dataset, read_delimited
from .errors import (
    ConfigError,
    ConvergenceError,
    InputError,
    NumericError,
    ResourceBudgetError,
    SprinterError,
)
from .lasso import LassoConfig
from .oracle import (
    RecoveryScenario,
    bernoulli_enumerate_moments,
    bernoulli_screening_signal,
    gaussian_pair_cov_matrix,
    moment_bound_check,
    recovery_is_monotone,
    screening_recovery_experiment,
)
from .pipeline import (
    SprinterConfig,
    TauMap,
    evaluate,
    fit_apl,
    fit_mel,
    fit_sis_lasso,
    fit_sprinter,
    load_model,
    save_model,
)
from .simgen import (
    gen_binary_tree,
    gen_gaussian_ar,
    make_response,
    structure,
    tree_structure,
    write_simulation,
)

EXIT_CODES = {
    ConfigError: 2,
    InputError: 3,
    ResourceBudgetError: 4,
    ConvergenceError: 5,
    NumericError: 5,
}

BENCH_P_GRID = (100, 200, 400, 1000, 2000)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, subcommand, config, seed, inputs, outputs, timing):
    doc = {
        "tool": "sprinter",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "timing": timing,
        "memory": {
            "ru_maxrss_kb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest_path(args, default_anchor) -> str:
    if getattr(args, "manifest", None):
        return args.manifest
    return str(default_anchor) + ".manifest.json"


def _env_workers(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("SPRINTER_THREADS", "1"))


def _load_dataset(args) -> Dataset:
    if args.data:
        return read_delimited(args.data, response=_response_arg(args))
    if not (args.x and args.y):
        raise ConfigError("provide --data (with --response-col) or both --x and --y")
    dx = read_delimited(args.x)
    dy = read_delimited(args.y)
    yvec = dy.X[:, 0] if dy.y is None else dy.y
    return Dataset(dx.X, yvec, dx.feature_names)


def _response_arg(args):
    col = args.response_col
    if col is None:
        return None
    try:
        return int(col)
    except ValueError:
        return col


def _sprinter_config(args, n_hint=None) -> SprinterConfig:
    lasso = LassoConfig(n_lambda=args.n_lambda)
    apl_cap = int(os.environ.get("SPRINTER_APL_CAP", "5000"))
    return SprinterConfig(
        include_squares_step1=args.include_squares,
        m=args.m,
        eta=args.eta,
        folds=args.cv,
        seed=args.seed,
        lasso=lasso,
        workers=_env_workers(args),
        apl_p_cap=apl_cap,
    )


def _fit_once(method, data, cfg, sis_m=None):
    t0 = time.perf_counter()
    if method == "sprinter":
        model = fit_sprinter(data, cfg)
    elif method == "apl":
        model = fit_apl(data, cfg)
    elif method == "mel":
        model = fit_mel(data, cfg)
    elif method == "sis":
        model = fit_sis_lasso(data, sis_m or (cfg.m or data.n), cfg)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return model, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = args.seed
    if args.design == "tree":
        data = gen_binary_tree(args.depth, args.leaf_prob, args.n, seed)
        spec = tree_structure(args.depth, args.mir_preset)
    elif args.design == "gaussian":
        if args.p is None:
            raise ConfigError("--p is required for the gaussian design")
        data = gen_gaussian_ar(args.n, args.p, args.rho, seed)
        spec = structure(args.structure, args.p)
    else:
        raise ConfigError(f"unknown design {args.design!r}")
    sim = make_response(data, spec, args.snr, args.snr_convention,
                        seed=seed, compute_mir=True)
    sidecar = args.sidecar or (args.out + ".truth.json")
    write_simulation(sim, args.out, sidecar)
    print(f"wrote {args.out} (n={sim.dataset.n}, p={sim.dataset.p}) "
          f"sigma={sim.sigma:.6g} mir={sim.mir:.6g}")
    _write_manifest(
        _manifest_path(args, args.out), "simulate",
        {k: getattr(args, k) for k in
         ("design", "depth", "leaf_prob", "p", "n", "rho", "structure",
          "mir_preset", "snr", "snr_convention", "out", "sidecar")},
        seed, inputs=[], outputs=[args.out, sidecar],
        timing={"wall_s": None},
    )
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    data = _load_dataset(args)
    if data.y is None:
        raise ConfigError("fit needs a response: use --response-col or --y")
    cfg = _sprinter_config(args)

    if args.protocol == "riboflavin-split":
        return _riboflavin_protocol(args, data, cfg)

    model, fit_wall = _fit_once(args.method, data, cfg, sis_m=args.m)
    save_model(model, args.out)
    if args.method == "sprinter":
        print(f"lambda step1 = {model.chosen_lambdas['step1']:.6g}, "
              f"step3 = {model.chosen_lambdas['step3']:.6g}")
        print(f"screened set size = {len(model.screened.selected)} "
              f"(pairs scanned = {model.screened.pass_stats['pairs_scanned']})")
        nz = len(model.step3.coefficients)
    else:
        if model.best_lambda is not None:
            print(f"lambda = {model.best_lambda:.6g}")
        nz = len(model.fit.coefficients)
    print(f"nonzero coefficients = {nz}")
    print(f"fit wall-clock = {fit_wall:.3f}s")
    print(f"model written to {args.out}")
    inputs = [p for p in (args.data, args.x, args.y) if p]
    _write_manifest(
        _manifest_path(args, args.out), "fit",
        {k: getattr(args, k) for k in
         ("method", "data", "x", "y", "response_col", "m", "eta", "cv",
          "include_squares", "n_lambda", "protocol", "out")},
        args.seed, inputs=inputs, outputs=[args.out],
        timing={"fit_wall_s": fit_wall},
    )
    return 0


def _riboflavin_protocol(args, data: Dataset, cfg: SprinterConfig) -> int:
    """Swap-split evaluation: train on A / test on B, then reverse.

    The published experiment used one random 30/31 split of its n=71
    rows with an unstated seed, so exact replication is impossible; the
    seed here is required and recorded.
    """
    if args.seed is None:
        raise ConfigError("--seed is required for --protocol riboflavin-split")
    n = data.n
    size_a = args.split_a if args.split_a is not None else (30 if n == 71 else n // 2)
    if not 1 <= size_a < n:
        raise ConfigError(f"split size {size_a} out of range for n={n}")
    perm = np.random.default_rng(args.seed).permutation(n)
    part_a = np.sort(perm[:size_a])
    part_b = np.sort(perm[size_a:])
    rows = []
    for name, train_idx, test_idx in (("A->B", part_a, part_b),
                                      ("B->A", part_b, part_a)):
        train = data.restrict_rows(train_idx)
        test = data.restrict_rows(test_idx)
        model, fit_wall = _fit_once(args.method, train, cfg, sis_m=args.m)
        metrics = evaluate(model, test)
        rows.append((name, fit_wall, metrics))
        print(f"{name}: fit {fit_wall:.3f}s  mse {metrics['mse']:.6g}  "
              f"r2_normalized {metrics['r_squared_normalized']:.6g}")
    out = args.out
    with open(out, "w") as fh:
        fh.write("direction\tfit_seconds\tmse\tr_squared_normalized\n")
        for name, fit_wall, metrics in rows:
            fh.write(f"{name}\t{fit_wall!r}\t{metrics['mse']!r}\t"
                     f"{metrics['r_squared_normalized']!r}\n")
    print(f"protocol table written to {out}")
    _write_manifest(
        _manifest_path(args, out), "fit",
        {k: getattr(args, k) for k in
         ("method", "data", "response_col", "m", "eta", "cv",
          "include_squares", "n_lambda", "protocol", "split_a", "out")},
        args.seed, inputs=[p for p in (args.data, args.x, args.y) if p],
        outputs=[out], timing={"fit_wall_s": sum(r[1] for r in rows)},
    )
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def cmd_predict(args) -> int:
    model = load_model(args.model)
    data = read_delimited(args.data, response=_response_arg(args))
    pred = model.predict(data.X)
    with open(args.out, "w") as fh:
        fh.write("prediction\n")
        for v in pred:
            fh.write(f"{float(v)!r}\n")
    print(f"predictions written to {args.out}")
    if data.y is not None:
        metrics = evaluate(model, data)
        print(f"mse {metrics['mse']:.6g}  "
              f"r2_normalized {metrics['r_squared_normalized']:.6g}")
    _write_manifest(
        _manifest_path(args, args.out), "predict",
        {k: getattr(args, k) for k in ("model", "data", "response_col", "out")},
        None, inputs=[args.model, args.data], outputs=[args.out],
        timing={"wall_s": None},
    )
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    p_grid = [int(v) for v in args.p_grid.split(",")]
    methods = args.methods.split(",")
    header = ("method\tp\tn\trep\tfit_seconds\tpeak_alloc_bytes\ttest_mse\t"
              "r2_normalized\tscreened\tpairs_scanned\tapl_design_bytes_estimate")
    lines = [header]
    for p in p_grid:
        for rep in range(args.reps):
            seed = args.seed + rep
            data = gen_gaussian_ar(args.n + args.n_test, p, seed=seed)
            spec = structure(args.structure, p)
            sim = make_response(data, spec, args.snr, "root", seed=seed)
            train = sim.dataset.restrict_rows(np.arange(args.n))
            test = sim.dataset.restrict_rows(np.arange(args.n, args.n + args.n_test))
            q = TauMap(p).q
            design_estimate = 8 * args.n * (p + q)
            for method in methods:
                cfg = _sprinter_config(args)
                model, fit_wall = _fit_once(method, train, cfg)
                peak = ""
                if not args.skip_memory:
                    tracemalloc.start()
                    _fit_once(method, train, cfg)
                    _, peak = tracemalloc.get_traced_memory()
                    tracemalloc.stop()
                metrics = evaluate(model, test)
                screened = ""
                scanned = ""
                if method == "sprinter":
                    screened = len(model.screened.selected)
                    scanned = model.screened.pass_stats["pairs_scanned"]
                lines.append(
                    f"{method}\t{p}\t{args.n}\t{rep}\t{fit_wall!r}\t{peak}\t"
                    f"{metrics['mse']!r}\t{metrics['r_squared_normalized']!r}\t"
                    f"{screened}\t{scanned}\t{design_estimate}"
                )
                print(lines[-1])
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"benchmark table written to {args.out}")
    _write_manifest(
        _manifest_path(args, args.out), "bench",
        {k: getattr(args, k) for k in
         ("p_grid", "methods", "n", "n_test", "reps", "snr", "structure",
          "skip_memory", "n_lambda", "cv", "out")},
        args.seed, inputs=[], outputs=[args.out], timing={"wall_s": None},
    )
    return 0


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------

def _check(label, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {label}{(': ' + detail) if detail else ''}")
    return ok


def cmd_oracle_check(args) -> int:
    ok = True
    if args.suite == "bernoulli":
        grid = [0.1 * t for t in range(1, 10)]
        worst = 0.0
        for p1 in grid:
            for p2 in grid:
                sig = bernoulli_screening_signal(p1, p2, 1.0)
                enum = bernoulli_enumerate_moments(p1, p2)
                worst = max(worst, abs(sig["psi"] - enum["psi"]),
                            abs(sig["cov_zw"] - enum["cov_zw"]))
        ok &= _check("Bernoulli closed forms vs 4-outcome enumeration",
                     worst <= 1e-15, f"worst |diff| = {worst:.2e}")
    elif args.suite == "gaussian":
        rng = np.random.default_rng(args.seed)
        rho = 0.5
        n = 10 ** 6
        x1 = rng.standard_normal(n)
        x2 = rho * x1 + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
        z = x1 * x2
        var = float(z.var())
        ok &= _check("Var(Z) = 1 + rho^2 at rho=0.5 (Monte Carlo 1e6)",
                     abs(var - 1.25) / 1.25 < 0.01, f"sample variance {var:.4f}")
        ez2 = float((z * z).mean())
        ok &= _check("E(Z^2) = 1 + 2 rho^2", abs(ez2 - 1.5) / 1.5 < 0.01,
                     f"sample moment {ez2:.4f}")
        R = np.array([[rho ** abs(i - j) for j in range(3)] for i in range(3)])
        cov_analytic = gaussian_pair_cov_matrix(R, [(1, 2), (1, 3)])[0, 1]
        x3 = rho * x2 + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
        sample = float(np.mean(x1 * x2 * x1 * x3) - np.mean(x1 * x2) * np.mean(x1 * x3))
        ok &= _check("four-index covariance formula vs Monte Carlo",
                     abs(sample - cov_analytic) / abs(cov_analytic) < 0.01,
                     f"analytic {cov_analytic:.4f} sample {sample:.4f}")
    elif args.suite == "moments":
        cases = [("gaussian", 2.0), ("gaussian_product_3", 2.0 / 3.0),
                 ("gaussian_product_4", 0.5)]
        mc_n = 10 ** 6 if args.fast else 10 ** 7
        for dist, nu in cases:
            for k in (1, 2, 3, 4):
                res = moment_bound_check(dist, nu, k, mc_n, seed=args.seed)
                ok &= _check(f"moment bound {dist} k={k}", res["holds"],
                             f"lhs {res['lhs']:.4g} <= rhs {res['rhs']:.4g}")
    elif args.suite == "screening-recovery":
        scenario = RecoveryScenario(p=20 if args.fast else 50)
        grid = (100, 200) if args.fast else (100, 200, 400, 800)
        reps = 20 if args.fast else 200
        rows = screening_recovery_experiment(scenario, grid, reps, base_seed=args.seed)
        for row in rows:
            print(f"  n={row['n']}: recovery {row['recovery_freq']:.3f}, "
                  f"mean |set| {row['mean_selected']:.1f}, budget {row['budget']:.1f}")
        ok &= _check("recovery nondecreasing in n", recovery_is_monotone(rows))
        ok &= _check("final recovery >= 0.95", rows[-1]["recovery_freq"] >= 0.95)
    else:
        raise ConfigError(f"unknown suite {args.suite!r}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def cmd_replay(args) -> int:
    with open(args.manifest) as fh:
        doc = json.load(fh)
    sub = doc["subcommand"]
    config = doc["config"]
    argv = [sub]
    for key, value in config.items():
        if value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        else:
            argv.extend([flag, str(value)])
    if doc.get("seed") is not None:
        argv.extend(["--seed", str(doc["seed"])])
    print(f"replaying: sprinter {' '.join(argv)}")
    code = main(argv)
    if code != 0:
        return code
    for path, digest in doc["outputs"].items():
        new_digest = _sha256(path)
        if new_digest != digest:
            print(f"MISMATCH: {path} digest {new_digest[:12]} != recorded {digest[:12]}")
            return 1
        print(f"match: {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sprinter",
        description="Reluctant pairwise-interaction regression",
    )
    sub = ap.add_subparsers(dest="subcommand", required=True)

    sim = sub.add_parser("simulate", help="generate a simulated dataset")
    sim.add_argument("--design", choices=["tree", "gaussian"], required=True)
    sim.add_argument("--depth", type=int, default=5)
    sim.add_argument("--leaf-prob", type=float, default=0.1)
    sim.add_argument("--p", type=int)
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--rho", type=float, default=0.5)
    sim.add_argument("--structure", default="mixed")
    sim.add_argument("--mir-preset", default="medium",
                     choices=["large", "medium", "small"])
    sim.add_argument("--snr", type=float, default=3.0)
    sim.add_argument("--snr-convention", default="root",
                     choices=["squared", "root"])
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--sidecar")
    sim.add_argument("--manifest")
    sim.add_argument("--threads", type=int)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit a model to a dataset")
    fit.add_argument("--data")
    fit.add_argument("--x")
    fit.add_argument("--y")
    fit.add_argument("--response-col")
    fit.add_argument("--method", default="sprinter",
                     choices=["sprinter", "apl", "mel", "sis"])
    fit.add_argument("--m", type=int)
    fit.add_argument("--eta", type=float)
    fit.add_argument("--cv", type=int, default=5)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--n-lambda", type=int, default=100)
    fit.add_argument("--include-squares", action=argparse.BooleanOptionalAction,
                     default=True)
    fit.add_argument("--protocol", choices=["riboflavin-split"])
    fit.add_argument("--split-a", type=int)
    fit.add_argument("--out", required=True)
    fit.add_argument("--manifest")
    fit.add_argument("--threads", type=int)
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="predict from a saved model")
    pred.add_argument("--model", required=True)
    pred.add_argument("--data", required=True)
    pred.add_argument("--response-col")
    pred.add_argument("--out", required=True)
    pred.add_argument("--manifest")
    pred.add_argument("--threads", type=int)
    pred.set_defaults(func=cmd_predict)

    bench = sub.add_parser("bench", help="timing/memory benchmark table")
    bench.add_argument("--p-grid", default=",".join(str(v) for v in BENCH_P_GRID))
    bench.add_argument("--methods", default="sprinter,mel")
    bench.add_argument("--n", type=int, default=100)
    bench.add_argument("--n-test", type=int, default=200)
    bench.add_argument("--reps", type=int, default=1)
    bench.add_argument("--snr", type=float, default=3.0)
    bench.add_argument("--structure", default="mixed")
    bench.add_argument("--skip-memory", action="store_true")
    bench.add_argument("--cv", type=int, default=5)
    bench.add_argument("--n-lambda", type=int, default=100)
    bench.add_argument("--m", type=int)
    bench.add_argument("--eta", type=float)
    bench.add_argument("--include-squares", action=argparse.BooleanOptionalAction,
                       default=True)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", required=True)
    bench.add_argument("--manifest")
    bench.add_argument("--threads", type=int)
    bench.set_defaults(func=cmd_bench)

    oc = sub.add_parser("oracle-check", help="analytic oracle verification suites")
    oc.add_argument("--suite", required=True,
                    choices=["gaussian", "bernoulli", "moments", "screening-recovery"])
    oc.add_argument("--fast", action="store_true",
                    help="smaller Monte Carlo sizes for smoke runs")
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--threads", type=int)
    oc.set_defaults(func=cmd_oracle_check)

    rep = sub.add_parser("replay", help="re-run a manifest and verify outputs")
    rep.add_argument("manifest")
    rep.set_defaults(func=cmd_replay)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SprinterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
