"""Command-line front end: dataset simulation, single fits, experiment
grids, and randomized self-checks.

Exit codes: 0 success, 1 check violation, 2 configuration or usage
error, 3 runtime/divergence error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .analysis import check_structure
from .experiment import (
    CSV_COLUMNS,
    ConfigError,
    PRESETS,
    evaluate_cell,
    format_value,
    load_config,
    load_dataset_config,
    preset_config,
    run_experiment,
    write_csv,
)
from .loss import bound_quantities, build_surrogate, loss_grad, loss_value, verify_lsc, verify_rsc
from .regularizers import RegularizerSpec, StepSizeError, penalty, prox
from .rng import derive_seed, substream
from .simulate import CovarianceSpec, load_dataset, make_dataset, save_dataset
from .solver import DivergenceError, SolverConfig
from .spectral import spectral_concave, spectral_concave_grad


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    config = load_dataset_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out = args.out or config.out
    if out is None:
        raise ConfigError("simulate: an output path is required (--out or config.out)")
    obs, model = config.realize()
    save_dataset(out, obs, model)
    print(
        f"wrote dataset to {out} (n={obs.n}, d1={config.d1}, d2={config.d2}, "
        f"corruption={config.corruption}, seed={config.seed})"
    )
    return 0


def _estimator_spec(args) -> RegularizerSpec:
    if args.reg == "nuclear":
        if args.shape is not None:
            raise ConfigError("solve: the nuclear penalty takes no --shape")
        return RegularizerSpec.nuclear(args.lam)
    if args.reg == "scad":
        return RegularizerSpec.scad(args.lam, a=3.7 if args.shape is None else args.shape)
    return RegularizerSpec.mcp(args.lam, b=2.0 if args.shape is None else args.shape)


def cmd_solve(args) -> int:
    obs, model = load_dataset(args.data)
    spec = _estimator_spec(args)
    if args.omega is not None:
        omega = args.omega
    else:
        factor = 1.5 if args.omega_factor is None else args.omega_factor
        omega = factor * model.nuclear_norm
    if omega < model.nuclear_norm:
        raise ConfigError(
            f"solve: omega {omega} is below the true nuclear norm "
            f"{model.nuclear_norm}; the truth must stay feasible"
        )
    solver_config = SolverConfig(
        omega=omega, tol=args.tol, max_iters=args.max_iters,
        step="backtracking" if args.step is None else args.step,
    )
    if obs.corruption == "additive":
        corruption_param = obs.sigma_w.op_norm
    elif obs.corruption == "missing":
        corruption_param = obs.rho
    else:
        corruption_param = 0.0
    row = evaluate_cell(
        build_surrogate(obs), model, spec, solver_config,
        seed=obs.seed, replicate=0, n=obs.n, corruption=obs.corruption,
        corruption_param=corruption_param, sigma_eps=obs.sigma_eps,
        timing=args.timing,
    )
    if args.out:
        write_csv([row], args.out)
        print(
            f"wrote 1 row to {args.out} (frob_error={row['frob_error']:.6g}, "
            f"rank_hat={row['rank_hat']}, iterations={row['iterations']}, "
            f"converged={row['converged']})"
        )
    else:
        print(",".join(CSV_COLUMNS))
        print(",".join(format_value(row[col]) for col in CSV_COLUMNS))
    return 0


def cmd_experiment(args) -> int:
    config = preset_config(args.preset) if args.preset else load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.threads < 1:
        raise ConfigError("experiment: --threads must be at least 1")
    out = args.out or config.out
    if out is None:
        raise ConfigError("experiment: an output path is required (--out or config.out)")
    rows = run_experiment(config, threads=args.threads, timing=args.timing)
    write_csv(rows, out)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_check(args) -> int:
    ok, lines = _SUITES[args.suite](args.trials, args.seed)
    for line in lines:
        print(line)
    print(f"{args.suite}: {'OK' if ok else 'FAILED'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# check suites


def _check_structure(trials, seed):
    report = check_structure(trials=trials or 1000, seed=seed)
    lines = [
        f"  {name}: {count} violations over {report.trials} trials "
        f"(worst margin {report.worst[name]:.3e})"
        for name, count in report.violations.items()
    ]
    return report.total_violations == 0, lines


def _fd_grad(fun, theta, h=1e-6):
    grad = np.zeros_like(theta)
    for idx in np.ndindex(*theta.shape):
        bump = np.zeros_like(theta)
        bump[idx] = h
        grad[idx] = (fun(theta + bump) - fun(theta - bump)) / (2.0 * h)
    return grad


_REGIME_SETTINGS = {
    # corruption kind -> (sigma_w, rho)
    "none": (None, 0.0),
    "additive": (lambda dim: CovarianceSpec.identity(dim, scale=0.2), 0.0),
    "missing": (None, 0.25),
}


def _regime_dataset(regime, d1, d2, n, seed):
    sigma_w_factory, rho = _REGIME_SETTINGS[regime]
    return make_dataset(
        d1=d1, d2=d2, rank=1, spectrum=np.array([2.0]),
        sigma_x=CovarianceSpec.ar1(d1 * d2, phi=0.3), corruption=regime,
        sigma_w=None if sigma_w_factory is None else sigma_w_factory(d1 * d2),
        rho=rho, sigma_eps=0.3, n=n, seed=seed,
    )


def _check_gradients(trials, seed):
    trials = trials or 20
    d1, d2 = 4, 3
    ok = True
    lines = []
    for regime in ("none", "additive", "missing"):
        obs, _ = _regime_dataset(regime, d1, d2, 80, derive_seed(seed, "grad-data", regime))
        pair = build_surrogate(obs)
        rng = substream(seed, "grad-points", regime)
        worst = 0.0
        done = 0
        while done < trials:
            theta = rng.standard_normal((d1, d2))
            s = np.linalg.svd(theta, compute_uv=False)
            # the spectral chain rule needs well-separated positive singular values
            if s[-1] < 1e-3 or np.min(s[:-1] - s[1:]) < 1e-3:
                continue
            spec = (
                RegularizerSpec.scad(0.8, a=3.7) if done % 2 == 0
                else RegularizerSpec.mcp(0.5, b=2.5)
            )
            concave_grad, degenerate = spectral_concave_grad(theta, spec)
            if degenerate:
                continue
            grad = loss_grad(pair, theta) + concave_grad
            fd = _fd_grad(lambda m: loss_value(pair, m) + spectral_concave(m, spec), theta)
            worst = max(worst, float(np.linalg.norm(grad - fd)) / max(float(np.linalg.norm(grad)), 1e-12))
            done += 1
        regime_ok = worst <= 1e-6
        ok = ok and regime_ok
        lines.append(
            f"  {regime}: max relative gradient error {worst:.3e} over {trials} points"
        )
    return ok, lines


def _check_prox(trials, seed):
    trials = trials or 1000
    rng = substream(seed, "prox-check")
    worst_gap = 0.0
    worst_dist = 0.0
    violations = 0
    for t in range(trials):
        kind = ("scad", "mcp", "nuclear")[t % 3]
        lam = float(rng.uniform(0.05, 2.0))
        if kind == "scad":
            spec = RegularizerSpec.scad(lam, a=float(rng.uniform(2.2, 4.5)))
        elif kind == "mcp":
            spec = RegularizerSpec.mcp(lam, b=float(rng.uniform(0.7, 4.0)))
        else:
            spec = RegularizerSpec.nuclear(lam)
        cap = 0.95 / spec.mu if spec.mu > 0.0 else 2.5
        step = float(rng.uniform(0.05, min(2.5, cap)))
        # the minimizer always lies in [-|v|, |v|]; pad the window by the
        # flat-region onset so the oracle sees the whole active range
        halfwidth = spec.nu if np.isfinite(spec.nu) else lam * step + 1.0
        v = float(rng.uniform(-1.0, 1.0)) * (halfwidth + 3.0)
        x = prox(v, spec, step)
        grid = np.arange(-abs(v) - halfwidth, abs(v) + halfwidth + 1e-4, 1e-4)
        values = (grid - v) ** 2 / (2.0 * step) + penalty(np.abs(grid), spec)
        best = int(np.argmin(values))
        gap = (x - v) ** 2 / (2.0 * step) + penalty(abs(x), spec) - float(values[best])
        dist = abs(x - float(grid[best]))
        worst_gap = max(worst_gap, gap)
        worst_dist = max(worst_dist, dist)
        if gap > 1e-8 or dist > 5e-4:
            violations += 1
    lines = [
        f"  {trials} random prox calls: worst objective gap {worst_gap:.3e}, "
        f"worst argument distance {worst_dist:.3e}"
    ]
    return violations == 0, lines


def _check_curvature(trials, seed):
    trials = trials or 300
    d1 = d2 = 3
    n = 2000
    sigma_x = CovarianceSpec.ar1(d1 * d2, phi=0.3)
    lam_min = sigma_x.lambda_min
    d_max = max(d1, d2)
    ok = True
    lines = []
    for regime in ("none", "additive", "missing"):
        obs, model = _regime_dataset(regime, d1, d2, n, derive_seed(seed, "curv-data", regime))
        pair = build_surrogate(obs)
        bound = bound_quantities(
            "clean" if regime == "none" else regime, sigma_x, obs.sigma_eps,
            model.theta, n, 1.5 * model.nuclear_norm,
            sigma_w=obs.sigma_w, rho=obs.rho,
        )
        tau1 = bound.tau * d_max * np.log(d_max) / n
        lsc = verify_lsc(
            pair, model.theta, trials, alpha1=0.5 * lam_min, tau1=tau1,
            seed=derive_seed(seed, "lsc", regime),
        )
        rsc = verify_rsc(
            pair, trials, alpha2=lam_min / 8.0, r=model.rank,
            seed=derive_seed(seed, "rsc", regime),
        )
        ok = ok and lsc.violations == 0 and rsc.violations == 0
        lines.append(
            f"  {regime}: local curvature {lsc.violations}/{lsc.trials} violations "
            f"(worst margin {lsc.margins.min():.3e}), restricted curvature "
            f"{rsc.violations}/{rsc.trials} violations (worst margin {rsc.margins.min():.3e})"
        )
    return ok, lines


_SUITES = {
    "structure": _check_structure,
    "gradients": _check_gradients,
    "prox": _check_prox,
    "lsc-rsc": _check_curvature,
}


# ---------------------------------------------------------------------------
# parser and entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowrank-eiv",
        description="Low-rank matrix recovery with corrupted covariates: "
        "simulate datasets, fit spectral-regularized estimators, run "
        "Monte Carlo grids, and self-check the numerical kernels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a synthetic dataset and save it as .npz")
    sim.add_argument("--config", required=True, help="dataset config (JSON)")
    sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    sim.add_argument("--out", default=None, help="output path (falls back to config.out)")
    sim.set_defaults(func=cmd_simulate)

    sol = sub.add_parser("solve", help="fit one estimator on a saved dataset")
    sol.add_argument("--data", required=True, help="dataset file from `simulate`")
    sol.add_argument("--reg", required=True, choices=("scad", "mcp", "nuclear"))
    sol.add_argument("--lam", required=True, type=float, help="penalty level")
    sol.add_argument("--shape", type=float, default=None,
                     help="SCAD a (default 3.7) or MCP b (default 2.0)")
    omega = sol.add_mutually_exclusive_group()
    omega.add_argument("--omega", type=float, default=None,
                       help="nuclear-norm ball radius")
    omega.add_argument("--omega-factor", type=float, default=None,
                       help="radius as a multiple of the true nuclear norm (default 1.5)")
    sol.add_argument("--tol", type=float, default=1e-6)
    sol.add_argument("--max-iters", type=int, default=2000)
    sol.add_argument("--step", type=float, default=None,
                     help="fixed step size (default: backtracking)")
    sol.add_argument("--out", default=None, help="one-row CSV path (default: print to stdout)")
    sol.add_argument("--timing", action="store_true", help="record wall-clock runtime_ms")
    sol.set_defaults(func=cmd_solve)

    exp = sub.add_parser("experiment", help="run a Monte Carlo grid and emit CSV")
    source = exp.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="experiment config (JSON)")
    source.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario")
    exp.add_argument("--seed", type=int, default=None, help="override the config seed")
    exp.add_argument("--out", default=None, help="output CSV (falls back to config.out)")
    exp.add_argument("--threads", type=int, default=1,
                     help="grid cells solved concurrently (output is identical)")
    exp.add_argument("--timing", action="store_true", help="record wall-clock runtime_ms")
    exp.set_defaults(func=cmd_experiment)

    chk = sub.add_parser("check", help="run a randomized self-check suite")
    chk.add_argument("suite", choices=sorted(_SUITES))
    chk.add_argument("--trials", type=int, default=None,
                     help="trials per check (default: suite-specific)")
    chk.add_argument("--seed", type=int, default=0)
    chk.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except np.linalg.LinAlgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except StepSizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
