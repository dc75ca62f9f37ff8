"""Command-line entry point: solve, optimize, learn, or simulate a team.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(instability, infeasibility, overflow, or non-convergence).
"""

import argparse
import csv
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pg_exact, pg_zeroth, riccati, sim
from .errors import ConfigError, DeepTeamsError
from .model import Policy, TeamModel, validate_model, zero_policy
from .modelfile import parse_model, parse_policy
from .presets import PRESET_NAMES, default_params, preset

MODES = ("riccati", "pg", "npg", "zo-pg", "zo-npg", "simulate")


@dataclass
class ExperimentConfig:
    model: TeamModel
    mode: str
    eta: float
    iters: int
    tol: float
    L: int
    T: int
    r: float
    lam: float
    seed: int
    seeds_count: int
    out: Path
    init_policy: str
    backtracking: bool
    antithetic: bool
    init_mode: str
    preset_name: str | None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="deepteams",
        description="Linear-quadratic deep structured teams: Riccati gains, "
                    "model-based policy gradients, and model-free learning.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESET_NAMES,
                     help="bundled benchmark model")
    src.add_argument("--model", metavar="PATH", help="JSON model file")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--eta", type=float, help="step size")
    p.add_argument("--iters", type=int, default=100, help="iteration count")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="gradient-norm stopping tolerance (model-based modes)")
    p.add_argument("--samples-L", dest="L", type=int,
                   help="perturbation rollouts per iteration (zo modes)")
    p.add_argument("--rollout-T", dest="T", type=int,
                   help="rollout horizon (zo and simulate modes)")
    p.add_argument("--radius-r", dest="r", type=float, default=0.05,
                   help="sphere-smoothing radius (zo modes)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="risk factor; defaults to the model's")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds-count", type=int, default=1,
                   help="number of independent seeds to run")
    p.add_argument("--out", metavar="DIR", default="deepteams-out")
    p.add_argument("--init-policy", default="zero",
                   help='"zero", "random", or a JSON policy file path')
    p.add_argument("--backtracking", choices=("on", "off"), default="on")
    p.add_argument("--antithetic", choices=("on", "off"), default="off")
    return p


def _build_config(args) -> ExperimentConfig:
    if args.preset:
        model = preset(args.preset)
        defaults = default_params(args.preset)
    else:
        model = parse_model(args.model)
        defaults = {"eta": None, "T": None, "L": None,
                    "lam": model.lam, "init_mode": "gaussian"}
    report = validate_model(model)
    if not report.ok:
        raise ConfigError("invalid model:\n  " + "\n  ".join(report.issues))

    eta = args.eta if args.eta is not None else defaults["eta"]
    T = args.T if args.T is not None else defaults["T"]
    L = args.L if args.L is not None else defaults["L"]

    zo = args.mode.startswith("zo-")
    if zo:
        if args.lam is not None and args.lam > 0:
            raise ConfigError("lambda: model-free modes are risk-neutral; "
                              "a positive risk factor is not supported")
        lam = 0.0
    else:
        lam = args.lam if args.lam is not None else defaults["lam"]
    if lam is None:
        lam = model.lam
    if lam < 0:
        raise ConfigError("lambda: risk factor must be nonnegative")

    needs = []
    if args.mode in ("pg", "npg") or zo:
        if eta is None:
            needs.append("--eta")
    if zo:
        if L is None:
            needs.append("--samples-L")
        if T is None:
            needs.append("--rollout-T")
        if args.r is None or args.r <= 0:
            raise ConfigError("--radius-r: must be positive for zo modes")
    if args.mode == "simulate" and T is None:
        needs.append("--rollout-T")
    if needs:
        raise ConfigError(f"mode {args.mode} requires {', '.join(needs)}")
    if args.seed < 0:
        raise ConfigError("--seed: must be a nonnegative integer")
    if args.seeds_count < 1:
        raise ConfigError("--seeds-count: must be at least 1")
    if args.iters < 0:
        raise ConfigError("--iters: must be nonnegative")

    return ExperimentConfig(
        model=model, mode=args.mode,
        eta=eta if eta is not None else 0.0,
        iters=args.iters, tol=args.tol,
        L=L if L is not None else 0, T=T if T is not None else 0, r=args.r,
        lam=float(lam), seed=args.seed, seeds_count=args.seeds_count,
        out=Path(args.out), init_policy=args.init_policy,
        backtracking=args.backtracking == "on",
        antithetic=args.antithetic == "on",
        init_mode=defaults["init_mode"], preset_name=args.preset)


def _init_policy(cfg: ExperimentConfig, seed: int) -> Policy:
    if cfg.init_policy == "zero":
        return zero_policy(cfg.model)
    if cfg.init_policy == "random":
        return pg_exact.random_stable_policy(cfg.model, seed=seed, lam=cfg.lam)
    path = Path(cfg.init_policy)
    if not path.exists():
        raise ConfigError(f'--init-policy: "{cfg.init_policy}" is neither '
                          f'"zero", "random", nor an existing policy file')
    return parse_policy(path, cfg.model)


def _write_oracle_gains(path: Path, p_star: Policy):
    """Deployable optimal gains (literal u = theta x convention)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "row", "col", "value"])
        for s, t in enumerate(p_star.theta):
            for i in range(t.shape[0]):
                for j in range(t.shape[1]):
                    w.writerow([f"local_{s}", i, j, repr(float(t[i, j]))])
        tb = p_star.theta_bar
        for i in range(tb.shape[0]):
            for j in range(tb.shape[1]):
                w.writerow(["deep", i, j, repr(float(tb[i, j]))])


def run_experiment(cfg: ExperimentConfig) -> int:
    start = time.perf_counter()
    cfg.out.mkdir(parents=True, exist_ok=True)
    lines = [f"mode: {cfg.mode}"]
    if cfg.preset_name:
        lines.append(f"preset: {cfg.preset_name}")
    lines.append(f"risk factor: {cfg.lam}")

    sol = riccati.solve(cfg.model, cfg.lam)
    p_star = riccati.optimal_policy(sol)
    _write_oracle_gains(cfg.out / "oracle_gains.csv", p_star)
    for s, t in enumerate(p_star.theta):
        lines.append(f"oracle local gain {s}: {np.array2string(t, precision=6)}")
    lines.append(f"oracle deep gain: {np.array2string(p_star.theta_bar, precision=6)}")

    seeds = [cfg.seed + k for k in range(cfg.seeds_count)]
    if cfg.mode == "riccati":
        lines.append(f"riccati iterations: {sol.iterations}, "
                     f"residual: {sol.residual:.3e}")
        print("\n".join(lines[-3 - len(p_star.theta):]))
    elif cfg.mode in ("pg", "npg"):
        lines.append(f"eta={cfg.eta} iters={cfg.iters} tol={cfg.tol} "
                     f"backtracking={'on' if cfg.backtracking else 'off'}")
        for sd in seeds:
            p0 = _init_policy(cfg, sd)
            tr = pg_exact.run(cfg.model, p0, algo=cfg.mode, eta=cfg.eta,
                              max_iters=cfg.iters, tol=cfg.tol, lam=cfg.lam,
                              backtracking=cfg.backtracking)
            tr.to_csv(cfg.out / f"trace_{sd}.csv")
            last = tr.rows[-1]
            lines.append(f"seed {sd}: status={tr.status} iters={last.iteration} "
                         f"final J={last.cost:.8g} gain error={last.gain_error:.3e}")
            print(lines[-1])
    elif cfg.mode in ("zo-pg", "zo-npg"):
        algo = cfg.mode[3:]
        lines.append(f"eta={cfg.eta} iters={cfg.iters} L={cfg.L} T={cfg.T} "
                     f"r={cfg.r} antithetic={'on' if cfg.antithetic else 'off'}")
        for sd in seeds:
            p0 = _init_policy(cfg, sd)
            tr = pg_zeroth.learn(cfg.model, p0, algo=algo, eta=cfg.eta,
                                 L=cfg.L, T=cfg.T, r=cfg.r, iters=cfg.iters,
                                 seed=sd, antithetic=cfg.antithetic,
                                 init_mode=cfg.init_mode)
            tr.to_csv(cfg.out / f"trace_{sd}.csv")
            last = tr.rows[-1] if tr.rows else None
            err = last.gain_error if last else float("nan")
            j = last.cost if last else float("nan")
            lines.append(f"seed {sd}: status={tr.status} final J~={j:.8g} "
                         f"gain error={err:.3e}")
            print(lines[-1])
    elif cfg.mode == "simulate":
        for sd in seeds:
            p0 = _init_policy(cfg, sd)
            traj = sim.rollout(cfg.model, p0, cfg.T, sd, init_mode=cfg.init_mode)
            traj.to_csv(cfg.out / f"trajectory_{sd}.csv")
            lines.append(f"seed {sd}: T={cfg.T} mean cost="
                         f"{float(np.mean(traj.costs)):.8g}")
            print(lines[-1])

    lines.append(f"wall time: {time.perf_counter() - start:.2f} s")
    (cfg.out / "summary.txt").write_text("\n".join(lines) + "\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
        return run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DeepTeamsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
