"""Command-line entry points: ``example1``, ``pendulum`` and ``gradcheck``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
divergence, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .approximators import LinearFamily, ZeroFn
from .config import PRESETS, RunConfig
from .estimators import BSDEEstimator
from .gradcheck import TOLERANCE, run_gradcheck
from .policy_iteration import TrainingDiverged, run_policy_iteration
from .problems import example1_problem, pendulum_problem, theta_star_y, theta_star_z
from .sde import NoiseScheme, SimulationDiverged, grid_from_dt, simulate_model_based

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3

logger = logging.getLogger("bsde_ml")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="bsde-ml", description="Deep BSDE experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True, parser_class=_Parser)

    ex = sub.add_parser("example1", parents=[common], help="linear BSDE benchmark")
    ex.add_argument("--n", type=int, action="append", help="state dimension (repeatable)")
    ex.add_argument("--loss", choices=["measurability", "deep-bsde", "martingale"])
    ex.add_argument("--param", choices=["well", "mis"])
    ex.add_argument("--steps", type=int)
    ex.add_argument("--batch", type=int)
    ex.add_argument("--lr", type=float)
    ex.add_argument("--dt", type=float)
    ex.add_argument("--horizon", type=float)

    pe = sub.add_parser("pendulum", parents=[common], help="pendulum swing-up by policy iteration")
    pe.add_argument("--preset", choices=sorted(PRESETS), help="base settings before file and flags")
    pe.add_argument("--mode", choices=["model-based", "model-free"])
    pe.add_argument("--iters", type=int)
    pe.add_argument("--sigma0", type=float)
    pe.add_argument("--buffer", type=int)
    pe.add_argument("--rollouts", type=int)
    pe.add_argument("--batch", type=int)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    base = RunConfig(experiment=args.experiment)
    preset = getattr(args, "preset", None)
    if preset:
        base = replace(base, pendulum=PRESETS[preset]())
    cfg = RunConfig.load(args.config, base) if args.config else base
    cfg = replace(cfg, experiment=args.experiment)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.experiment == "example1":
        over = {"n": args.n, "loss": args.loss, "param": args.param, "steps": args.steps,
                "batch": args.batch, "lr": args.lr, "dt": args.dt, "T": args.horizon}
        cfg = replace(cfg, example1=replace(cfg.example1, **{k: v for k, v in over.items() if v is not None}))
    elif args.experiment == "pendulum":
        over = {"mode": args.mode, "iterations": args.iters, "sigma0": args.sigma0, "buffer": args.buffer,
                "rollouts": args.rollouts, "batch": args.batch}
        over = {k: v for k, v in over.items() if v is not None}
        # a larger rollout count implies a buffer to hold it
        if "rollouts" in over and "buffer" not in over:
            over["buffer"] = max(over["rollouts"], cfg.pendulum.buffer)
        cfg = replace(cfg, pendulum=replace(cfg.pendulum, **over))
    return cfg


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _theta_target(loss: str, param: str, n: int, T: float) -> float:
    if param == "well":
        return 1.0
    return theta_star_y(n, T) if loss == "martingale" else theta_star_z(n, T)


def run_example1_single(cfg: RunConfig, n: int) -> BSDEEstimator:
    ex = cfg.example1
    prob = example1_problem(n, ex.T)
    grid = grid_from_dt(ex.T, ex.dt)
    scheme = NoiseScheme("model-based", 1.0)
    family = ("y_" if ex.loss == "martingale" else "z_") + ex.param

    def sampler(stream, size):
        def draw(step):
            return simulate_model_based(prob.model, scheme, ZeroFn(n, 0), prob.cost, grid, prob.x0,
                                        n_paths=size, seed=cfg.seed, start=step * size, stream=stream)
        return draw

    est = BSDEEstimator(LinearFamily(family, n, ex.theta0), loss=ex.loss, lr=ex.lr, n_steps=ex.steps,
                        batch_size=ex.batch, y0_db_init=ex.y0_db0, validation=sampler(11, ex.val_batch),
                        random_state=cfg.seed)
    return est.fit(sampler(10, ex.batch))


def tail_theta(history) -> float:
    """Mean of theta over the second half of training."""
    thetas = [row["theta"] for row in history]
    return float(np.mean(thetas[len(thetas) // 2:])) if thetas else float("nan")


def cmd_example1(cfg: RunConfig) -> int:
    ex = cfg.example1
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    step_rows, summary_rows = [], []
    for n in ex.n:
        est = run_example1_single(cfg, n)
        theta0 = est.approximator.theta
        hist = est.history_
        for row in hist:
            step_rows.append([n, row["step"], _fmt(row["train_loss"]), _fmt(row.get("val_loss")),
                              _fmt(row["theta"]), _fmt(row.get("y0_db"))])
        final = tail_theta(hist) if hist else theta0
        target = _theta_target(ex.loss, ex.param, n, ex.T)
        summary_rows.append([n, ex.loss, ex.param, _fmt(final), _fmt(target), _fmt(abs(final - target)),
                             _fmt(est.y0_db_)])
        logger.info("n=%d %s/%s: theta %.5f (target %.5f)", n, ex.loss, ex.param, final, target)
    _write_csv(out / "example1_steps.csv", ["n", "step", "train_loss", "val_loss", "theta", "y0_db"], step_rows)
    _write_csv(out / "example1_summary.csv",
               ["n", "loss", "param", "theta_final", "theta_target", "abs_error", "y0_db_final"], summary_rows)
    return EXIT_OK


def cmd_pendulum(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = run_policy_iteration(cfg.pi_config(), pendulum_problem(T=cfg.pendulum.horizon))
    iter_rows, roll_rows = [], []
    for r in reports:
        iter_rows.append([r.iteration, _fmt(r.cost), _fmt(r.eval_loss), _fmt(r.improve_loss), r.eval_steps,
                          r.improve_steps, _fmt(r.terminal_state[0]), _fmt(r.terminal_state[1])])
        ro = r.rollout
        for k, t in enumerate(ro.times):
            u = ro.controls[k, 0] if k < len(ro.controls) else None
            roll_rows.append([r.iteration, k, _fmt(t), _fmt(ro.states[k, 0]), _fmt(ro.states[k, 1]), _fmt(u),
                              _fmt(ro.cost_to_go[k])])
    _write_csv(out / "pendulum_iterations.csv",
               ["iteration", "cost", "eval_loss", "improve_loss", "eval_steps", "improve_steps",
                "theta_final", "theta_dot_final"], iter_rows)
    _write_csv(out / "pendulum_rollouts.csv", ["iteration", "k", "t", "theta", "theta_dot", "u", "cost_to_go"],
               roll_rows)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    results = run_gradcheck(seed=cfg.seed)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.arch:14s} {r.loss:14s} params={r.n_params:4d} max_rel_err={r.error:.3e} {status}")
    worst = max(r.error for r in results)
    print(f"worst {worst:.3e} (tolerance {TOLERANCE:.0e})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


COMMANDS = {"example1": cmd_example1, "pendulum": cmd_pendulum, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except (UsageError, ValueError, TypeError, OSError) as err:
        print(f"bsde-ml: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[cfg.experiment](cfg)
    except (SimulationDiverged, TrainingDiverged) as err:
        print(f"bsde-ml: diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
