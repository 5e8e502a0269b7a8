"""Command-line entry point.

One binary, six subcommands:

    robustbf train         fit a step-size schedule, write it + history
    robustbf eval          robust WSR of every configured solver at sigma_h2
    robustbf solve         beamform the test set with one solver
    robustbf sweep-layers  robust WSR vs iteration / layer budget
    robustbf sweep-error   robust WSR vs error variance (+ anchor report)
    robustbf sweep-timing  per-channel wall-clock seconds per solver

Every command reads a `key = value` experiment config (--config), writes
into an output directory (--out, falling back to $RB_OUT_DIR), and drops a
manifest.json there that echoes the effective configuration, the package
version, and the seed, which is enough to reproduce the run byte-for-byte
apart from measured timings.

Exit codes: 0 success, 1 usage error (bad flags, unreadable or invalid
config), 2 runtime failure (solver breakdown, missing trained schedules).

BLAS thread pinning (--threads, defaulting to 1 for sweep-timing) must be
observed by the linear algebra backend, so the numerical modules are
imported only after the environment variables are set.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustbf", description="robust beamforming toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", help="output directory (default: $RB_OUT_DIR)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--fast", action="store_true",
                       help="smoke-test profile: small test set and batches")
        p.add_argument("--threads", type=_positive_int,
                       help="pin BLAS to this many threads")

    p = sub.add_parser("train", help="fit a step-size schedule")
    common(p)
    p.add_argument("--layers", type=_positive_int, help="unfolded layers (default: M)")
    p.add_argument("--pgd-steps", type=_positive_int,
                   help="gradient steps per layer (default: N)")
    p.add_argument("--sigma-h2", type=float, help="error variance to train for")
    p.add_argument("--power-convention", choices=("dbm", "watts"),
                   help="override the config power convention")

    p = sub.add_parser("eval", help="robust WSR of the configured solvers")
    common(p)

    p = sub.add_parser("solve", help="beamform the test set with one solver")
    common(p)
    p.add_argument("--solver", required=True, help="solver name (fp, wmmse, ...)")

    for name, blurb in (
        ("sweep-layers", "robust WSR vs iteration / layer budget"),
        ("sweep-error", "robust WSR vs channel-error variance"),
        ("sweep-timing", "per-channel solve time vs problem size"),
    ):
        common(sub.add_parser(name, help=blurb))
    return parser


def _pin_threads(threads, command):
    if threads is None and command == "sweep-timing":
        threads = 1
    if threads is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)


def _load_invocation(args):
    """Resolve config + output directory; all failures here are usage errors."""
    from . import experiments
    from .errors import ConfigurationError

    path = Path(args.config)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    config = experiments.load_config(path)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigurationError("--seed must be nonnegative")
        config = dataclasses.replace(config, seed=args.seed)
    if args.fast:
        config = experiments.apply_fast_profile(config)
    out = args.out or os.environ.get("RB_OUT_DIR")
    if not out:
        raise ConfigurationError("no output directory: pass --out or set RB_OUT_DIR")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return config, out_dir


def _schedules_dir(out_dir: Path) -> Path:
    return out_dir / "schedules"


def _cmd_train(args, config, out_dir):
    from . import experiments
    from .training import TrainConfig, train
    from .unfolding import save_schedule

    M = args.layers or config.M
    N = args.pgd_steps or config.N
    sigma = config.sigma_h2 if args.sigma_h2 is None else args.sigma_h2
    convention = args.power_convention or config.power_convention
    tc = TrainConfig(
        learning_rate=config.learning_rate,
        batches=config.train_batches,
        batch_size=config.train_batch_size,
        B=config.B,
        gamma=config.gamma,
        seed=config.seed,
    )
    sys_cfg = config.system_config(sigma_h2=sigma, convention=convention)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    schedule, history = train(tc, sys_cfg, (M, N), checkpoint_dir=ckpt_dir)

    sched_dir = _schedules_dir(out_dir)
    sched_dir.mkdir(exist_ok=True)
    sched_name = experiments.schedule_filename(M, N, sigma, convention)
    save_schedule(sched_dir / sched_name, schedule)
    history.write_csv(out_dir / "history.csv")
    return {
        "trained": {"M": M, "N": N, "sigma_h2": sigma, "power_convention": convention},
        "outputs": [f"schedules/{sched_name}", "history.csv"],
    }


def _cmd_eval(args, config, out_dir):
    from . import experiments

    single = dataclasses.replace(config, sigma_h2_list=(config.sigma_h2,))
    rows, _ = experiments.run_error_sweep(
        single, _schedules_dir(out_dir), out_path=out_dir / "eval.csv")
    return {"outputs": ["eval.csv"], "rows": len(rows)}


def _cmd_solve(args, config, out_dir):
    from . import experiments
    from .channel import save_channels
    from .errors import ConfigurationError

    if args.solver not in experiments.SOLVER_NAMES:
        raise ConfigurationError(
            f"unknown solver {args.solver!r}; choose from "
            f"{', '.join(experiments.SOLVER_NAMES)}")
    Vs, rates = experiments.solve_test_set(
        config, args.solver, _schedules_dir(out_dir))
    bf_name = f"beamformers_{args.solver}.bin"
    csv_name = f"wsr_{args.solver}.csv"
    save_channels(out_dir / bf_name, Vs)
    with open(out_dir / csv_name, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("channel,wsr\n")
        for i, r in enumerate(rates):
            fh.write(f"{i},{r!r}\n")
    return {"outputs": [bf_name, csv_name], "channels": len(rates)}


def _cmd_sweep_layers(args, config, out_dir):
    from . import experiments

    experiments.run_layer_sweep(
        config, _schedules_dir(out_dir), out_path=out_dir / "layers.csv")
    return {"outputs": ["layers.csv"]}


def _cmd_sweep_error(args, config, out_dir):
    from . import experiments

    _, report = experiments.run_error_sweep(
        config, _schedules_dir(out_dir), out_path=out_dir / "error.csv")
    return {"outputs": ["error.csv"], "anchor_report": report}


def _cmd_sweep_timing(args, config, out_dir):
    from . import experiments

    experiments.run_timing_sweep(config, out_path=out_dir / "timing.csv")
    return {"outputs": ["timing.csv"]}


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "solve": _cmd_solve,
    "sweep-layers": _cmd_sweep_layers,
    "sweep-error": _cmd_sweep_error,
    "sweep-timing": _cmd_sweep_timing,
}


def _write_manifest(out_dir: Path, args, config, extras) -> None:
    from . import __version__

    echo = dataclasses.asdict(config)
    echo["eval_mode"] = config.eval_mode.value
    manifest = {
        "command": args.command,
        "version": __version__,
        "seed": config.seed,
        "fast": bool(args.fast),
        "config": echo,
    }
    manifest.update(extras or {})
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (out_dir / "manifest.json").write_text(text, encoding="utf-8")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _pin_threads(args.threads, args.command)
    # numerical imports happen beyond this point only
    from .errors import ConfigurationError, SolverError, TrainingError

    try:
        config, out_dir = _load_invocation(args)
    except (ConfigurationError, OSError) as exc:
        print(f"robustbf: {exc}", file=sys.stderr)
        return 1
    try:
        extras = _COMMANDS[args.command](args, config, out_dir)
    except (ConfigurationError, SolverError, TrainingError) as exc:
        print(f"robustbf: {exc}", file=sys.stderr)
        return 2
    _write_manifest(out_dir, args, config, extras)
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
