"""Command line entry point.

    rnnfilter run <config.yaml | bundled-name> [--output DIR]
    rnnfilter verify [--corrupt-gradient]
    rnnfilter export-fixtures <dir>

Exit codes: 0 success, 1 failed check or run, 2 configuration error.
The output directory may also be set with RNNFILTER_OUTPUT_DIR.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from rnnfilter.config import bundled_config_names, bundled_config_path, load_config
from rnnfilter.errors import ConfigError, TrainingDivergedError
from rnnfilter.kalman import kalman_filter, write_trace_csv
from rnnfilter.model import sample_trajectories, scalar_model, write_batch_csv
from rnnfilter.rnn import RnnTopology, Variant, init_random_params, save_checkpoint

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _resolve(config_arg: str) -> Path:
    path = Path(config_arg)
    if path.exists():
        return path
    if config_arg in bundled_config_names():
        return bundled_config_path(config_arg)
    raise ConfigError(f"config {config_arg!r} is neither a file nor a bundled config "
                      f"({', '.join(bundled_config_names())})")


def cmd_run(args) -> int:
    from rnnfilter.experiment import run_experiment

    try:
        config = load_config(_resolve(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    def progress(epoch, loss):
        if epoch % 50 == 0 or epoch == config.train.epochs - 1:
            print(f"epoch {epoch:5d}  loss {loss:.6g}", flush=True)

    try:
        result = run_experiment(config, args.output, progress=None if args.quiet else progress)
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for name, acc in result.accumulation.items():
        flag = "ACCUMULATING" if acc["flagged"] else "time-uniform"
        print(f"{name:10s} late/early RMSE ratio {acc['ratio']:.3g}  {flag}")
    print(f"artifacts written to {result.output_dir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from rnnfilter.verify import run_checks

    results = run_checks(corrupt_gradient=args.corrupt_gradient)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_export_fixtures(args) -> int:
    """Small reference artifacts for diffing against other implementations."""
    out = Path(args.directory)
    out.mkdir(parents=True, exist_ok=True)
    model = scalar_model(0.98, 2.0)
    batch = sample_trajectories(model, 10, 3, seed=args.seed)
    write_batch_csv(batch, out / "batch_a098_b2.csv")
    write_trace_csv(kalman_filter(model, batch.observations[0]), out / "kalman_trace_a098_b2.csv")
    topology = RnnTopology(Variant.RECURSIVE, (1, 7, 7, 1))
    save_checkpoint(init_random_params(topology, args.seed), topology, out / "rnn_init.npz")
    spec = {
        "F": model.f_matrix.tolist(), "H": model.h_matrix.tolist(),
        "Q": model.q_cov.tolist(), "R": model.r_cov.tolist(),
        "init_mean": model.init_mean.tolist(), "init_cov": model.init_cov.tolist(),
        "seed": args.seed,
    }
    (out / "model_a098_b2.yaml").write_text(yaml.safe_dump(spec, sort_keys=True))
    print(f"fixtures written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnnfilter", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate from a config file")
    run.add_argument("config", help="path to a YAML config or a bundled config name")
    run.add_argument("--output", help="output directory (overrides config and env)")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="run the fast oracle battery")
    verify.add_argument("--corrupt-gradient", action="store_true",
                        help="perturb the BPTT gradient to confirm the check can fail")
    verify.set_defaults(func=cmd_verify)

    export = sub.add_parser("export-fixtures", help="write reference fixtures")
    export.add_argument("directory")
    export.add_argument("--seed", type=int, default=0)
    export.set_defaults(func=cmd_export_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
