"""Train-then-evaluate pipeline behind ``rnnfilter run``."""

from __future__ import annotations

import json
import logging
import os
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rnnfilter import __version__
from rnnfilter.config import ExperimentConfig
from rnnfilter.errors import TrainingDivergedError
from rnnfilter.evaluate import (
    AccumulationResult,
    EvalReport,
    constant_closure,
    detect_error_accumulation,
    estimate_contraction,
    evaluate_filters,
    kalman_closure,
    particle_closure,
    rnn_closure,
    write_contraction_csv,
    write_report_csv,
)
from rnnfilter.model import sample_trajectories
from rnnfilter.rnn import RnnParams, init_random_params, save_checkpoint
from rnnfilter.train import train, write_loss_csv

__all__ = ["RunResult", "run_experiment", "output_directory", "OUTPUT_ENV"]

log = logging.getLogger(__name__)

OUTPUT_ENV = "RNNFILTER_OUTPUT_DIR"


@dataclass(eq=False)
class RunResult:
    params: RnnParams
    loss_history: list
    report: EvalReport
    accumulation: dict
    output_dir: Path


def output_directory(config: ExperimentConfig, override=None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else Path(config.output.directory)


def run_experiment(config: ExperimentConfig, output_dir=None, progress=None) -> RunResult:
    """Sample training data, train the network, evaluate it with the baselines.

    Artifacts written to the output directory:

    * ``loss_history.csv`` (epoch, full_batch_loss)
    * ``checkpoint.npz`` trained network
    * ``report.csv`` per-step RMSE of every method
    * ``contraction.csv`` when ``eval.contraction_pairs > 0``
    * ``manifest.json`` config echo, derived seeds, accumulation verdicts, timings

    On training divergence the partial loss history and manifest are still
    written before the error propagates.
    """
    out = output_directory(config, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    manifest = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config.echo(),
        "status": "running",
    }

    data = sample_trajectories(config.model, config.train.horizon_T_train,
                               config.train.count_N_train, config.seed("train-data"))
    init = init_random_params(config.topology, config.seed("init"))
    history = []

    def record(epoch, loss):
        history.append(loss)
        if progress is not None:
            progress(epoch, loss)

    t0 = time.time()
    try:
        params, _ = train(config.train, config.topology, data, init_params=init,
                          progress=record)
    except TrainingDivergedError as exc:
        write_loss_csv(history, out / "loss_history.csv")
        manifest.update(status="training-diverged", error=str(exc),
                        wall_clock_seconds={"total": time.time() - started})
        _write_manifest(manifest, out)
        raise
    train_seconds = time.time() - t0
    write_loss_csv(history, out / "loss_history.csv")
    save_checkpoint(params, config.topology, out / "checkpoint.npz")

    methods = {
        "rnn": rnn_closure(params, config.topology),
        "kalman": kalman_closure(config.model),
        "zero": constant_closure(0.0, config.model.d_x),
    }
    if config.particle.enabled:
        methods["particle"] = particle_closure(config.model, config.particle.count_P,
                                               config.seed("particle"))
    t0 = time.time()
    report = evaluate_filters(config.model, methods, config.eval.n_test,
                              config.eval.horizon_T_test, config.seed("test-data"),
                              config_echo=config.echo())
    eval_seconds = time.time() - t0
    write_report_csv(report, out / "report.csv")

    accumulation = {}
    for name in report.methods:
        res = detect_error_accumulation(report, name, config.eval.early_window,
                                        config.eval.late_window, config.eval.threshold)
        accumulation[name] = _accumulation_dict(res)

    contraction = None
    if config.eval.contraction_pairs > 0:
        width = sum(config.topology.layer_widths[k] for k in config.topology.fed_back_layers)
        rng = np.random.default_rng(config.seed("contraction"))
        offsets = [rng.standard_normal(width) for _ in range(4)]
        est = estimate_contraction(rnn_closure(params, config.topology), config.model,
                                   config.eval.contraction_pairs, offsets,
                                   config.eval.contraction_horizon, config.seed("contraction"))
        write_contraction_csv(est, out / "contraction.csv")
        contraction = {"kappa_hat": est.kappa_hat, "c_hat": est.c_hat,
                       "fit_residual": est.fit_residual, "upper_bound": est.upper_bound}

    manifest.update(
        status="ok",
        final_loss=history[-1] if history else None,
        accumulation=accumulation,
        overflow_t=report.overflow_t,
        contraction=contraction,
        wall_clock_seconds={"train": train_seconds, "evaluate": eval_seconds,
                            "total": time.time() - started},
    )
    _write_manifest(manifest, out)
    return RunResult(params, history, report, accumulation, out)


def _accumulation_dict(res: AccumulationResult) -> dict:
    return {"flagged": res.flagged, "ratio": res.ratio, "early_mean": res.early_mean,
            "late_mean": res.late_mean}


def _write_manifest(manifest: dict, out: Path) -> None:
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float):
        return repr(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
