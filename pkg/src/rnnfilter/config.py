"""Experiment configuration: YAML schema, validation and seed splitting."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from rnnfilter.errors import ConfigError
from rnnfilter.model import LinearGaussianModel
from rnnfilter.rnn import RnnTopology, Variant
from rnnfilter.train import TrainConfig

__all__ = [
    "ExperimentConfig",
    "derive_seed",
    "load_config",
    "parse_config",
    "bundled_config_path",
    "bundled_config_names",
    "SEED_PURPOSES",
]

SEED_PURPOSES = ("train-data", "init", "minibatch-order", "test-data", "particle", "contraction")


def derive_seed(master_seed: int, purpose: str) -> int:
    """64-bit sub-seed: first 8 bytes (little-endian) of sha256("<master>/<purpose>").

    Each purpose gets its own stream, so e.g. changing n_test leaves the
    training data and initialization untouched.
    """
    digest = hashlib.sha256(f"{int(master_seed)}/{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class ParticleSection:
    enabled: bool = True
    count_P: int = 1000


@dataclass(frozen=True)
class EvalSection:
    n_test: int = 1000
    horizon_T_test: int = 2000
    early_window: tuple = (100, 300)
    late_window: tuple = (1800, 2000)
    threshold: float = 2.0
    contraction_pairs: int = 0
    contraction_horizon: int = 50


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs/default"
    formats: tuple = ("csv",)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    master_seed: int
    model: LinearGaussianModel
    topology: RnnTopology
    train: TrainConfig
    particle: ParticleSection
    eval: EvalSection
    output: OutputSection
    raw: dict = field(default_factory=dict)

    def seed(self, purpose: str) -> int:
        return derive_seed(self.master_seed, purpose)

    def echo(self) -> dict:
        return {
            "name": self.name,
            "master_seed": self.master_seed,
            "model": self.raw["model"],
            "rnn": {"variant": self.topology.variant.value,
                    "widths": list(self.topology.layer_widths)},
            "train": asdict(self.train),
            "particle": asdict(self.particle),
            "eval": {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in asdict(self.eval).items()},
            "output": {"directory": self.output.directory, "formats": list(self.output.formats)},
            "seeds": {p: self.seed(p) for p in SEED_PURPOSES},
        }


_MODEL_FIELDS = ("F", "H", "Q", "R", "init_mean", "init_cov")
_TRAIN_FIELDS = {
    "horizon_T_train", "count_N_train", "epochs", "minibatch_size", "learning_rate",
    "optimizer", "adam_beta1", "adam_beta2", "adam_eps", "grad_clip_norm", "train_s0",
}


def _section(raw: dict, name: str, required: bool = True) -> dict:
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing section '{name}'")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sec


def _unknown(sec: dict, allowed, where: str) -> None:
    extra = sorted(set(sec) - set(allowed))
    if extra:
        raise ConfigError(f"unknown field(s) {extra} in '{where}'")


def _build(where: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(raw: dict, name: str = "experiment") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _unknown(raw, {"name", "master_seed", "model", "rnn", "train", "particle", "eval", "output"},
             "top level")
    if "master_seed" not in raw:
        raise ConfigError("missing field 'master_seed'")
    master = raw["master_seed"]
    if not isinstance(master, int) or master < 0:
        raise ConfigError("'master_seed' must be a non-negative integer")

    msec = _section(raw, "model")
    _unknown(msec, _MODEL_FIELDS, "model")
    for key in _MODEL_FIELDS:
        if key not in msec:
            raise ConfigError(f"missing field 'model.{key}'")
    model = _build("model", LinearGaussianModel, msec["F"], msec["H"], msec["Q"], msec["R"],
                   msec["init_mean"], msec["init_cov"])

    rsec = _section(raw, "rnn")
    _unknown(rsec, {"variant", "widths"}, "rnn")
    for key in ("variant", "widths"):
        if key not in rsec:
            raise ConfigError(f"missing field 'rnn.{key}'")
    topology = _build("rnn", RnnTopology, _build("rnn.variant", Variant, rsec["variant"]),
                      tuple(rsec["widths"]))
    if topology.input_width != model.d_y:
        raise ConfigError(f"rnn.widths[0]={topology.input_width} must equal d_y={model.d_y}")
    if topology.output_width != model.d_x:
        raise ConfigError(f"rnn.widths[-1]={topology.output_width} must equal d_x={model.d_x}")

    tsec = _section(raw, "train")
    _unknown(tsec, _TRAIN_FIELDS, "train")
    train_cfg = _build("train", TrainConfig, seed=derive_seed(master, "minibatch-order"), **tsec)

    psec = _section(raw, "particle", required=False)
    _unknown(psec, {"enabled", "count_P"}, "particle")
    particle = _build("particle", ParticleSection, **psec)
    if particle.count_P < 1:
        raise ConfigError("particle.count_P must be >= 1")

    esec = _section(raw, "eval")
    _unknown(esec, set(EvalSection.__dataclass_fields__), "eval")
    esec = {k: (tuple(v) if isinstance(v, list) else v) for k, v in esec.items()}
    evals = _build("eval", EvalSection, **esec)
    if evals.n_test < 1 or evals.horizon_T_test < 1:
        raise ConfigError("eval.n_test and eval.horizon_T_test must be positive")
    if max(evals.early_window[1], evals.late_window[1]) > evals.horizon_T_test:
        raise ConfigError("eval windows extend past eval.horizon_T_test")

    osec = _section(raw, "output", required=False)
    _unknown(osec, {"directory", "formats"}, "output")
    output = OutputSection(directory=str(osec.get("directory", f"runs/{name}")),
                           formats=tuple(osec.get("formats", ("csv",))))

    return ExperimentConfig(str(raw.get("name", name)), master, model, topology, train_cfg,
                            particle, evals, output, raw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    return parse_config(raw, name=path.stem)


def bundled_config_names() -> list[str]:
    folder = resources.files("rnnfilter") / "configs"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def bundled_config_path(name: str) -> Path:
    path = Path(str(resources.files("rnnfilter") / "configs" / f"{name}.yaml"))
    if not path.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return path
