"""Experiment configuration and its flat ``block.key = value`` text format.

Example::

    # environment
    env.delta_c_base = 0
    env.ssp_file = ssp.csv
    signal.snr_db = -10, -5, 0, 5, 10, 20
    signal.delta_c = 0, 0.1, 0.25, 0.5, 1.0
    signal.realizations = 20
    train.max_epochs = 400
    adapt.num_steps = 100
    test.n_test = 500
    methods = mfp, cnn, cnn_shot, cnn_jsea
    seed = 7

Blank lines and ``#`` comments are ignored. Lists are comma separated;
``inf`` is accepted for SNR (noise free).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..adaptation import AdaptConfig
from ..labels import LabelConfig, RangeGrid
from ..localizer import TrainConfig
from ..ocean import Environment, load_ssp_csv
from ..signal import NoiseSource

METHODS = ("mfp", "cnn", "cnn_shot", "cnn_jsea")


@dataclass
class SignalConfig:
    num_snapshots: int = 5
    snr_db: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0, 20.0)
    delta_c: tuple[float, ...] = (0.0, 0.1, 0.25, 0.5, 1.0)
    realizations: int = 20
    noise_kind: str = "gaussian"
    noise_file: str | None = None

    @property
    def noise(self) -> NoiseSource:
        return NoiseSource(self.noise_kind, self.noise_file)


@dataclass
class TrainingDataConfig:
    snr_db: float = float("inf")
    realizations: int = 1
    range_step: float = 10.0


@dataclass
class TestConfig:
    __test__ = False  # not a pytest class despite the name

    n_test: int = 500
    on_grid: bool = False  # evaluate on the training range grid instead of random ranges


@dataclass
class ExperimentConfig:
    env: Environment = field(default_factory=Environment)
    signal: SignalConfig = field(default_factory=SignalConfig)
    train_data: TrainingDataConfig = field(default_factory=TrainingDataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    test: TestConfig = field(default_factory=TestConfig)
    grid: RangeGrid = field(default_factory=RangeGrid)
    label: LabelConfig = field(default_factory=LabelConfig)
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    checkpoint: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.signal.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")


# -- text format --------------------------------------------------------------

_BLOCKS = {
    "signal": "signal",
    "train_data": "train_data",
    "train": "train",
    "adapt": "adapt",
    "test": "test",
    "grid": "grid",
    "label": "label",
}


def _parse_value(text: str, current):
    text = text.strip()
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(current, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if current and isinstance(current[0], str) or all(not _is_number(t) for t in items):
            return tuple(items)
        return tuple(float(t) for t in items)
    if isinstance(current, int) and not isinstance(current, bool):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if current is None:
        if text.lower() == "none":
            return None
        return float(text) if _is_number(text) else text
    return text


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_config_text(text: str, base: ExperimentConfig | None = None, base_dir: Path | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    blocks = {name: dataclasses.asdict(getattr(cfg, attr)) if not isinstance(getattr(cfg, attr), Environment)
              else None for name, attr in _BLOCKS.items()}
    env_kw: dict = {}
    top: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." in key:
            block, name = key.split(".", 1)
            if block == "env":
                env_kw[name] = value
                continue
            if block not in blocks:
                raise ValueError(f"line {lineno}: unknown block {block!r}")
            current = blocks[block]
            if name not in current:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            current[name] = _parse_value(value, current[name])
        else:
            if key not in ("methods", "seed", "checkpoint", "workers"):
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            top[key] = value
    env = _build_env(cfg.env, env_kw, base_dir)
    kwargs = dict(
        env=env,
        signal=SignalConfig(**blocks["signal"]),
        train_data=TrainingDataConfig(**blocks["train_data"]),
        train=TrainConfig(**blocks["train"]),
        adapt=AdaptConfig(**blocks["adapt"]),
        test=TestConfig(**blocks["test"]),
        grid=RangeGrid(**blocks["grid"]),
        label=LabelConfig(**blocks["label"]),
        methods=cfg.methods,
        seed=cfg.seed,
        checkpoint=cfg.checkpoint,
        workers=cfg.workers,
    )
    if "methods" in top:
        kwargs["methods"] = tuple(m.strip() for m in top["methods"].split(",") if m.strip())
    if "seed" in top:
        kwargs["seed"] = int(top["seed"])
    if "checkpoint" in top:
        kwargs["checkpoint"] = top["checkpoint"]
    if "workers" in top:
        kwargs["workers"] = int(top["workers"])
    return ExperimentConfig(**kwargs)


def _build_env(env: Environment, kw: dict, base_dir: Path | None) -> Environment:
    if not kw:
        return env
    fields = {f.name: getattr(env, f.name) for f in dataclasses.fields(env)}
    for name, value in kw.items():
        if name == "ssp_file":
            path = Path(value)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            fields["ssp_base"] = load_ssp_csv(path)
        elif name == "ssp":
            # inline "depth:speed, depth:speed, ..."
            pairs = [p.split(":") for p in value.split(",") if p.strip()]
            fields["ssp_base"] = tuple((float(z), float(c)) for z, c in pairs)
        elif name == "array_depths":
            fields["array_depths"] = tuple(float(v) for v in value.split(","))
        elif name in fields:
            fields[name] = _parse_value(value, fields[name])
        else:
            raise ValueError(f"unknown environment key {name!r}")
    return Environment(**fields)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), base_dir=path.parent)
