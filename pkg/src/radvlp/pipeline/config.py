"""Run configuration: file loading (TOML or JSON) plus per-phase settings."""

from __future__ import annotations

import json

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..objectives import TemperatureConfig
from ..text.encoder import TextEncoderConfig
from ..vision import ImageEncoderConfig

PHASES = ("vocab", "text_phase2", "text_phase3", "image_pretrain", "joint")

# Phases whose loss contrasts pairs within the batch.
CONTRASTIVE_PHASES = ("text_phase3", "image_pretrain", "joint")


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    batch_size: int = 32
    warmup_frac: float = 0.03
    weight_decay: float = 0.0

    def validate(self, contrastive: bool):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in [0, 1)")
        if contrastive and self.batch_size < 2:
            raise ValueError("contrastive phases need batch_size >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class PhaseConfig:
    epochs: int = 10
    eval_every: int = 1
    patience: int = 5
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    mask_rate: float = 0.15
    augment_scale: float = 1.0  # scales geometric/photometric magnitudes


@dataclass
class RunConfig:
    """Everything one training run needs; shared across CLI subcommands."""

    dataset: str = ""
    out: str = "runs/default"
    seed: int = 0
    vocab_size: int = 2000
    text: TextEncoderConfig | None = None
    image: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    temps: TemperatureConfig = field(default_factory=TemperatureConfig)
    phases: dict[str, PhaseConfig] = field(default_factory=dict)

    def phase_config(self, phase: str) -> PhaseConfig:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        return self.phases.get(phase, PhaseConfig())

    def to_dict(self):
        d = {
            "dataset": self.dataset,
            "out": self.out,
            "seed": self.seed,
            "vocab_size": self.vocab_size,
            "image": asdict(self.image),
            "temps": asdict(self.temps),
            "phases": {k: asdict(v) for k, v in self.phases.items()},
        }
        if self.text is not None:
            d["text"] = asdict(self.text)
        return d


DEFAULT_PHASE_SETTINGS = {
    "text_phase2": PhaseConfig(epochs=12, eval_every=2,
                               optimizer=OptimizerConfig(lr=1e-3)),
    "text_phase3": PhaseConfig(epochs=12, eval_every=2,
                               optimizer=OptimizerConfig(lr=1e-3)),
    "image_pretrain": PhaseConfig(epochs=6, eval_every=2,
                                  optimizer=OptimizerConfig(lr=2e-3), augment_scale=0.25),
    "joint": PhaseConfig(epochs=30, eval_every=3,
                         optimizer=OptimizerConfig(lr=1e-3), augment_scale=0.25),
}


def default_run_config(dataset: str, out: str, seed: int = 0) -> RunConfig:
    return RunConfig(dataset=dataset, out=out, seed=seed,
                     phases={k: v for k, v in DEFAULT_PHASE_SETTINGS.items()})


def _parse_phase(d: dict) -> PhaseConfig:
    opt = OptimizerConfig(**d.pop("optimizer", {}))
    return PhaseConfig(optimizer=opt, **d)


def load_config(path) -> RunConfig:
    """Read a TOML or JSON run config."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".toml":
        data = tomllib.loads(raw.decode("utf-8"))
    elif path.suffix == ".json":
        data = json.loads(raw)
    else:
        raise ValueError(f"config must be .toml or .json, got {path.suffix!r}")

    cfg = default_run_config(dataset=data.get("dataset", ""),
                             out=data.get("out", "runs/default"),
                             seed=int(data.get("seed", 0)))
    cfg.vocab_size = int(data.get("vocab_size", cfg.vocab_size))
    if "text" in data:
        cfg.text = TextEncoderConfig(**data["text"])
    if "image" in data:
        image = dict(data["image"])
        if "widths" in image:
            image["widths"] = tuple(image["widths"])
        cfg.image = ImageEncoderConfig(**image)
    if "temps" in data:
        cfg.temps = TemperatureConfig(**data["temps"])
    for name, sub in data.get("phases", {}).items():
        if name not in PHASES:
            raise ValueError(f"unknown phase {name!r} in config")
        cfg.phases[name] = _parse_phase(dict(sub))
    return cfg
