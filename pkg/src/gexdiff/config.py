"""JSON run configuration shared by the command-line tools.

Every section is optional; missing keys take the defaults below and
unknown keys are rejected. The effective (fully defaulted) config is what
gets echoed next to outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataset import DEFAULT_NEGATION, DEFAULT_TOP_K
from .denoiser import DenoiserConfig
from .errors import InvalidConfig, InvalidSpec
from .sampler import make_tau
from .synthdata import GeneratorSpec, random_spec
from .trainer import TrainConfig


@dataclass
class DataSection:
    top_k: int = DEFAULT_TOP_K
    negation: float = DEFAULT_NEGATION


@dataclass
class ScheduleSection:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class ModelSection:
    patch_size: int = 4
    hidden_size: int = 128
    n_blocks: int = 6
    n_heads: int = 8
    mlp_ratio: float = 4.0
    seed: int = 0  # parameter initialization

    def build(self, n_genes: int) -> DenoiserConfig:
        return DenoiserConfig(n_genes, self.patch_size, self.hidden_size, self.n_blocks,
                              self.n_heads, self.mlp_ratio)


@dataclass
class SampleSection:
    method: str = "ddim"
    n_steps: int = 100
    eta: float = 0.0
    n_samples: int = 500
    seed: int = 0
    tau_mode: str = "equidistant"
    batch_size: int = 256

    def __post_init__(self):
        if self.method not in ("ddpm", "ddim"):
            raise InvalidConfig(f"sample.method must be 'ddpm' or 'ddim', got {self.method!r}")
        if self.n_samples < 1 or self.batch_size < 1:
            raise InvalidConfig("sample.n_samples and sample.batch_size must be >= 1")


@dataclass
class BenchSection:
    rates: list[int] = field(default_factory=lambda: [1, 10, 20, 50, 100])
    holdout: int = 500

    def __post_init__(self):
        if not self.rates or any(int(r) < 1 for r in self.rates):
            raise InvalidConfig(f"bench.rates must be positive integers, got {self.rates}")
        if self.holdout < 1:
            raise InvalidConfig("bench.holdout must be >= 1")


def _section(cls, raw, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise InvalidConfig(f"section '{name}' must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InvalidConfig(f"unknown keys in section '{name}': {unknown}")
    try:
        return cls(**raw)
    except TypeError as err:
        raise InvalidConfig(f"section '{name}': {err}") from None


def generator_from_dict(d: dict) -> GeneratorSpec:
    """Explicit spec (with ``components``) or a random one (with ``n_components``)."""
    if "components" in d:
        return GeneratorSpec.from_dict(d)
    allowed = {"n_genes", "n_cells", "n_components", "seed", "dropout_range"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise InvalidSpec(f"unknown generator keys: {unknown}")
    try:
        return random_spec(int(d["n_genes"]), int(d["n_cells"]), int(d.get("n_components", 2)),
                           int(d.get("seed", 0)), tuple(d.get("dropout_range", (0.1, 0.6))))
    except KeyError as err:
        raise InvalidSpec(f"generator needs {err}") from None


SECTIONS = ("data", "schedule", "model", "train", "sample", "bench", "generator")


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleSection = field(default_factory=SampleSection)
    bench: BenchSection = field(default_factory=BenchSection)
    generator: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise InvalidConfig("config must be a JSON object")
        unknown = sorted(set(d) - set(SECTIONS))
        if unknown:
            raise InvalidConfig(f"unknown config sections: {unknown}")
        train_raw = d.get("train") or {}
        if not isinstance(train_raw, dict):
            raise InvalidConfig("section 'train' must be a JSON object")
        try:
            train = TrainConfig.from_dict(train_raw)
        except TypeError as err:
            raise InvalidConfig(f"section 'train': {err}") from None
        gen = d.get("generator")
        if gen is not None:
            if not isinstance(gen, dict):
                raise InvalidConfig("section 'generator' must be a JSON object")
            generator_from_dict(gen)  # validate early
        cfg = cls(_section(DataSection, d.get("data"), "data"),
                  _section(ScheduleSection, d.get("schedule"), "schedule"),
                  _section(ModelSection, d.get("model"), "model"),
                  train,
                  _section(SampleSection, d.get("sample"), "sample"),
                  _section(BenchSection, d.get("bench"), "bench"),
                  gen)
        if cfg.sample.method == "ddim":
            make_tau(cfg.schedule.T, cfg.sample.n_steps, cfg.sample.tau_mode, cfg.sample.eta)
        return cfg

    def to_dict(self) -> dict:
        out = {k: asdict(getattr(self, k)) for k in SECTIONS[:-1]}
        if self.generator is not None:
            out["generator"] = self.generator
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def read_json(path) -> dict:
    """Parse a JSON file, reporting the location of syntax errors."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InvalidConfig(f"file not found: {p}") from None
    except OSError as err:
        raise InvalidConfig(f"cannot read {p}: {err.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise InvalidConfig(f"{p}: invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(read_json(path))
