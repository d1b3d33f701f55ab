"""Experiment configuration: one TOML file drives every CLI command.

The delay/Doppler regions are stated once under [scene] and shared by the
preprocessing crop and the cell encoding, so those can never disagree. The
desk preset is sized for CPU runs; the paper preset records the full-scale
hyperparameters as executable documentation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .channel import SamplingGrid, SceneConfig
from .encoding import CellGridSpec
from .errors import ConfigError, ValidationError
from .model import ModelConfig
from .preprocess import RegionOfInterest, WindowKind
from .refine import GnConfig
from .scenario import BistaticScenario
from .training import TrainConfig


@dataclass(frozen=True)
class GridSection:
    n_freq: int = 256
    n_time: int = 64
    delta_f: float = 625e3
    delta_t: float = 64e-6
    f0: Optional[float] = None  # None -> centered axis, -B/2
    t0: float = 0.0

    def build(self) -> SamplingGrid:
        f0 = -0.5 * self.n_freq * self.delta_f if self.f0 is None else self.f0
        return SamplingGrid(self.n_freq, self.n_time, self.delta_f, self.delta_t,
                            f0=f0, t0=self.t0)


@dataclass(frozen=True)
class SceneSection:
    path_count: tuple[int, int] = (1, 10)
    magnitude_db: tuple[float, float] = (-30.0, 0.0)
    delay_region: tuple[float, float] = (0.0, 0.025)
    doppler_region: tuple[float, float] = (-0.05, 0.05)
    snr_db: tuple[float, float] = (0.0, 30.0)

    def build(self, seed: int = 0) -> SceneConfig:
        return SceneConfig(path_count_range=tuple(self.path_count),
                           magnitude_range_db=tuple(self.magnitude_db),
                           delay_region=tuple(self.delay_region),
                           doppler_region=tuple(self.doppler_region),
                           snr_range_db=tuple(self.snr_db), seed=seed)


@dataclass(frozen=True)
class PreprocessSection:
    windows: tuple[str, ...] = ("tukey:0.5", "cosine", "hann", "rectangular")
    height: int = 128
    width: int = 128

    def window_kinds(self) -> tuple[WindowKind, ...]:
        return tuple(WindowKind.parse(w) for w in self.windows)


@dataclass(frozen=True)
class CellsSection:
    rows: int = 8
    cols: int = 8
    capacity: int = 2


@dataclass(frozen=True)
class ModelSection:
    base_channels: int = 16
    encoder_blocks: int = 4
    spp_kernels: tuple[int, ...] = (3, 5, 7, 9)
    head_channels: tuple[int, ...] = (64, 16)


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 30
    n_train: int = 5000
    n_val: int = 200
    w_offsets: float = 1.0
    w_detect: float = 1.0

    def build(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, beta1=self.beta1,
                           beta2=self.beta2, batch_size=self.batch_size,
                           epochs=self.epochs, w_offsets=self.w_offsets,
                           w_detect=self.w_detect, seed=seed)


@dataclass(frozen=True)
class RefineSection:
    max_iters: int = 10
    armijo_c: float = 1e-4
    step_shrink: float = 0.5
    max_backtracks: int = 20
    damping: float = 1e-10
    tol: float = 1e-12
    delta: float = 0.8  # detection threshold for measurement-style inference

    def build(self) -> GnConfig:
        return GnConfig(max_iters=self.max_iters, armijo_c=self.armijo_c,
                        step_shrink=self.step_shrink, max_backtracks=self.max_backtracks,
                        damping=self.damping, tol=self.tol)


@dataclass(frozen=True)
class EvaluationSection:
    snr_db: tuple[float, ...] = (0.0, 10.0, 20.0)
    trials: int = 500
    deltas: tuple[float, ...] = (0.5, 0.8)
    gate_bins: float = 1.0
    edc_p_max: int = 6
    refine_steps: int = 10
    estimators: tuple[str, ...] = ("peak_gn", "iterative_ml")


@dataclass(frozen=True)
class DatasetSection:
    n_samples: int = 5200


@dataclass(frozen=True)
class ScenarioSection:
    tx: tuple[float, float, float] = (-1.12, 0.0, 0.0)
    rx: tuple[float, float, float] = (1.12, 0.0, 0.0)
    center: tuple[float, float, float] = (0.0, 2.0, 0.0)
    beam_length: float = 3.0
    rpm: float = 60.0
    carrier_hz: float = 5.9e9
    start_angle_deg: float = 0.0
    duration_s: float = 2.0
    sample_rate_hz: float = 100.0

    def build(self) -> BistaticScenario:
        return BistaticScenario(tx_pos=tuple(self.tx), rx_pos=tuple(self.rx),
                                rotation_center=tuple(self.center),
                                beam_length=self.beam_length, rpm=self.rpm,
                                carrier_hz=self.carrier_hz,
                                start_angle_deg=self.start_angle_deg)


_SECTIONS = {
    "grid": GridSection, "scene": SceneSection, "preprocess": PreprocessSection,
    "cells": CellsSection, "model": ModelSection, "training": TrainingSection,
    "refine": RefineSection, "evaluation": EvaluationSection,
    "dataset": DatasetSection, "scenario": ScenarioSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSection = field(default_factory=GridSection)
    scene: SceneSection = field(default_factory=SceneSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    cells: CellsSection = field(default_factory=CellsSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    refine: RefineSection = field(default_factory=RefineSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)

    # ---- cross-section consistency --------------------------------------
    def validate(self) -> "ExperimentConfig":
        pre, cells, model = self.preprocess, self.cells, self.model
        if pre.height != pre.width:
            raise ConfigError("preprocess raster must be square (height == width)")
        down = 2 ** model.encoder_blocks
        if pre.height % down != 0 or pre.height // down != cells.rows:
            raise ConfigError(
                f"input {pre.height} with {model.encoder_blocks} encoder blocks "
                f"yields {pre.height // down} cells per axis, config says {cells.rows}"
            )
        if cells.rows != cells.cols:
            raise ConfigError("cell grid must be square to match a square input")
        try:
            self.roi()
            self.scene.build()
            self.sampling_grid()
            self.model_config()
            self.training.build()
            self.refine.build()
            self.scenario.build()
        except (ValidationError, ConfigError) as exc:
            raise ConfigError(str(exc)) from exc
        for d in self.evaluation.deltas:
            if not 0.0 < d <= 1.0:
                raise ConfigError("evaluation deltas must lie in (0, 1]")
        if self.dataset.n_samples < self.training.n_train + self.training.n_val:
            raise ConfigError("dataset.n_samples must cover n_train + n_val")
        return self

    # ---- builders for the module-level types -----------------------------
    def sampling_grid(self) -> SamplingGrid:
        return self.grid.build()

    def roi(self) -> RegionOfInterest:
        return RegionOfInterest(
            delay_min=self.scene.delay_region[0], delay_max=self.scene.delay_region[1],
            doppler_min=self.scene.doppler_region[0], doppler_max=self.scene.doppler_region[1],
            height=self.preprocess.height, width=self.preprocess.width,
        )

    def cell_spec(self) -> CellGridSpec:
        return CellGridSpec(rows=self.cells.rows, cols=self.cells.cols,
                            capacity=self.cells.capacity, region=self.roi())

    def model_config(self, seed: int = 0) -> ModelConfig:
        return ModelConfig(
            input_channels=2 * len(self.preprocess.windows),
            input_hw=self.preprocess.height,
            base_channels=self.model.base_channels,
            n_encoder_blocks=self.model.encoder_blocks,
            spp_kernels=tuple(self.model.spp_kernels),
            head_channels=tuple(self.model.head_channels),
            capacity=self.cells.capacity,
            seed=seed,
        )

    # ---- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        sections = {}
        for name, payload in doc.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown config section [{name}]")
            klass = _SECTIONS[name]
            known = klass.__dataclass_fields__
            unknown = set(payload) - set(known)
            if unknown:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
            coerced = {}
            for key, value in payload.items():
                if isinstance(value, list):
                    value = tuple(value)
                coerced[key] = value
            try:
                sections[name] = klass(**coerced)
            except (TypeError, ValidationError) as exc:
                raise ConfigError(f"bad [{name}] section: {exc}") from exc
        return cls(**sections)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc).validate()

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_toml(self) -> str:
        """Render the config as TOML (flat sections of scalars and arrays)."""
        def fmt(value):
            if isinstance(value, bool):
                return "true" if value else "false"
            if isinstance(value, (int,)):
                return str(value)
            if isinstance(value, float):
                return repr(value) if math.isfinite(value) else "nan"
            if isinstance(value, str):
                return json.dumps(value)
            if isinstance(value, (list, tuple)):
                return "[" + ", ".join(fmt(v) for v in value) + "]"
            raise ConfigError(f"cannot render {value!r} as TOML")

        lines = []
        for name in _SECTIONS:
            lines.append(f"[{name}]")
            for key, value in asdict(getattr(self, name)).items():
                if value is None:
                    continue  # optional keys fall back to their defaults
                lines.append(f"{key} = {fmt(value)}")
            lines.append("")
        return "\n".join(lines)


def desk_scale() -> ExperimentConfig:
    """CPU-sized default: 256x64 snapshots, 8x128x128 inputs, 8x8x2 cells."""
    return ExperimentConfig().validate()


def paper_scale() -> ExperimentConfig:
    """Full-scale hyperparameters (documentation; not sized for CPU runs)."""
    cfg = ExperimentConfig(
        grid=GridSection(n_freq=1024, n_time=100, delta_f=156.25e3, delta_t=64e-6),
        scene=SceneSection(path_count=(1, 10), magnitude_db=(-30.0, 0.0),
                           delay_region=(0.0, 0.025), doppler_region=(-0.05, 0.05),
                           snr_db=(0.0, 50.0)),
        preprocess=PreprocessSection(height=256, width=256),
        cells=CellsSection(rows=16, cols=16, capacity=2),
        training=TrainingSection(learning_rate=3e-4, batch_size=512, epochs=100,
                                 n_train=500_000, n_val=1000),
        dataset=DatasetSection(n_samples=511_000),
    )
    return cfg.validate()
