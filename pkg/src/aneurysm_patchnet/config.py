"""Pipeline configuration: one JSON document, validated against dataclasses.

Every field has a default; a config file only lists what it overrides.
Unknown keys, wrong types and failed invariants raise :class:`ConfigError`
naming the dotted field path.
"""
from __future__ import annotations

import collections.abc
import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Mapping

from .augment import AugmentationSpec, ElasticSpec
from .errors import ConfigError, ValidationError
from .features import DEFAULT_GRID_BBOX, GRID_PER_AXIS, build_grid, default_landmarks, load_landmarks
from .model import ModelConfig, TrainConfig
from .phantom import CohortSpec, PhantomSpec
from .sampler import POLICIES, SamplerConfig

NETWORKS = ("baseline", "informed")
ALL_CELLS = tuple(f"{n}:{p}" for n in NETWORKS for p in POLICIES)


@dataclass(frozen=True)
class PathsConfig:
    cohort: str | None = None
    output: str = "runs"


@dataclass(frozen=True)
class FeatureConfig:
    grid_bbox: tuple[tuple[float, float, float], tuple[float, float, float]] = DEFAULT_GRID_BBOX
    grid_n_per_axis: int = GRID_PER_AXIS
    landmarks: str | None = None  # path to a 24-landmark JSON file; None = shipped default

    def grid(self):
        return build_grid(self.grid_bbox, self.grid_n_per_axis)

    def landmark_set(self):
        return default_landmarks() if self.landmarks is None else load_landmarks(self.landmarks)


@dataclass(frozen=True)
class ExperimentSettings:
    n_repetitions: int = 10
    n_outer: int = 5
    n_inner: int = 3
    learning_rates: tuple[float, ...] = (1e-5, 1e-4, 1e-3)
    reselect_each_repetition: bool = False
    cells: tuple[str, ...] = ALL_CELLS
    decision_threshold: float = 0.5
    plots: bool = True

    def __post_init__(self):
        if self.n_repetitions < 1 or self.n_outer < 2 or self.n_inner < 2:
            raise ValidationError("need n_repetitions >= 1 and at least 2 outer and inner folds")
        if not self.learning_rates or min(self.learning_rates) <= 0:
            raise ValidationError("learning_rates must be a non-empty list of positive values")
        bad = [c for c in self.cells if c not in ALL_CELLS]
        if bad or not self.cells:
            raise ValidationError(f"unknown cells {bad}; expected a subset of {list(ALL_CELLS)}")


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = PathsConfig()
    phantom: PhantomSpec = PhantomSpec()
    cohort: CohortSpec = CohortSpec()
    sampler: SamplerConfig = SamplerConfig()
    policy: str = "random"
    augmentation: AugmentationSpec = AugmentationSpec()
    features: FeatureConfig = FeatureConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    experiment: ExperimentSettings = ExperimentSettings()
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValidationError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if (self.model.small_side, self.model.large_side) != (self.sampler.small_side, self.sampler.large_side):
            raise ValidationError(
                f"model input sides {(self.model.small_side, self.model.large_side)} differ from "
                f"sampler patch sides {(self.sampler.small_side, self.sampler.large_side)}")

    def model_config(self, network: str) -> ModelConfig:
        informed = dataclasses.replace(self.model, informed=True)
        return informed if network == "informed" else informed.baseline()

    @classmethod
    def quick(cls, **overrides) -> "PipelineConfig":
        """Desk-scale preset: 1.75 mm phantoms, 12/24 patches, tiny networks, short training."""
        base = cls(
            phantom=PhantomSpec.quick(),
            cohort=CohortSpec(n_subjects=40, prevalence=0.4, seed=7),
            sampler=SamplerConfig.quick(),
            augmentation=AugmentationSpec(elastic=ElasticSpec(grid_spacing_vox=6.0, max_displacement_vox=1.0,
                                                              smoothing_sigma_vox=2.0)),
            model=ModelConfig.quick(),
            train=TrainConfig.quick(),
            experiment=ExperimentSettings(learning_rates=(3e-4, 1e-3, 3e-3)),
        )
        return dataclasses.replace(base, **overrides)


# --------------------------------------------------------------------------
# generic dict <-> dataclass conversion

def to_json(obj) -> Any:
    if is_dataclass(obj):
        return {f.name: to_json(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, Mapping):
        return {str(k): to_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_json(v) for v in obj]
    return obj


def _is_optional(tp) -> tuple[bool, Any]:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) < len(typing.get_args(tp)):
            return True, args[0] if len(args) == 1 else typing.Union[tuple(args)]
    return False, tp


def _convert(tp, value, path: str):
    optional, inner = _is_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{path}: must not be null")
    tp = inner
    if is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return from_dict(tp, value, path)
    origin = typing.get_origin(tp)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin in (dict, collections.abc.Mapping):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{path}: expected an object")
        _, vt = typing.get_args(tp)
        return {str(k): _convert(vt, v, f"{path}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: Mapping, path: str = "", base=None):
    """Build dataclass ``cls`` from ``data``, starting from ``base`` (or the defaults)."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{unknown[0]}: unknown field")
    kwargs = {}
    for name in names:
        sub = f"{path}.{name}" if path else name
        current = getattr(base, name) if base is not None else None
        if name in data:
            value = data[name]
            if is_dataclass(hints[name]) and isinstance(value, Mapping):
                kwargs[name] = from_dict(hints[name], value, sub, current)
            else:
                kwargs[name] = _convert(hints[name], value, sub)
        elif base is not None:
            kwargs[name] = current
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides (values parsed as JSON when possible)."""
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: cannot descend into a non-object")
        node[parts[-1]] = parse_value(raw)
    return doc


def load_config(path: str | os.PathLike | None = None, overrides=(), quick: bool = False) -> PipelineConfig:
    """Load a config file (or none) on top of the defaults or the quick preset."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be an object")
    doc = apply_overrides(doc, overrides)
    base = PipelineConfig.quick() if quick else PipelineConfig()
    return from_dict(PipelineConfig, doc, "", base)


def dump_config(config: PipelineConfig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_json(config), indent=2, sort_keys=True))
    return path
