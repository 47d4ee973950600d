"""Declarative machine model: a hierarchy of compute/storage levels.

Level 0 is the innermost tier (registers); the last level is the top of the
hierarchy (grid / process, backed by off-chip memory). Capacities are per
execution unit and bandwidths are bytes per cycle of an abstract clock.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import ParseError, ValidationError

DEFAULT_UTILIZATION_WINDOW = (0.125, 1.0)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return (isinstance(value, (int, float))) and not isinstance(value, bool)


@dataclass(frozen=True)
class LevelSpec:
    level_index: int
    unit_count: int
    memory_capacity_bytes: int
    load_bandwidth_bytes_per_cycle: int
    store_bandwidth_bytes_per_cycle: int
    max_parallel_binding: Optional[int] = None

    def validate(self, where: str = "level") -> None:
        for name in (
            "level_index",
            "unit_count",
            "memory_capacity_bytes",
            "load_bandwidth_bytes_per_cycle",
            "store_bandwidth_bytes_per_cycle",
        ):
            if not _is_int(getattr(self, name)):
                raise ValidationError(f"{where}.{name}", "must be an integer")
        if self.level_index < 0:
            raise ValidationError(f"{where}.level_index", "must be >= 0")
        if self.unit_count < 1:
            raise ValidationError(f"{where}.unit_count", "must be >= 1")
        if self.memory_capacity_bytes <= 0:
            raise ValidationError(f"{where}.memory_capacity_bytes", "must be > 0")
        if self.load_bandwidth_bytes_per_cycle <= 0:
            raise ValidationError(f"{where}.load_bandwidth_bytes_per_cycle", "must be > 0")
        if self.store_bandwidth_bytes_per_cycle <= 0:
            raise ValidationError(f"{where}.store_bandwidth_bytes_per_cycle", "must be > 0")
        if self.max_parallel_binding is not None:
            if not _is_int(self.max_parallel_binding) or self.max_parallel_binding < 1:
                raise ValidationError(
                    f"{where}.max_parallel_binding", "must be null or an integer >= 1"
                )


@dataclass(frozen=True)
class IsaGranularity:
    """Minimum tile multiples imposed by the base instruction.

    ``dim_multiples`` is keyed by instruction dimension (``m``, ``n``, ``k`` for an
    MMA-style instruction); programs map those dimensions onto their own axes.
    """

    dim_multiples: Mapping[str, int]
    throughput_ops_per_cycle: int

    def __post_init__(self):
        # canonical key order keeps equality and serialization stable
        object.__setattr__(self, "dim_multiples", dict(sorted(dict(self.dim_multiples).items())))

    def __hash__(self):
        return hash((tuple(self.dim_multiples.items()), self.throughput_ops_per_cycle))

    def validate(self) -> None:
        if not isinstance(self.dim_multiples, Mapping):
            raise ValidationError("isa.dim_multiples", "must be an object")
        for key, mult in self.dim_multiples.items():
            if not isinstance(key, str) or not key:
                raise ValidationError("isa.dim_multiples", "keys must be non-empty strings")
            if not _is_int(mult) or mult < 1:
                raise ValidationError(f"isa.dim_multiples.{key}", "must be an integer >= 1")
        if not _is_int(self.throughput_ops_per_cycle) or self.throughput_ops_per_cycle <= 0:
            raise ValidationError("isa.throughput_ops_per_cycle", "must be an integer > 0")


@dataclass(frozen=True)
class HardwareDescriptor:
    name: str
    levels: tuple[LevelSpec, ...]
    isa: IsaGranularity
    element_size_bytes: int
    utilization_window: tuple[float, float] = DEFAULT_UTILIZATION_WINDOW

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "utilization_window", tuple(self.utilization_window))
        self.validate()

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def top(self) -> int:
        return len(self.levels) - 1

    def validate(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ValidationError("name", "must be a non-empty string")
        if len(self.levels) < 2:
            raise ValidationError("levels", "at least 2 levels are required")
        for i, level in enumerate(self.levels):
            if not isinstance(level, LevelSpec):
                raise ValidationError(f"levels[{i}]", "must be a LevelSpec")
            level.validate(f"levels[{i}]")
            if level.level_index != i:
                raise ValidationError(
                    f"levels[{i}].level_index", "level indices must be contiguous from 0"
                )
        if not isinstance(self.isa, IsaGranularity):
            raise ValidationError("isa", "must be an IsaGranularity")
        self.isa.validate()
        if not _is_int(self.element_size_bytes) or self.element_size_bytes < 1:
            raise ValidationError("element_size_bytes", "must be an integer >= 1")
        window = self.utilization_window
        if len(window) != 2 or not all(_is_number(x) for x in window):
            raise ValidationError("utilization_window", "must be a pair of numbers")
        low, high = window
        if not (0 <= low < high <= 1):
            raise ValidationError(
                "utilization_window", f"need 0 <= low < high <= 1, got ({low}, {high})"
            )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "element_size_bytes": self.element_size_bytes,
            "utilization_window": [float(x) for x in self.utilization_window],
            "isa": {
                "dim_multiples": dict(self.isa.dim_multiples),
                "throughput_ops_per_cycle": self.isa.throughput_ops_per_cycle,
            },
            "levels": [
                {
                    "level_index": lv.level_index,
                    "unit_count": lv.unit_count,
                    "memory_capacity_bytes": lv.memory_capacity_bytes,
                    "load_bandwidth_bytes_per_cycle": lv.load_bandwidth_bytes_per_cycle,
                    "store_bandwidth_bytes_per_cycle": lv.store_bandwidth_bytes_per_cycle,
                    "max_parallel_binding": lv.max_parallel_binding,
                }
                for lv in self.levels
            ],
        }

    def digest(self) -> str:
        return hashlib.sha256(dumps_descriptor(self).encode()).hexdigest()


_TOP_KEYS = {"name", "element_size_bytes", "utilization_window", "isa", "levels"}
_ISA_KEYS = {"dim_multiples", "throughput_ops_per_cycle"}
_LEVEL_KEYS = {
    "level_index",
    "unit_count",
    "memory_capacity_bytes",
    "load_bandwidth_bytes_per_cycle",
    "store_bandwidth_bytes_per_cycle",
    "max_parallel_binding",
}
_LEVEL_REQUIRED = _LEVEL_KEYS - {"max_parallel_binding"}


def _check_keys(obj: Any, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ValidationError(where, "must be an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ValidationError(f"{prefix}{unknown[0]}", "unknown key")
    missing = sorted(required - set(obj))
    if missing:
        prefix = f"{where}." if where else ""
        raise ValidationError(f"{prefix}{missing[0]}", "missing required key")


def descriptor_from_dict(data: Any) -> HardwareDescriptor:
    """Strictly build a descriptor from parsed JSON. Unknown keys are rejected."""
    _check_keys(data, _TOP_KEYS, _TOP_KEYS - {"utilization_window"}, "")
    isa_raw = data["isa"]
    _check_keys(isa_raw, _ISA_KEYS, _ISA_KEYS, "isa")
    if not isinstance(isa_raw["dim_multiples"], dict):
        raise ValidationError("isa.dim_multiples", "must be an object")
    isa = IsaGranularity(
        dim_multiples=dict(isa_raw["dim_multiples"]),
        throughput_ops_per_cycle=isa_raw["throughput_ops_per_cycle"],
    )
    levels_raw = data["levels"]
    if not isinstance(levels_raw, list):
        raise ValidationError("levels", "must be a list")
    levels = []
    for i, raw in enumerate(levels_raw):
        _check_keys(raw, _LEVEL_KEYS, _LEVEL_REQUIRED, f"levels[{i}]")
        levels.append(LevelSpec(**raw))
    window = data.get("utilization_window", list(DEFAULT_UTILIZATION_WINDOW))
    if not isinstance(window, (list, tuple)):
        raise ValidationError("utilization_window", "must be a pair of numbers")
    return HardwareDescriptor(
        name=data["name"],
        levels=tuple(levels),
        isa=isa,
        element_size_bytes=data["element_size_bytes"],
        utilization_window=tuple(window),
    )


def dumps_descriptor(hw: HardwareDescriptor) -> str:
    return json.dumps(hw.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_descriptor(text: str) -> HardwareDescriptor:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed descriptor: {exc}") from exc
    return descriptor_from_dict(data)


def load_descriptor(path) -> HardwareDescriptor:
    """Read and fully validate a descriptor file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read descriptor {path}: {exc}") from exc
    return parse_descriptor(text)


def save_descriptor(hw: HardwareDescriptor, path) -> None:
    Path(path).write_text(dumps_descriptor(hw))


PRESET_NAMES = ("cpu-like", "gpu-vector", "gpu-matrix")
SYNTHETIC_NAMES = ("synthetic-a", "synthetic-b")
PRESET_DIR_ENV = "TILEPLAN_PRESET_DIR"


def _preset_text(name: str) -> str:
    override = os.environ.get(PRESET_DIR_ENV)
    if override:
        candidate = Path(override) / f"{name}.json"
        if candidate.exists():
            return candidate.read_text()
    return resources.files("tileplan.presets").joinpath(f"{name}.json").read_text()


def preset(name: str) -> HardwareDescriptor:
    """Look up a shipped descriptor by name (``gpu-matrix`` etc.)."""
    known = PRESET_NAMES + SYNTHETIC_NAMES
    if name not in known:
        raise ParseError(f"unknown preset {name!r}; known: {', '.join(known)}")
    return parse_descriptor(_preset_text(name))


def builtin_presets() -> list[HardwareDescriptor]:
    return [preset(name) for name in PRESET_NAMES]


def synthetic_backends() -> list[HardwareDescriptor]:
    """Two toy backends used to show adaptive backend choice.

    ``synthetic-a`` has coarse MMA-like granularity and high throughput,
    ``synthetic-b`` has unit granularity and low throughput.
    """
    return [preset(name) for name in SYNTHETIC_NAMES]


def resolve_hardware(spec: str) -> HardwareDescriptor:
    """Accept a preset name or a path to a descriptor file."""
    if spec in PRESET_NAMES + SYNTHETIC_NAMES:
        return preset(spec)
    return load_descriptor(spec)
