"""Tensor-program IR: iteration axes, per-level loop classes and stage actions."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from .errors import BindingError
from .hwmodel import HardwareDescriptor


class LoopClass(str, enum.Enum):
    PL = "PL"  # parallel
    TSL = "TSL"  # temporal spatial
    TRL = "TRL"  # temporal reduction


class AnalyzerKind(str, enum.Enum):
    EMPIRICAL = "empirical"
    ANALYTICAL = "analytical"


BASE_INSTRUCTION = "base-instruction"
NO_COMPUTE = "none"


@dataclass(frozen=True)
class LoopAxis:
    name: str
    extent_kind: str = "dynamic"  # "static" | "dynamic"
    reduction: bool = False
    extent: Optional[int] = None  # fixed extent for static axes
    max_tile: Optional[int] = None  # optional enumeration cap


@dataclass(frozen=True)
class StageDescriptor:
    load_action: tuple[str, ...] = ()
    store_action: tuple[str, ...] = ()
    compute_action: str = NO_COMPUTE


@dataclass(frozen=True)
class LayerMetaInfo:
    layer_depth: int
    loop_class_map: Mapping[str, LoopClass]
    analyzer_kind: AnalyzerKind
    stages: StageDescriptor

    def axes_of(self, cls: LoopClass) -> tuple[str, ...]:
        return tuple(a for a, c in self.loop_class_map.items() if c == cls)


@dataclass(frozen=True)
class Operand:
    name: str
    is_output: bool


@dataclass(frozen=True)
class TensorProgramSpec:
    operator_kind: str  # "GEMM" | "CONV2D"
    axes: tuple[LoopAxis, ...]
    operands: tuple[Operand, ...]
    layers: tuple[LayerMetaInfo, ...]
    isa_axis_map: Mapping[str, str]  # instruction dim -> program axis

    @property
    def axis_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def reduction_axes(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes if a.reduction)

    @property
    def identifier(self) -> str:
        statics = "".join(f",{a.name}={a.extent}" for a in self.axes if a.extent_kind == "static")
        return f"{self.operator_kind.lower()}/L{len(self.layers)}{statics}"

    def axis(self, name: str) -> LoopAxis:
        for a in self.axes:
            if a.name == name:
                return a
        raise KeyError(name)

    def operand_footprint(self, operand: str, tile: Mapping[str, int]):
        """Element count of ``operand`` for one tile. Works on ints or numpy arrays."""
        if self.operator_kind == "GEMM":
            m, n, k = tile["m"], tile["n"], tile["k"]
            if operand == "A":
                return m * k
            if operand == "B":
                return k * n
            if operand == "C":
                return m * n
        elif self.operator_kind == "CONV2D":
            if operand == "I":
                return (
                    tile["n"]
                    * tile["ci"]
                    * (tile["h"] + tile["kh"] - 1)
                    * (tile["w"] + tile["kw"] - 1)
                )
            if operand == "W":
                return tile["co"] * tile["ci"] * tile["kh"] * tile["kw"]
            if operand == "O":
                return tile["n"] * tile["co"] * tile["h"] * tile["w"]
        raise KeyError(f"{self.operator_kind} has no operand {operand!r}")

    def level_footprint_elements(self, level: int, tile: Mapping[str, int]):
        """Elements resident in the level's storage: every operand it loads or stores."""
        stages = self.layers[level].stages
        names = dict.fromkeys(stages.load_action + stages.store_action)
        total = 0
        for name in names:
            total = total + self.operand_footprint(name, tile)
        return total

    def load_elements(self, level: int, tile: Mapping[str, int]):
        total = 0
        for name in self.layers[level].stages.load_action:
            total = total + self.operand_footprint(name, tile)
        return total

    def store_elements(self, level: int, tile: Mapping[str, int]):
        total = 0
        for name in self.layers[level].stages.store_action:
            total = total + self.operand_footprint(name, tile)
        return total

    def ops(self, tile: Mapping[str, int]):
        """Arithmetic ops (multiply + add) for one tile of the iteration space."""
        total = 2
        for name in self.axis_names:
            total = total * tile[name]
        return total

    def isa_multiple(self, hw: HardwareDescriptor, axis: str) -> int:
        for dim, mapped in self.isa_axis_map.items():
            if mapped == axis:
                return hw.isa.dim_multiples.get(dim, 1)
        return 1

    def with_analyzers(self, kinds: Sequence[AnalyzerKind]) -> "TensorProgramSpec":
        if len(kinds) != len(self.layers):
            raise BindingError(f"expected {len(self.layers)} analyzer kinds, got {len(kinds)}")
        layers = tuple(
            replace(layer, analyzer_kind=AnalyzerKind(kind))
            for layer, kind in zip(self.layers, kinds)
        )
        return replace(self, layers=layers)


def _layers(
    levels: int,
    parallel: Sequence[str],
    reduction: Sequence[str],
    inputs: tuple[str, ...],
    output: str,
) -> tuple[LayerMetaInfo, ...]:
    top = levels - 1
    layers = []
    for depth in range(levels):
        classes = {}
        for a in parallel:
            classes[a] = LoopClass.PL if depth == top else LoopClass.TSL
        for a in reduction:
            classes[a] = LoopClass.TRL
        if depth == 0:
            stages = StageDescriptor(inputs, (output,), BASE_INSTRUCTION)
        elif depth < top:
            stages = StageDescriptor(inputs, (), NO_COMPUTE)
        else:
            stages = StageDescriptor()
        layers.append(LayerMetaInfo(depth, classes, AnalyzerKind.ANALYTICAL, stages))
    return tuple(layers)


def gemm_program(levels: int) -> TensorProgramSpec:
    """C[m, n] += A[m, k] * B[k, n] mapped onto ``levels`` hardware tiers."""
    if levels < 2:
        raise BindingError("a program needs at least 2 levels")
    axes = (LoopAxis("m"), LoopAxis("n"), LoopAxis("k", reduction=True))
    operands = (Operand("A", False), Operand("B", False), Operand("C", True))
    return TensorProgramSpec(
        operator_kind="GEMM",
        axes=axes,
        operands=operands,
        layers=_layers(levels, ("m", "n"), ("k",), ("A", "B"), "C"),
        isa_axis_map={"m": "m", "n": "n", "k": "k"},
    )


def conv2d_program(levels: int, kh: int = 3, kw: int = 3) -> TensorProgramSpec:
    """Direct stride-1 convolution O[n,co,h,w] += I[n,ci,h+r,w+s] * W[co,ci,r,s].

    ``h`` and ``w`` are output extents; the filter extents are static.
    """
    if levels < 2:
        raise BindingError("a program needs at least 2 levels")
    axes = (
        LoopAxis("n", max_tile=1),
        LoopAxis("co", max_tile=64),
        LoopAxis("h", max_tile=16),
        LoopAxis("w", max_tile=16),
        LoopAxis("ci", reduction=True, max_tile=64),
        LoopAxis("kh", extent_kind="static", reduction=True, extent=kh),
        LoopAxis("kw", extent_kind="static", reduction=True, extent=kw),
    )
    operands = (Operand("I", False), Operand("W", False), Operand("O", True))
    return TensorProgramSpec(
        operator_kind="CONV2D",
        axes=axes,
        operands=operands,
        layers=_layers(levels, ("n", "co", "h", "w"), ("ci", "kh", "kw"), ("I", "W"), "O"),
        isa_axis_map={"m": "w", "n": "co", "k": "ci"},
    )


def program_by_name(name: str, levels: int) -> TensorProgramSpec:
    if name == "gemm":
        return gemm_program(levels)
    if name == "conv2d":
        return conv2d_program(levels)
    raise BindingError(f"unknown operator {name!r} (expected gemm or conv2d)")


def program_from_identifier(identifier: str, levels: int) -> TensorProgramSpec:
    """Inverse of :attr:`TensorProgramSpec.identifier` for the built-in operators."""
    head, _, rest = identifier.partition(",")
    name, _, depth = head.partition("/L")
    if not depth.isdigit() or int(depth) != levels:
        raise BindingError(f"program {identifier!r} does not have {levels} levels")
    statics = {}
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        if not value.isdigit():
            raise BindingError(f"bad static extent in program identifier {identifier!r}")
        statics[key] = int(value)
    if name == "gemm" and not statics:
        prog = gemm_program(levels)
    elif name == "conv2d" and set(statics) == {"kh", "kw"}:
        prog = conv2d_program(levels, statics["kh"], statics["kw"])
    else:
        raise BindingError(f"unknown program identifier {identifier!r}")
    if prog.identifier != identifier:
        raise BindingError(f"non-canonical program identifier {identifier!r}")
    return prog


def default_analyzers(hw: HardwareDescriptor) -> tuple[AnalyzerKind, ...]:
    """Empirical at L0 for CPU-style machines, at L0 and L1 for GPU-style ones."""
    empirical_levels = 2 if hw.name.startswith("gpu") else 1
    return tuple(
        AnalyzerKind.EMPIRICAL if i < empirical_levels else AnalyzerKind.ANALYTICAL
        for i in range(hw.depth)
    )


def validate_binding(prog: TensorProgramSpec, hw: HardwareDescriptor) -> None:
    """Raise :class:`BindingError` unless ``prog`` can be laid onto ``hw``."""
    if len(prog.layers) != hw.depth:
        raise BindingError(
            f"arity mismatch: program has {len(prog.layers)} layers, hardware has {hw.depth} levels"
        )
    names = prog.axis_names
    if len(set(names)) != len(names):
        raise BindingError("axis names must be unique")
    operand_names = {o.name for o in prog.operands}
    for dim in hw.isa.dim_multiples:
        if dim not in prog.isa_axis_map:
            raise BindingError(f"instruction dimension {dim!r} is not mapped to a program axis")
    for dim, axis in prog.isa_axis_map.items():
        if axis not in names:
            raise BindingError(f"instruction dimension {dim!r} maps to unknown axis {axis!r}")
    for i, layer in enumerate(prog.layers):
        if layer.layer_depth != i:
            raise BindingError(f"layer {i} has layer_depth {layer.layer_depth}")
        for a in names:
            if a not in layer.loop_class_map:
                raise BindingError(f"axis {a!r} missing from the loop map of layer {i}")
        extra = set(layer.loop_class_map) - set(names)
        if extra:
            raise BindingError(f"layer {i} classifies unknown axes {sorted(extra)}")
        for a in prog.axes:
            cls = LoopClass(layer.loop_class_map[a.name])
            if a.reduction and cls != LoopClass.TRL:
                raise BindingError(f"reduction axis {a.name!r} must be TRL at layer {i}")
            if not a.reduction and cls == LoopClass.TRL:
                raise BindingError(f"output axis {a.name!r} cannot be TRL at layer {i}")
        st = layer.stages
        if st.compute_action not in (BASE_INSTRUCTION, NO_COMPUTE):
            raise BindingError(f"layer {i}: unknown compute action {st.compute_action!r}")
        if (st.compute_action == BASE_INSTRUCTION) != (i == 0):
            raise BindingError(
                f"stage legality: base-instruction compute must sit at level 0 only (layer {i})"
            )
        for op in st.load_action + st.store_action:
            if op not in operand_names:
                raise BindingError(f"layer {i} stages unknown operand {op!r}")
        if not st.load_action and st.store_action:
            raise BindingError(f"stage legality: layer {i} stores without loading")
        AnalyzerKind(layer.analyzer_kind)
