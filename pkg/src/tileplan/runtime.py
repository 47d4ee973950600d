"""Runtime selection: pick the cheapest top-level chain for a concrete shape.

Selection only evaluates the closed-form model at the top level. Everything
below the top tile was fixed offline (each top candidate carries its best
child chain), so the work per call is one vectorised pass over the top level.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .bank import KernelBank
from .cost import analytical_breakdown, padded_shape
from .errors import EmptyCandidateSetError, PlanError
from .hwmodel import HardwareDescriptor
from .program import LoopClass, TensorProgramSpec, program_from_identifier

PLAN_VERSION = 1


@dataclass(frozen=True)
class RuntimeShape:
    axes: tuple[str, ...]
    extents: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "extents", tuple(int(x) for x in self.extents))
        if len(self.axes) != len(self.extents):
            raise PlanError("shape axes and extents differ in length")
        for a, e in zip(self.axes, self.extents):
            if e < 1:
                raise PlanError(f"extent of {a} must be >= 1, got {e}")

    @classmethod
    def for_program(cls, prog: TensorProgramSpec, values: Mapping[str, int]) -> "RuntimeShape":
        """Complete ``values`` with static extents and check it against ``prog``."""
        unknown = set(values) - set(prog.axis_names)
        if unknown:
            raise PlanError(f"unknown axes {sorted(unknown)} for {prog.identifier}")
        extents = []
        for a in prog.axes:
            if a.extent_kind == "static":
                v = int(values.get(a.name, a.extent))
                if v != a.extent:
                    raise PlanError(f"axis {a.name} is static with extent {a.extent}, got {v}")
            elif a.name in values:
                v = int(values[a.name])
            else:
                raise PlanError(f"missing extent for axis {a.name}")
            extents.append(v)
        return cls(prog.axis_names, tuple(extents))

    def as_dict(self) -> dict:
        return dict(zip(self.axes, self.extents))


@dataclass(frozen=True)
class SchedulePlan:
    program: str
    backend: str
    hardware_digest: str
    shape: tuple[int, ...]
    chain: tuple[tuple[int, ...], ...]  # top to bottom
    padded_shape: tuple[int, ...]
    launch_geometry: dict  # level -> {axis: tile count} for PL-bearing levels
    padding_waste: float
    predicted_cost_cycles: int
    level0_inner_cycles: int  # measured or analytical base case the chain was built with
    selection_time_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "version": PLAN_VERSION,
            "program": self.program,
            "backend": self.backend,
            "hardware_digest": self.hardware_digest,
            "shape": list(self.shape),
            "chain": [list(t) for t in self.chain],
            "padded_shape": list(self.padded_shape),
            "launch_geometry": {str(k): v for k, v in self.launch_geometry.items()},
            "padding_waste": self.padding_waste,
            "predicted_cost_cycles": self.predicted_cost_cycles,
            "level0_inner_cycles": self.level0_inner_cycles,
            "selection_time_s": self.selection_time_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchedulePlan":
        if d.get("version") != PLAN_VERSION:
            raise PlanError(f"plan format version {d.get('version')!r}, expected {PLAN_VERSION}")
        try:
            return cls(
                program=str(d["program"]),
                backend=str(d["backend"]),
                hardware_digest=str(d["hardware_digest"]),
                shape=tuple(int(x) for x in d["shape"]),
                chain=tuple(tuple(int(x) for x in t) for t in d["chain"]),
                padded_shape=tuple(int(x) for x in d["padded_shape"]),
                launch_geometry={int(k): dict(v) for k, v in d["launch_geometry"].items()},
                padding_waste=float(d["padding_waste"]),
                predicted_cost_cycles=int(d["predicted_cost_cycles"]),
                level0_inner_cycles=int(d["level0_inner_cycles"]),
                selection_time_s=float(d.get("selection_time_s", 0.0)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise PlanError(f"malformed plan: {exc!r}") from exc


def dumps_plan(plan: SchedulePlan) -> str:
    return json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n"


def save_plan(plan: SchedulePlan, path) -> None:
    Path(path).write_text(dumps_plan(plan))


def load_plan(path) -> SchedulePlan:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PlanError(f"cannot read plan {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise PlanError("plan file must hold an object")
    return SchedulePlan.from_dict(data)


def validate_plan(plan: SchedulePlan, hw: HardwareDescriptor, prog: TensorProgramSpec) -> None:
    """Structural checks: the plan must describe a legal chain for ``shape``."""
    if plan.program != prog.identifier:
        raise PlanError(f"plan is for {plan.program!r}, not {prog.identifier!r}")
    if plan.hardware_digest != hw.digest():
        raise PlanError("plan was made for different hardware")
    n = len(prog.axes)
    if len(plan.chain) != hw.depth or any(len(t) != n for t in plan.chain):
        raise PlanError("plan chain has the wrong shape")
    if len(plan.shape) != n or len(plan.padded_shape) != n:
        raise PlanError("plan shape has the wrong arity")
    if any(x < 1 for t in plan.chain for x in t) or any(x < 1 for x in plan.shape):
        raise PlanError("plan extents must be >= 1")
    for upper, lower in zip(plan.chain, plan.chain[1:]):
        if any(u % l for u, l in zip(upper, lower)):
            raise PlanError(f"chain tile {lower} does not divide {upper}")
    if tuple(plan.padded_shape) != padded_shape(plan.shape, plan.chain[0]):
        raise PlanError("padded shape does not match the top tile")
    for a, s, p in zip(prog.axes, plan.shape, plan.padded_shape):
        if a.extent_kind == "static" and (s != a.extent or p != a.extent):
            raise PlanError(f"static axis {a.name} must keep extent {a.extent}")


# ----------------------------------------------------------------- selection


def _top_costs(bank: KernelBank, extents: np.ndarray, hw: HardwareDescriptor, prog):
    """Per top candidate: (cost, padded volume, padded shapes)."""
    tiles, inner = bank.top_arrays()
    counts = -(-extents[None, :] // tiles)
    padded = counts * tiles
    top = hw.top
    classes = prog.layers[top].loop_class_map
    serial = np.ones(tiles.shape[0], dtype=np.int64)
    par = np.ones(tiles.shape[0], dtype=np.int64)
    for i, a in enumerate(prog.axis_names):
        if classes[a] == LoopClass.PL:
            par *= counts[:, i]
        else:
            serial *= counts[:, i]
    spec = hw.levels[top]
    f = -(-par // spec.unit_count)
    # the top level stages nothing, so its temporal term is trips * inner
    lo, st = _stage_arrays(bank, hw, prog)
    temporal = lo + (serial - 1) * np.maximum(lo, inner) + inner + st
    return f * temporal, np.prod(padded, axis=1), padded


def _stage_arrays(bank, hw, prog):
    key = "top_stage"
    if key not in bank._cache:
        from .cost import _level_arrays

        bank._cache[key] = _level_arrays(prog, hw, hw.top, bank.tiles(hw.top))
    return bank._cache[key]


def _launch_geometry(prog, chain_bottom_up, padded, depth) -> dict:
    geometry = {}
    regions = list(chain_bottom_up[1:]) + [padded]
    for level in range(depth):
        pl = prog.layers[level].axes_of(LoopClass.PL)
        if not pl:
            continue
        geometry[level] = {
            a: int(regions[level][prog.axis_names.index(a)] // chain_bottom_up[level][prog.axis_names.index(a)])
            for a in pl
        }
    return geometry


def _shape_array(shape, prog) -> np.ndarray:
    if isinstance(shape, RuntimeShape):
        if shape.axes != prog.axis_names:
            raise PlanError(f"shape axes {shape.axes} do not match {prog.axis_names}")
        return np.asarray(shape.extents, dtype=np.int64)
    if isinstance(shape, Mapping):
        return np.asarray(RuntimeShape.for_program(prog, shape).extents, dtype=np.int64)
    return np.asarray(RuntimeShape(prog.axis_names, tuple(shape)).extents, dtype=np.int64)


def select(bank: KernelBank, shape, hw: HardwareDescriptor, prog: TensorProgramSpec) -> SchedulePlan:
    """Cheapest top-level chain for ``shape``.

    Ties on predicted cost go to the smaller padded volume (less waste), then
    to the lexicographically smaller top tile.
    """
    t0 = time.perf_counter()
    if bank.depth == 0 or not bank.levels[-1]:
        raise EmptyCandidateSetError("bank has no top-level candidates")
    if bank.program != prog.identifier:
        raise PlanError(f"bank is for {bank.program!r}, not {prog.identifier!r}")
    extents = _shape_array(shape, prog)
    cost, volume, padded = _top_costs(bank, extents, hw, prog)
    order = np.lexsort((np.arange(cost.shape[0]), volume, cost))
    best = int(order[0])
    elapsed = time.perf_counter() - t0
    chain = [a.candidate.tile for a in bank.chain(best)]
    pshape = tuple(int(x) for x in padded[best])
    true_volume = int(np.prod(extents))
    return SchedulePlan(
        program=prog.identifier,
        backend=hw.name,
        hardware_digest=hw.digest(),
        shape=tuple(int(x) for x in extents),
        chain=tuple(chain),
        padded_shape=pshape,
        launch_geometry=_launch_geometry(prog, chain[::-1], pshape, hw.depth),
        padding_waste=1.0 - true_volume / int(volume[best]),
        predicted_cost_cycles=int(cost[best]),
        level0_inner_cycles=bank.levels[0][_bottom_index(bank, best)].cost.inner_cost_cycles,
        selection_time_s=max(elapsed, 1e-9),
    )


def _bottom_index(bank: KernelBank, top_index: int) -> int:
    idx = top_index
    for level in range(bank.depth - 1, 0, -1):
        idx = bank.levels[level][idx].best_child
    return idx


def top_level_costs(bank: KernelBank, shape, hw, prog) -> np.ndarray:
    """Predicted cost of every top candidate for ``shape`` (used by reports and tests)."""
    cost, _, _ = _top_costs(bank, _shape_array(shape, prog), hw, prog)
    return cost


def select_adaptive(banks: Sequence, shape, prog: Optional[TensorProgramSpec] = None) -> SchedulePlan:
    """Run :func:`select` per backend and keep the cheapest plan.

    ``banks`` holds ``(hw, bank)`` pairs; equal costs go to the earlier pair.
    """
    if not banks:
        raise PlanError("select_adaptive needs at least one backend")
    t0 = time.perf_counter()
    best = None
    for entry in banks:
        hw, bank = entry[0], entry[1]
        p = entry[2] if len(entry) > 2 else prog or program_from_identifier(bank.program, hw.depth)
        plan = select(bank, shape, hw, p)
        if best is None or plan.predicted_cost_cycles < best.predicted_cost_cycles:
            best = plan
    elapsed = time.perf_counter() - t0
    return _with_time(best, elapsed)


def _with_time(plan: SchedulePlan, elapsed: float) -> SchedulePlan:
    from dataclasses import replace

    return replace(plan, selection_time_s=max(elapsed, 1e-9))


# ----------------------------------------------------------------- reporting


def plan_cost_breakdown(plan: SchedulePlan, hw: HardwareDescriptor, prog: TensorProgramSpec) -> dict:
    """Per-level load / inner / store cycles and parallel factors for ``plan``.

    The top row's ``total`` equals ``predicted_cost_cycles``.
    """
    rows = analytical_breakdown(
        plan.chain, plan.shape, hw, prog, level0_inner=plan.level0_inner_cycles
    )
    levels = []
    for level, est in enumerate(rows):
        levels.append(
            {
                "level": level,
                "load_cycles": est.t_load_cycles,
                "compute_cycles": est.inner_cost_cycles,
                "store_cycles": est.t_store_cycles,
                "temporal_cycles": est.temporal_cycles,
                "f_parallel": est.f_parallel,
                "total_cycles": est.total_cycles,
            }
        )
    return {
        "backend": plan.backend,
        "levels": levels,
        "total_cycles": rows[-1].total_cycles,
        "predicted_cost_cycles": plan.predicted_cost_cycles,
        "padding_waste": plan.padding_waste,
        "selection_time_s": plan.selection_time_s,
    }
