"""Hybrid analytical / empirical cost analysis.

The analytical side is the recursive temporal-pipeline model: at each level,
``load + (trips - 1) * max(load, inner) + inner + store`` for the serial loops,
scaled by ``ceil(parallel_trips / units)``. Every quantity is an integer
cycle count; divisions round up.

The empirical side is a deterministic event-driven simulator standing in for
on-device profiling. Level-0 micro-kernels are simulated at base-instruction
granularity, which lets loads overlap computation inside one micro-kernel;
the analytical base case cannot see that overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .candgen import MicroKernelCandidate, tile_dict
from .errors import ChainError
from .hwmodel import HardwareDescriptor, LevelSpec
from .program import AnalyzerKind, LoopClass, TensorProgramSpec

ANALYTICAL = "analytical"
EMPIRICAL = "empirical"


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class CostEstimate:
    t_load_cycles: int
    t_store_cycles: int
    inner_cost_cycles: int
    temporal_cycles: int
    f_parallel: int
    total_cycles: int
    source: str = ANALYTICAL

    def to_dict(self) -> dict:
        return {
            "t_load": self.t_load_cycles,
            "t_store": self.t_store_cycles,
            "inner": self.inner_cost_cycles,
            "temporal": self.temporal_cycles,
            "f_parallel": self.f_parallel,
            "total": self.total_cycles,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostEstimate":
        return cls(
            t_load_cycles=d["t_load"],
            t_store_cycles=d["t_store"],
            inner_cost_cycles=d["inner"],
            temporal_cycles=d["temporal"],
            f_parallel=d["f_parallel"],
            total_cycles=d["total"],
            source=d["source"],
        )


@dataclass(frozen=True)
class AnalyzedCandidate:
    candidate: MicroKernelCandidate
    best_child: Optional[int]  # index into the level below
    cost: CostEstimate


# ------------------------------------------------------------------ formulas


def t_load(level: LevelSpec, bytes_moved: int) -> int:
    if bytes_moved < 0:
        raise ValueError("bytes_moved must be >= 0")
    return ceil_div(bytes_moved, level.load_bandwidth_bytes_per_cycle)


def t_store(level: LevelSpec, bytes_moved: int) -> int:
    if bytes_moved < 0:
        raise ValueError("bytes_moved must be >= 0")
    return ceil_div(bytes_moved, level.store_bandwidth_bytes_per_cycle)


def temporal_cost(t_load: int, trip: int, inner: int, t_store: int) -> int:
    if trip < 1:
        raise ValueError("trip must be >= 1")
    return t_load + (trip - 1) * max(t_load, inner) + inner + t_store


def parallel_factor(parallel_extent: int, unit_count: int) -> int:
    if parallel_extent < 1 or unit_count < 1:
        raise ValueError("parallel_extent and unit_count must be >= 1")
    return ceil_div(parallel_extent, unit_count)


def split_trips(prog: TensorProgramSpec, level: int, outer, inner) -> tuple[int, int]:
    """(serial trips, parallel trips) of ``inner`` tiles covering ``outer`` at ``level``."""
    classes = prog.layers[level].loop_class_map
    serial = parallel = 1
    for i, a in enumerate(prog.axis_names):
        q, r = divmod(outer[i], inner[i])
        if r:
            raise ChainError(f"axis {a}: {inner[i]} does not divide {outer[i]}")
        if classes[a] == LoopClass.PL:
            parallel *= q
        else:
            serial *= q
    return serial, parallel


def stage_cycles(prog: TensorProgramSpec, hw: HardwareDescriptor, level: int, tile):
    """(load cycles, store cycles) for staging one tile at ``level``."""
    t = tile_dict(prog, tile)
    spec = hw.levels[level]
    lb = int(prog.load_elements(level, t)) * hw.element_size_bytes
    sb = int(prog.store_elements(level, t)) * hw.element_size_bytes
    return t_load(spec, lb), t_store(spec, sb)


def compute_cycles(prog: TensorProgramSpec, hw: HardwareDescriptor, tile) -> int:
    return ceil_div(int(prog.ops(tile_dict(prog, tile))), hw.isa.throughput_ops_per_cycle)


def level_estimate(
    prog, hw, level: int, tile, inner: int, region=None, source: str = ANALYTICAL
) -> CostEstimate:
    """Cost of running ``level``'s loops over ``region`` in steps of ``tile``.

    ``region`` defaults to the tile itself (a single chunk).
    """
    region = tile if region is None else region
    serial, par = split_trips(prog, level, region, tile)
    lo, st = stage_cycles(prog, hw, level, tile)
    temporal = temporal_cost(lo, serial, inner, st)
    f = parallel_factor(par, hw.levels[level].unit_count)
    return CostEstimate(lo, st, inner, temporal, f, f * temporal, source)


def padded_shape(shape: Sequence[int], tile: Sequence[int]) -> tuple[int, ...]:
    return tuple(ceil_div(int(s), int(t)) * int(t) for s, t in zip(shape, tile))


def analytical_breakdown(
    chain: Sequence[Sequence[int]],
    runtime_shape: Optional[Sequence[int]],
    hw: HardwareDescriptor,
    prog: TensorProgramSpec,
    level0_inner: Optional[int] = None,
) -> list[CostEstimate]:
    """Per-level estimates for a chain given top to bottom; index 0 is level 0.

    Entry ``L`` is the cost of level ``L``'s loops over the enclosing tile
    (over the padded runtime shape at the top). ``level0_inner`` substitutes a
    measured base case for the level-0 compute term.
    """
    tiles = [tuple(int(x) for x in t) for t in reversed(list(chain))]
    if len(tiles) != hw.depth:
        raise ChainError(f"chain has {len(tiles)} tiles, hardware has {hw.depth} levels")
    for lower, upper in zip(tiles, tiles[1:]):
        if any(u % l for u, l in zip(upper, lower)):
            raise ChainError(f"inconsistent chain: {lower} does not divide {upper}")
    top = hw.top
    if runtime_shape is None:
        top_region = tiles[top]
    else:
        top_region = padded_shape(runtime_shape, tiles[top])
    regions = tiles[1:] + [top_region]
    inner = compute_cycles(prog, hw, tiles[0]) if level0_inner is None else int(level0_inner)
    out = []
    for level in range(hw.depth):
        est = level_estimate(prog, hw, level, tiles[level], inner, regions[level])
        out.append(est)
        inner = est.total_cycles
    return out


def analytical_cost(chain, runtime_shape, hw, prog, level0_inner: Optional[int] = None):
    """Top-level :class:`CostEstimate` for ``chain`` (top to bottom)."""
    return analytical_breakdown(chain, runtime_shape, hw, prog, level0_inner)[-1]


# ----------------------------------------------------------------- simulator


@dataclass(frozen=True)
class Fragment:
    """A loop fragment for the simulator.

    ``loads[i]`` and ``computes[i]`` are the cycles of iteration ``i``;
    iterations are grouped into output groups of ``group_size`` and each
    group ends with ``stores[g]``.
    """

    loads: Sequence[int]
    computes: Sequence[int]
    stores: Sequence[int]
    group_size: int

    @classmethod
    def uniform(cls, iterations: int, load: int, compute: int, store: int) -> "Fragment":
        return cls((load,) * iterations, (compute,) * iterations, (store,), iterations)

    def __post_init__(self):
        n = len(self.loads)
        if n == 0 or len(self.computes) != n:
            raise ValueError("loads and computes must be non-empty and equally long")
        if self.group_size < 1 or n % self.group_size:
            raise ValueError("group_size must divide the iteration count")
        if len(self.stores) != n // self.group_size:
            raise ValueError("one store per group is required")


def simulate(fragment: Fragment, hw=None, overlap: bool = True, store_overlap: bool = False) -> int:
    """Cycle count of ``fragment`` on one unit.

    Without ``overlap`` every event runs back to back. With it, loads are
    double-buffered: the load of iteration ``i`` may start once the load unit
    is free and the compute of iteration ``i - 2`` has released its buffer.
    With ``store_overlap`` a group's store runs on its own port instead of
    blocking the next group's loads.
    """
    if not overlap:
        return int(np.sum(fragment.loads) + np.sum(fragment.computes) + np.sum(fragment.stores))
    return kernels.simulate(
        fragment.loads, fragment.computes, fragment.stores, fragment.group_size, store_overlap
    )


def _even_split(total: int, parts: int) -> np.ndarray:
    q, r = divmod(total, parts)
    out = np.full(parts, q, dtype=np.int64)
    out[:r] += 1
    return out


def micro_kernel_fragment(prog, hw, tile) -> Fragment:
    """Level-0 tile broken into base-instruction steps.

    Output fragments (groups) follow the instruction granularity of the
    spatial axes; each group walks the reduction axes one instruction step at
    a time. Load, compute and store totals equal the analytical base terms.
    """
    t = tile_dict(prog, tile)
    groups = steps = 1
    for a in prog.axes:
        count = t[a.name] // prog.isa_multiple(hw, a.name)
        if a.reduction:
            steps *= count
        else:
            groups *= count
    lo, st = stage_cycles(prog, hw, 0, tile)
    co = compute_cycles(prog, hw, tile)
    n = groups * steps
    return Fragment(_even_split(lo, n), _even_split(co, n), _even_split(st, groups), steps)


def empirical_cost(
    candidate,
    chain_below: Sequence = (),
    hw: HardwareDescriptor = None,
    prog: TensorProgramSpec = None,
    overlap: bool = True,
    store_overlap: bool = False,
    child_inner: Optional[int] = None,
) -> CostEstimate:
    """Simulated cost of one chunk of ``candidate``.

    At level 0 the micro-kernel is simulated directly. Above it the child
    tile (``chain_below[0]``, whose own inner cost is ``child_inner``) is run
    as a double-buffered pipeline over the candidate tile.
    """
    tile = candidate.tile if isinstance(candidate, MicroKernelCandidate) else tuple(candidate)
    level = candidate.level_index if isinstance(candidate, MicroKernelCandidate) else len(chain_below)
    lo, st = stage_cycles(prog, hw, level, tile)
    if level == 0:
        measured = simulate(micro_kernel_fragment(prog, hw, tile), hw, overlap, store_overlap)
        inner = measured - lo - st
    else:
        child = chain_below[0]
        child_tile = child.tile if isinstance(child, MicroKernelCandidate) else tuple(child)
        if child_inner is None:
            child_inner = empirical_cost(
                child, chain_below[1:], hw, prog, overlap, store_overlap
            ).inner_cost_cycles
        serial, par = split_trips(prog, level - 1, tile, child_tile)
        c_lo, c_st = stage_cycles(prog, hw, level - 1, child_tile)
        frag = Fragment.uniform(serial, c_lo, child_inner, c_st)
        f = parallel_factor(par, hw.levels[level - 1].unit_count)
        inner = f * simulate(frag, hw, overlap=True)
    total = lo + inner + st
    return CostEstimate(lo, st, inner, total, 1, total, EMPIRICAL)


# -------------------------------------------------------------- bank analysis


def _level_arrays(prog, hw, level: int, tiles: np.ndarray):
    cols = {a: tiles[:, i] for i, a in enumerate(prog.axis_names)}
    spec = hw.levels[level]
    lb = np.asarray(prog.load_elements(level, cols), dtype=np.int64) * hw.element_size_bytes
    sb = np.asarray(prog.store_elements(level, cols), dtype=np.int64) * hw.element_size_bytes
    lb = np.broadcast_to(lb, (tiles.shape[0],))
    sb = np.broadcast_to(sb, (tiles.shape[0],))
    lo = -(-lb // spec.load_bandwidth_bytes_per_cycle)
    st = -(-sb // spec.store_bandwidth_bytes_per_cycle)
    return lo.astype(np.int64), st.astype(np.int64)


def composed_inner(prog, hw, level: int, parent_tiles, child_tiles, child_lo, child_inner, child_st):
    """Vectorised inner cost of parent tiles at ``level`` run through the given children."""
    classes = prog.layers[level - 1].loop_class_map
    q = parent_tiles // child_tiles
    serial = np.ones(q.shape[0], dtype=np.int64)
    par = np.ones(q.shape[0], dtype=np.int64)
    for i, a in enumerate(prog.axis_names):
        if classes[a] == LoopClass.PL:
            par *= q[:, i]
        else:
            serial *= q[:, i]
    units = hw.levels[level - 1].unit_count
    f = -(-par // units)
    return f * kernels.pipeline_cost(child_lo, serial, child_inner, child_st)


def analyze_levels(prog, hw, levels, maps, analyzers, overlap=True, store_overlap=False):
    """Bottom-up pass returning per-level lists of :class:`AnalyzedCandidate`."""
    analyzed: list[list[AnalyzedCandidate]] = []
    prev_inner = None
    prev_lo = prev_st = None
    prev_tiles = None
    for level, cands in enumerate(levels):
        kind = AnalyzerKind(analyzers[level])
        source = EMPIRICAL if kind == AnalyzerKind.EMPIRICAL else ANALYTICAL
        tiles = np.asarray([c.tile for c in cands], dtype=np.int64)
        lo, st = _level_arrays(prog, hw, level, tiles)
        best = [None] * len(cands)
        if level == 0:
            if kind == AnalyzerKind.EMPIRICAL:
                inner = np.asarray(
                    [
                        empirical_cost(c, (), hw, prog, overlap, store_overlap).inner_cost_cycles
                        for c in cands
                    ],
                    dtype=np.int64,
                )
            else:
                inner = np.asarray([compute_cycles(prog, hw, c.tile) for c in cands], dtype=np.int64)
        else:
            links = maps[level - 1]
            parent_idx = np.repeat(np.arange(len(cands)), [len(l) for l in links])
            child_idx = np.asarray([j for l in links for j in l], dtype=np.int64)
            # the simulated double-buffered pipeline has the same closed form
            costs = composed_inner(
                prog,
                hw,
                level,
                tiles[parent_idx],
                prev_tiles[child_idx],
                prev_lo[child_idx],
                prev_inner[child_idx],
                prev_st[child_idx],
            )
            # children are listed in lexicographic order, so a stable sort keeps
            # the smallest tile first among equal costs
            order = np.lexsort((np.arange(costs.shape[0]), costs, parent_idx))
            first = np.ones(order.shape[0], dtype=bool)
            first[1:] = parent_idx[order][1:] != parent_idx[order][:-1]
            chosen = order[first]
            inner = np.empty(len(cands), dtype=np.int64)
            inner[parent_idx[chosen]] = costs[chosen]
            for p, c in zip(parent_idx[chosen].tolist(), child_idx[chosen].tolist()):
                best[p] = c
        row = []
        for i, cand in enumerate(cands):
            total = int(lo[i] + inner[i] + st[i])
            est = CostEstimate(int(lo[i]), int(st[i]), int(inner[i]), total, 1, total, source)
            row.append(AnalyzedCandidate(cand, best[i], est))
        analyzed.append(row)
        prev_inner, prev_lo, prev_st, prev_tiles = inner, lo, st, tiles
    return analyzed


def analyze_bank(bank, hw: HardwareDescriptor, prog: TensorProgramSpec):
    """Attach cost annotations and best children to every candidate in ``bank``."""
    cfg = bank.config
    analyzers = cfg.resolved_analyzers(hw)
    levels = [[a.candidate for a in row] for row in bank.levels]
    analyzed = analyze_levels(
        prog, hw, levels, bank.maps, analyzers, cfg.overlap, cfg.store_overlap
    )
    return replace(bank, levels=analyzed)


def best_chain(bank, top_index: int) -> list[int]:
    """Indices of the chain rooted at a top candidate, listed top to bottom."""
    chain = [top_index]
    for level in range(len(bank.levels) - 1, 0, -1):
        chain.append(bank.levels[level][chain[-1]].best_child)
    return chain
