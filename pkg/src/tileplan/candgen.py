"""Bottom-up, hardware-aware micro-kernel candidate generation.

Each level enumerates tile shapes on a power-of-two-and-three lattice, keeps
those whose staged footprint falls inside the descriptor's utilization window,
then sieves them against the level below so every kept tile is an exact
per-axis multiple of at least one lower-level tile.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import EmptyCandidateSetError
from .hwmodel import HardwareDescriptor, LevelSpec
from .program import LoopClass, TensorProgramSpec

TileShape = tuple  # per-axis extents in program axis order

DEFAULT_TOP_MULTIPLE_CAP = 4
DEFAULT_MAX_EXTENT = 256


@dataclass(frozen=True)
class MicroKernelCandidate:
    level_index: int
    tile: TileShape
    footprint_bytes: int
    parallel_degree: int


# candidate tile -> lower-level tiles it is an exact multiple of (sorted)
CompatibilityMap = dict


def tile_dict(prog: TensorProgramSpec, tile: Sequence[int]) -> dict:
    return dict(zip(prog.axis_names, (int(x) for x in tile)))


def lattice_values(multiple: int, cap: int) -> list[int]:
    """``multiple * 2**i`` and ``multiple * 3 * 2**i`` up to ``cap``, ascending."""
    out = set()
    base = multiple
    while base <= cap:
        out.add(base)
        if 3 * base <= cap:
            out.add(3 * base)
        base *= 2
    return sorted(out)


def _has_capacity_filter(level: LevelSpec, prog: TensorProgramSpec, hw: HardwareDescriptor) -> bool:
    stages = prog.layers[level.level_index].stages
    return level.level_index < hw.top and bool(stages.load_action or stages.store_action)


def footprint_bytes(prog: TensorProgramSpec, hw: HardwareDescriptor, level: int, tile) -> int:
    return int(prog.level_footprint_elements(level, tile_dict(prog, tile))) * hw.element_size_bytes


def parallel_degree(prog: TensorProgramSpec, hw: HardwareDescriptor, level: int, tile) -> int:
    """Base-instruction fragments spanned along the level's parallel axes."""
    t = tile_dict(prog, tile)
    degree = 1
    for a in prog.layers[level].axes_of(LoopClass.PL):
        degree *= -(-t[a] // prog.isa_multiple(hw, a))
    return degree


def _static_values(axis, multiple: int) -> list[int]:
    values = [d for d in range(1, axis.extent + 1) if axis.extent % d == 0 and d % multiple == 0]
    return values or [axis.extent]


def _axis_values(
    prog, hw, level: LevelSpec, top_multiple_cap: int, max_extent: Optional[int]
) -> list[list[int]]:
    """Per-axis lattice for one level, capped by the axis-agnostic footprint bound."""
    mults = [prog.isa_multiple(hw, a) for a in prog.axis_names]
    # static axes never pad: only divisors of the fixed extent
    if level.level_index == hw.top:
        below = hw.levels[hw.top - 1]
        below_tiles = init_cands(below, prog, hw, top_multiple_cap, max_extent)
        arr = np.asarray(below_tiles, dtype=np.int64)
        caps = [int(arr[:, i].max()) * top_multiple_cap for i in range(len(mults))]
    else:
        caps = _footprint_caps(prog, hw, level, mults)
        if max_extent is not None:
            caps = [min(c, max(max_extent, m)) for c, m in zip(caps, mults)]
    values = []
    for i, axis in enumerate(prog.axes):
        if axis.extent_kind == "static":
            vals = _static_values(axis, mults[i])
        else:
            vals = lattice_values(mults[i], max(caps[i], mults[i]))
        if axis.max_tile is not None:
            vals = [v for v in vals if v <= axis.max_tile] or [vals[0]]
        values.append(vals)
    return values


def _footprint_caps(prog, hw, level: LevelSpec, mults: Sequence[int]) -> list[int]:
    if not _has_capacity_filter(level, prog, hw):
        return list(mults)
    minimum = {}
    for a, m in zip(prog.axes, mults):
        minimum[a.name] = min(_static_values(a, m)) if a.extent_kind == "static" else m
    limit = level.memory_capacity_bytes * hw.utilization_window[1]
    caps = []
    for a, m in zip(prog.axis_names, mults):
        best = m
        for e in lattice_values(m, m << 40):
            t = dict(minimum, **{a: e})
            if prog.level_footprint_elements(level.level_index, t) * hw.element_size_bytes > limit:
                break
            best = e
        caps.append(best)
    return caps


def init_cands(
    level: LevelSpec,
    prog: TensorProgramSpec,
    hw: HardwareDescriptor,
    top_multiple_cap: int = DEFAULT_TOP_MULTIPLE_CAP,
    max_extent: Optional[int] = DEFAULT_MAX_EXTENT,
) -> list[TileShape]:
    """Tile shapes admitted by the level's resource limits, in lexicographic order.

    Below the top, every extent is capped by the largest lattice value whose
    footprint (other axes at their minimum) still fits, and by ``max_extent``.
    Top-level extents are capped at ``top_multiple_cap`` times the largest
    extent admitted one level down.
    """
    values = _axis_values(prog, hw, level, top_multiple_cap, max_extent)
    grids = np.meshgrid(*[np.asarray(v, dtype=np.int64) for v in values], indexing="ij")
    tiles = np.stack([g.ravel() for g in grids], axis=1)
    keep = np.ones(tiles.shape[0], dtype=bool)
    cols = {a: tiles[:, i] for i, a in enumerate(prog.axis_names)}
    if _has_capacity_filter(level, prog, hw):
        fp = prog.level_footprint_elements(level.level_index, cols) * hw.element_size_bytes
        low, high = hw.utilization_window
        cap = level.memory_capacity_bytes
        keep &= (fp <= high * cap) & (fp >= low * cap)
    if level.max_parallel_binding is not None:
        degree = np.ones(tiles.shape[0], dtype=np.int64)
        for a in prog.layers[level.level_index].axes_of(LoopClass.PL):
            m = prog.isa_multiple(hw, a)
            degree *= -(-cols[a] // m)
        keep &= degree <= level.max_parallel_binding
    tiles = tiles[keep]
    if tiles.shape[0] == 0:
        raise EmptyCandidateSetError(
            f"level {level.level_index}: utilization window {hw.utilization_window} "
            f"admits no tile shape (capacity {level.memory_capacity_bytes} B)"
        )
    order = np.lexsort(tiles.T[::-1])
    return [tuple(int(x) for x in row) for row in tiles[order]]


def filter_by_isa(cands: Iterable[TileShape], isa, prog: Optional[TensorProgramSpec] = None):
    """Keep tiles whose constrained axes are exact instruction multiples.

    Without ``prog`` the multiples are matched positionally against
    ``isa.dim_multiples`` in (m, n, k) order, which suits GEMM-shaped tuples.
    """
    if prog is not None:
        constrained = [
            (prog.axis_names.index(axis), isa.dim_multiples.get(dim, 1))
            for dim, axis in prog.isa_axis_map.items()
        ]
    else:
        order = [d for d in ("m", "n", "k") if d in isa.dim_multiples]
        order += [d for d in isa.dim_multiples if d not in order]
        constrained = [(i, isa.dim_multiples[d]) for i, d in enumerate(order)]
    out = []
    for tile in cands:
        if all(i >= len(tile) or tile[i] % m == 0 for i, m in constrained):
            out.append(tile)
    return out


def _as_tile(c: Union[MicroKernelCandidate, Sequence[int], int]) -> TileShape:
    if isinstance(c, MicroKernelCandidate):
        return c.tile
    if isinstance(c, (int, np.integer)):
        return (int(c),)
    return tuple(int(x) for x in c)


def filter_by_multiples(cands: Iterable, prev: Iterable):
    """Sieve ``cands`` against ``prev``: keep exact per-axis multiples, record links.

    Returns ``(filtered, cmap)``; ``filtered`` is lexicographically sorted and
    ``cmap[tile]`` lists every divisor tile from ``prev`` in lexicographic order.
    """
    cand_tiles = sorted({_as_tile(c) for c in cands})
    prev_tiles = sorted({_as_tile(p) for p in prev})
    if not prev_tiles:
        raise ValueError("filter_by_multiples needs a non-empty previous level")
    if not cand_tiles:
        return [], {}
    ca = np.asarray(cand_tiles, dtype=np.int64)
    pa = np.asarray(prev_tiles, dtype=np.int64)
    ci, pj = kernels.divisible_pairs(ca, pa)
    cmap: dict = {}
    for i, j in zip(ci.tolist(), pj.tolist()):
        cmap.setdefault(cand_tiles[i], []).append(prev_tiles[j])
    filtered = sorted(cmap)
    return filtered, {t: cmap[t] for t in filtered}


def _make_candidate(prog, hw, level: int, tile) -> MicroKernelCandidate:
    return MicroKernelCandidate(
        level_index=level,
        tile=tuple(tile),
        footprint_bytes=footprint_bytes(prog, hw, level, tile)
        if _has_capacity_filter(hw.levels[level], prog, hw)
        else 0,
        parallel_degree=parallel_degree(prog, hw, level, tile),
    )


def generate_candidates_for_layer(
    level: int,
    prog: TensorProgramSpec,
    hw: HardwareDescriptor,
    prev: Sequence[MicroKernelCandidate] = (),
    top_multiple_cap: int = DEFAULT_TOP_MULTIPLE_CAP,
    max_extent: Optional[int] = DEFAULT_MAX_EXTENT,
):
    """One step of the bottom-up build. Returns ``(candidates, cmap)``."""
    spec = hw.levels[level]
    tiles = init_cands(spec, prog, hw, top_multiple_cap, max_extent)
    if level == 0:
        if prev:
            raise ValueError("level 0 takes no previous candidates")
        tiles = filter_by_isa(tiles, hw.isa, prog)
        cmap: dict = {}
    else:
        if not prev:
            raise ValueError(f"level {level} needs the finalized level {level - 1} set")
        tiles, cmap = filter_by_multiples(tiles, prev)
    if not tiles:
        raise EmptyCandidateSetError(f"level {level}: no candidate survives filtering")
    cands = [_make_candidate(prog, hw, level, t) for t in sorted(tiles)]
    return cands, cmap


def generate_all_levels(
    prog: TensorProgramSpec,
    hw: HardwareDescriptor,
    top_multiple_cap: int = DEFAULT_TOP_MULTIPLE_CAP,
    max_extent: Optional[int] = DEFAULT_MAX_EXTENT,
):
    """Candidate sets for every level plus the maps between adjacent levels."""
    levels: list[list[MicroKernelCandidate]] = []
    maps: list[dict] = []
    prev: Sequence[MicroKernelCandidate] = ()
    for level in range(hw.depth):
        cands, cmap = generate_candidates_for_layer(
            level, prog, hw, prev, top_multiple_cap, max_extent
        )
        levels.append(cands)
        if level > 0:
            maps.append(cmap)
        prev = cands
    return levels, maps


def build_bank(prog: TensorProgramSpec, hw: HardwareDescriptor, config=None):
    """Offline build: generate every level, annotate costs, assemble the bank.

    Only ``prog``, ``hw`` and ``config`` are read; no runtime shape is involved.
    """
    from .bank import BuildConfig, assemble_bank
    from .cost import analyze_bank
    from .program import validate_binding

    config = config or BuildConfig()
    config = replace(config, analyzers=config.resolved_analyzers(hw))
    prog = prog.with_analyzers(config.resolved_analyzers(hw))
    validate_binding(prog, hw)
    levels, maps = generate_all_levels(prog, hw, config.top_multiple_cap, config.max_extent)
    bank = assemble_bank(prog, hw, config, levels, maps)
    return analyze_bank(bank, hw, prog)
