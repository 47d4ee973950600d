"""Kernel bank: the offline artifact and its canonical text form.

Layout on disk is line-oriented JSON. The first line is the header; each
following line is one candidate row or one compatibility-map row. Keys are
sorted and separators are fixed, so equal banks serialize to equal bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .candgen import (
    DEFAULT_MAX_EXTENT,
    DEFAULT_TOP_MULTIPLE_CAP,
    MicroKernelCandidate,
    _has_capacity_filter,
    footprint_bytes,
    parallel_degree,
)
from .cost import AnalyzedCandidate, CostEstimate, analyze_levels
from .errors import BankError, BankVersionError, CorruptBankError, DigestMismatchError
from .hwmodel import HardwareDescriptor
from .program import AnalyzerKind, TensorProgramSpec, default_analyzers, program_from_identifier

FORMAT_VERSION = 1
_SEPARATORS = (",", ":")


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=_SEPARATORS)


@dataclass(frozen=True)
class BuildConfig:
    """Offline build knobs; everything here is covered by the config digest."""

    analyzers: Optional[tuple[str, ...]] = None  # None = default per descriptor
    overlap: bool = True
    store_overlap: bool = False
    top_multiple_cap: int = DEFAULT_TOP_MULTIPLE_CAP
    max_extent: Optional[int] = DEFAULT_MAX_EXTENT

    def resolved_analyzers(self, hw: HardwareDescriptor) -> tuple[str, ...]:
        if self.analyzers is None:
            return tuple(k.value for k in default_analyzers(hw))
        kinds = tuple(AnalyzerKind(k).value for k in self.analyzers)
        if len(kinds) != hw.depth:
            raise BankError(f"expected {hw.depth} analyzer kinds, got {len(kinds)}")
        return kinds

    def to_dict(self, hw: HardwareDescriptor) -> dict:
        return {
            "analyzers": list(self.resolved_analyzers(hw)),
            "overlap": self.overlap,
            "store_overlap": self.store_overlap,
            "top_multiple_cap": self.top_multiple_cap,
            "max_extent": self.max_extent,
            "utilization_window": [float(x) for x in hw.utilization_window],
        }

    def digest(self, hw: HardwareDescriptor) -> str:
        return hashlib.sha256(_canon(self.to_dict(hw)).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "BuildConfig":
        return cls(
            analyzers=tuple(d["analyzers"]),
            overlap=bool(d["overlap"]),
            store_overlap=bool(d["store_overlap"]),
            top_multiple_cap=int(d["top_multiple_cap"]),
            max_extent=None if d["max_extent"] is None else int(d["max_extent"]),
        )


@dataclass(frozen=True)
class KernelBank:
    hardware_name: str
    hardware_digest: str
    program: str
    config: BuildConfig
    levels: tuple  # per level: list[AnalyzedCandidate], sorted by tile
    maps: tuple  # per boundary L-1|L: list (by parent index) of child index lists
    version: int = FORMAT_VERSION
    _cache: dict = field(default_factory=dict, init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(list(row) for row in self.levels))
        object.__setattr__(
            self, "maps", tuple([list(c) for c in m] for m in self.maps)
        )

    @property
    def depth(self) -> int:
        return len(self.levels)

    def counts(self) -> list[int]:
        return [len(level) for level in self.levels]

    def link_counts(self) -> list[int]:
        return [sum(len(c) for c in m) for m in self.maps]

    def tiles(self, level: int) -> np.ndarray:
        key = ("tiles", level)
        if key not in self._cache:
            self._cache[key] = np.asarray(
                [a.candidate.tile for a in self.levels[level]], dtype=np.int64
            )
        return self._cache[key]

    def top_arrays(self):
        """(tiles, inner costs) of the top level, cached for fast selection."""
        key = "top"
        if key not in self._cache:
            top = self.levels[-1]
            inner = np.asarray([a.cost.inner_cost_cycles for a in top], dtype=np.int64)
            self._cache[key] = (self.tiles(self.depth - 1), inner)
        return self._cache[key]

    def chain(self, top_index: int) -> list[AnalyzedCandidate]:
        """Best chain under one top candidate, top to bottom."""
        out = [self.levels[-1][top_index]]
        for level in range(self.depth - 2, -1, -1):
            out.append(self.levels[level][out[-1].best_child])
        return out


def assemble_bank(prog, hw, config: BuildConfig, levels, maps) -> KernelBank:
    """Wrap raw candidate sets into an (unannotated) bank with index-based maps."""
    zero = CostEstimate(0, 0, 0, 0, 1, 0)
    rows = []
    for cands in levels:
        rows.append([AnalyzedCandidate(c, None, zero) for c in sorted(cands, key=lambda c: c.tile)])
    index_maps = []
    for boundary, cmap in enumerate(maps):
        lower = {a.candidate.tile: i for i, a in enumerate(rows[boundary])}
        upper = rows[boundary + 1]
        index_maps.append([sorted(lower[t] for t in cmap[a.candidate.tile]) for a in upper])
    return KernelBank(
        hardware_name=hw.name,
        hardware_digest=hw.digest(),
        program=prog.identifier,
        config=config,
        levels=tuple(rows),
        maps=tuple(index_maps),
    )


# ------------------------------------------------------------- serialization


def _body_lines(bank: KernelBank) -> list[str]:
    lines = []
    for level, row in enumerate(bank.levels):
        for i, a in enumerate(row):
            c = a.candidate
            lines.append(
                _canon(
                    {
                        "kind": "candidate",
                        "level": level,
                        "index": i,
                        "tile": list(c.tile),
                        "footprint_bytes": c.footprint_bytes,
                        "parallel_degree": c.parallel_degree,
                        "best_child": a.best_child,
                        "cost": a.cost.to_dict(),
                    }
                )
            )
    for boundary, m in enumerate(bank.maps):
        for parent, children in enumerate(m):
            lines.append(
                _canon(
                    {
                        "kind": "map",
                        "level": boundary + 1,
                        "parent": parent,
                        "children": list(children),
                    }
                )
            )
    return lines


def dumps_bank(bank: KernelBank, hw: HardwareDescriptor) -> str:
    body = _body_lines(bank)
    checksum = hashlib.sha256("\n".join(body).encode()).hexdigest()
    header = {
        "kind": "header",
        "version": bank.version,
        "hardware": bank.hardware_name,
        "hardware_digest": bank.hardware_digest,
        "program": bank.program,
        "config": bank.config.to_dict(hw),
        "config_digest": bank.config.digest(hw),
        "counts": bank.counts(),
        "checksum": checksum,
    }
    return "\n".join([_canon(header)] + body) + "\n"


def save_bank(bank: KernelBank, path, hw: HardwareDescriptor) -> None:
    try:
        Path(path).write_text(dumps_bank(bank, hw))
    except OSError as exc:
        raise BankError(f"cannot write bank {path}: {exc}") from exc


def _parse_lines(text: str) -> list[dict]:
    if not text.endswith("\n"):
        raise CorruptBankError("bank file is truncated")
    out = []
    for n, line in enumerate(text[:-1].split("\n"), 1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptBankError(f"line {n}: {exc}") from exc
        if not isinstance(obj, dict):
            raise CorruptBankError(f"line {n}: expected an object")
        out.append(obj)
    if not out or out[0].get("kind") != "header":
        raise CorruptBankError("missing header line")
    return out


def loads_bank(text: str, hw: HardwareDescriptor, prog: Optional[TensorProgramSpec] = None):
    """Parse, digest-check and revalidate a bank. Returns ``(bank, prog)``."""
    rows = _parse_lines(text)
    header = rows[0]
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise BankVersionError(f"bank format version {version!r}, expected {FORMAT_VERSION}")
    if header.get("hardware_digest") != hw.digest():
        raise DigestMismatchError(
            f"bank built for different hardware ({header.get('hardware')!r}, loaded with {hw.name!r})"
        )
    try:
        config = BuildConfig.from_dict(header["config"])
        if header["config_digest"] != config.digest(hw):
            raise DigestMismatchError("build config digest does not match its config")
        if prog is None:
            prog = program_from_identifier(header["program"], hw.depth)
        elif prog.identifier != header["program"]:
            raise DigestMismatchError(
                f"bank is for program {header['program']!r}, not {prog.identifier!r}"
            )
        body = [_canon(r) for r in rows[1:]]
        if hashlib.sha256("\n".join(body).encode()).hexdigest() != header["checksum"]:
            raise CorruptBankError("content checksum mismatch")
        bank = _rebuild(rows[1:], header, config, hw)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, BankError):
            raise
        raise CorruptBankError(f"malformed bank: {exc!r}") from exc
    validate_bank(bank, hw, prog)
    return bank, prog


def _rebuild(rows, header, config, hw) -> KernelBank:
    counts = header["counts"]
    levels = [[None] * n for n in counts]
    maps = [[None] * n for n in counts[1:]]
    for r in rows:
        if r["kind"] == "candidate":
            level, i = r["level"], r["index"]
            cand = MicroKernelCandidate(
                level_index=level,
                tile=tuple(int(x) for x in r["tile"]),
                footprint_bytes=int(r["footprint_bytes"]),
                parallel_degree=int(r["parallel_degree"]),
            )
            if levels[level][i] is not None:
                raise CorruptBankError(f"duplicate candidate {level}/{i}")
            levels[level][i] = AnalyzedCandidate(cand, r["best_child"], CostEstimate.from_dict(r["cost"]))
        elif r["kind"] == "map":
            level, parent = r["level"], r["parent"]
            if level < 1 or maps[level - 1][parent] is not None:
                raise CorruptBankError(f"bad map row {level}/{parent}")
            maps[level - 1][parent] = [int(x) for x in r["children"]]
        else:
            raise CorruptBankError(f"unknown row kind {r['kind']!r}")
    if any(a is None for row in levels for a in row) or any(m is None for mm in maps for m in mm):
        raise CorruptBankError("bank is missing rows")
    return KernelBank(
        hardware_name=header["hardware"],
        hardware_digest=header["hardware_digest"],
        program=header["program"],
        config=config,
        levels=tuple(levels),
        maps=tuple(maps),
        version=header["version"],
    )


def load_bank(path, hw: HardwareDescriptor, prog: Optional[TensorProgramSpec] = None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise BankError(f"cannot read bank {path}: {exc}") from exc
    return loads_bank(text, hw, prog)


# ---------------------------------------------------------------- validation


def validate_bank(bank: KernelBank, hw: HardwareDescriptor, prog: TensorProgramSpec) -> None:
    """Re-check every candidate-generation and cost invariant; raise on the first failure."""
    if bank.depth != hw.depth or len(bank.maps) != hw.depth - 1:
        raise CorruptBankError("level count does not match the hardware")
    for level, row in enumerate(bank.levels):
        if not row:
            raise CorruptBankError(f"level {level} is empty")
        tiles = [a.candidate.tile for a in row]
        if tiles != sorted(set(tiles)):
            raise CorruptBankError(f"level {level} candidates are not sorted and unique")
        spec = hw.levels[level]
        capped = _has_capacity_filter(spec, prog, hw)
        for a in row:
            c = a.candidate
            if c.level_index != level or len(c.tile) != len(prog.axes):
                raise CorruptBankError(f"level {level}: malformed candidate {c.tile}")
            if any(int(t) < 1 for t in c.tile):
                raise CorruptBankError(f"level {level}: non-positive extent in {c.tile}")
            fp = footprint_bytes(prog, hw, level, c.tile) if capped else 0
            if c.footprint_bytes != fp:
                raise CorruptBankError(f"level {level}: footprint of {c.tile} is wrong")
            if capped and fp > spec.memory_capacity_bytes:
                raise CorruptBankError(f"level {level}: {c.tile} exceeds capacity")
            pd = parallel_degree(prog, hw, level, c.tile)
            if c.parallel_degree != pd:
                raise CorruptBankError(f"level {level}: parallel degree of {c.tile} is wrong")
            if spec.max_parallel_binding is not None and pd > spec.max_parallel_binding:
                raise CorruptBankError(f"level {level}: {c.tile} exceeds the parallel cap")
            if level == 0:
                for i, axis in enumerate(prog.axis_names):
                    if c.tile[i] % prog.isa_multiple(hw, axis):
                        raise CorruptBankError(f"level 0: {c.tile} breaks instruction granularity")
    for boundary, m in enumerate(bank.maps):
        lower = bank.levels[boundary]
        upper = bank.levels[boundary + 1]
        if len(m) != len(upper):
            raise CorruptBankError(f"map {boundary + 1} has the wrong length")
        for parent, children in zip(upper, m):
            if not children or children != sorted(set(children)):
                raise CorruptBankError(f"map entry for {parent.candidate.tile} is empty or unsorted")
            for j in children:
                if not 0 <= j < len(lower):
                    raise CorruptBankError("map references a missing child")
                if any(p % q for p, q in zip(parent.candidate.tile, lower[j].candidate.tile)):
                    raise CorruptBankError(
                        f"map link {parent.candidate.tile} -> {lower[j].candidate.tile} is not exact"
                    )
        # every exact divisor must be listed: the map is the full sieve result
        ci, pj = kernels.divisible_pairs(bank.tiles(boundary + 1), bank.tiles(boundary))
        if len(ci) != sum(len(c) for c in m):
            raise CorruptBankError(f"map {boundary + 1} is incomplete")
    analyzers = bank.config.resolved_analyzers(hw)
    fresh = analyze_levels(
        prog,
        hw,
        [[a.candidate for a in row] for row in bank.levels],
        bank.maps,
        analyzers,
        bank.config.overlap,
        bank.config.store_overlap,
    )
    for level, (got, want) in enumerate(zip(bank.levels, fresh)):
        for a, b in zip(got, want):
            if a.best_child != b.best_child or a.cost != b.cost:
                raise CorruptBankError(
                    f"level {level}: cost annotation of {a.candidate.tile} does not recompute"
                )


def build(prog: TensorProgramSpec, hw: HardwareDescriptor, config: Optional[BuildConfig] = None):
    """Convenience wrapper around :func:`tileplan.candgen.build_bank`."""
    from .candgen import build_bank

    return build_bank(prog, hw, config)
