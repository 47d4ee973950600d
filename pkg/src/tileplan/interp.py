"""Reference interpreter for schedule plans, plus naive oracles.

The interpreter walks the plan's loop nest level by level: parallel loops
outermost, then temporal-spatial, then temporal-reduction. Each iteration
stages its operands into a fresh level buffer, recurses, and stores. Level 0
runs through :mod:`tileplan.kernels`. Padding is realised by copying the
inputs into zero-filled staging tensors sized by the padded shape.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .cost import Fragment, micro_kernel_fragment, parallel_factor, simulate, stage_cycles
from .errors import CapacityError, ParseError, PlanError
from .hwmodel import HardwareDescriptor
from .program import LoopClass, TensorProgramSpec
from .runtime import SchedulePlan, validate_plan

DTYPES = {"int32": np.int32, "float32": np.float32}
INT_SENTINEL = 1 << 20
FLOAT_SENTINEL = 1.0e30


@dataclass
class Tensor:
    shape: tuple
    dtype: str  # "int32" | "float32"
    data: np.ndarray

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ParseError(f"unsupported element type {self.dtype!r}")
        self.shape = tuple(int(x) for x in self.shape)
        self.data = np.asarray(self.data, dtype=DTYPES[self.dtype]).reshape(self.shape)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor":
        arr = np.asarray(arr)
        dtype = "float32" if np.issubdtype(arr.dtype, np.floating) else "int32"
        return cls(arr.shape, dtype, arr)

    def __eq__(self, other):
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and self.dtype == other.dtype
            and np.array_equal(self.data, other.data)
        )


def dumps_tensor(t: Tensor) -> str:
    """Shape header line then one line of row-major values."""
    head = f"{t.dtype} " + " ".join(str(s) for s in t.shape)
    if t.dtype == "float32":
        body = " ".join(repr(float(x)) for x in t.data.ravel())
    else:
        body = " ".join(str(int(x)) for x in t.data.ravel())
    return head + "\n" + body + "\n"


def loads_tensor(text: str) -> Tensor:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty tensor file")
    head = lines[0].split()
    if not head or head[0] not in DTYPES:
        raise ParseError(f"bad tensor header {lines[0]!r}")
    try:
        shape = tuple(int(x) for x in head[1:])
        values = " ".join(lines[1:]).split()
        data = np.asarray([float(v) if head[0] == "float32" else int(v) for v in values])
    except ValueError as exc:
        raise ParseError(f"bad tensor data: {exc}") from exc
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ParseError(f"tensor holds {data.size} values, shape {shape} needs {np.prod(shape)}")
    return Tensor(shape, head[0], data)


def save_tensor(t: Tensor, path) -> None:
    Path(path).write_text(dumps_tensor(t))


def load_tensor(path) -> Tensor:
    try:
        return loads_tensor(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read tensor {path}: {exc}") from exc


# ------------------------------------------------------------------- oracles


@kernels._njit
def _gemm_loops(a, b, c):
    m, k = a.shape
    n = b.shape[1]
    for i in range(m):
        for j in range(n):
            acc = c[i, j]
            for p in range(k):
                acc += a[i, p] * b[p, j]
            c[i, j] = acc


@kernels._njit
def _conv_loops(x, w, out, sh, sw):
    nb, co, ho, wo = out.shape
    ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for b in range(nb):
        for o in range(co):
            for y in range(ho):
                for z in range(wo):
                    acc = out[b, o, y, z]
                    for c in range(ci):
                        for r in range(kh):
                            for s in range(kw):
                                acc += x[b, c, y * sh + r, z * sw + s] * w[o, c, r, s]
                    out[b, o, y, z] = acc


def _acc_dtype(dtype: str):
    return np.int64 if dtype == "int32" else np.float64


def _finish(acc: np.ndarray, dtype: str) -> Tensor:
    if dtype == "int32":
        info = np.iinfo(np.int32)
        if acc.size and (acc.min() < info.min or acc.max() > info.max):
            raise PlanError("integer result overflows int32")
    return Tensor(acc.shape, dtype, acc.astype(DTYPES[dtype]))


def naive_gemm(a: Tensor, b: Tensor) -> Tensor:
    """Triple-loop reference product, accumulated in 64 bits."""
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise PlanError(f"gemm shape mismatch: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise PlanError("gemm operands must share an element type")
    acc_t = _acc_dtype(a.dtype)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=acc_t)
    if kernels.HAVE_NUMBA:
        _gemm_loops(a.data.astype(acc_t), b.data.astype(acc_t), out)
    else:
        out += np.einsum("ik,kj->ij", a.data.astype(acc_t), b.data.astype(acc_t))
    return _finish(out, a.dtype)


def naive_conv2d(x: Tensor, w: Tensor, strides: Sequence[int] = (1, 1)) -> Tensor:
    """Direct 7-loop convolution, no input padding.

    ``x`` is (n, ci, H, W) and ``w`` is (co, ci, kh, kw).
    """
    if len(x.shape) != 4 or len(w.shape) != 4 or x.shape[1] != w.shape[1]:
        raise PlanError(f"conv shape mismatch: {x.shape} * {w.shape}")
    if x.dtype != w.dtype:
        raise PlanError("conv operands must share an element type")
    sh, sw = (int(s) for s in strides)
    if sh < 1 or sw < 1:
        raise PlanError("strides must be >= 1")
    n, _, hh, ww = x.shape
    co, _, kh, kw = w.shape
    if hh < kh or ww < kw:
        raise PlanError("the filter window does not fit the input")
    ho = (hh - kh) // sh + 1
    wo = (ww - kw) // sw + 1
    acc_t = _acc_dtype(x.dtype)
    out = np.zeros((n, co, ho, wo), dtype=acc_t)
    xd = x.data.astype(acc_t)
    wd = w.data.astype(acc_t)
    if kernels.HAVE_NUMBA:
        _conv_loops(xd, wd, out, sh, sw)
    else:
        for r in range(kh):
            for s in range(kw):
                patch = xd[:, :, r : r + (ho - 1) * sh + 1 : sh, s : s + (wo - 1) * sw + 1 : sw]
                out += np.einsum("bchw,oc->bohw", patch, wd[:, :, r, s])
    return _finish(out, x.dtype)


# --------------------------------------------------------------- interpreter


def operand_box(prog: TensorProgramSpec, op: str, origin: dict, extent: dict):
    """Per-dimension (start, stop) of ``op``'s data touched by an iteration box."""
    def span(a):
        return (origin[a], origin[a] + extent[a])

    if prog.operator_kind == "GEMM":
        dims = {"A": ("m", "k"), "B": ("k", "n"), "C": ("m", "n")}[op]
        return tuple(span(a) for a in dims)
    if op == "I":
        h0 = origin["h"] + origin["kh"]
        w0 = origin["w"] + origin["kw"]
        return (
            span("n"),
            span("ci"),
            (h0, h0 + extent["h"] + extent["kh"] - 1),
            (w0, w0 + extent["w"] + extent["kw"] - 1),
        )
    dims = {"W": ("co", "ci", "kh", "kw"), "O": ("n", "co", "h", "w")}[op]
    return tuple(span(a) for a in dims)


@dataclass
class _Buffer:
    data: np.ndarray
    start: tuple  # global coordinates of data[0, ...]

    def view(self, box):
        idx = tuple(slice(lo - s, hi - s) for (lo, hi), s in zip(box, self.start))
        return self.data[idx]


class _Run:
    def __init__(self, plan, hw, prog, trace, tiles):
        self.plan = plan
        self.hw = hw
        self.prog = prog
        self.trace = trace
        self.tiles = tiles  # bottom-up
        self.serial = [0] * hw.depth
        self.parallel = [0] * hw.depth
        self.output = None  # padded output staging

    def loop_order(self, level: int):
        classes = self.prog.layers[level].loop_class_map
        order = []
        for cls in (LoopClass.PL, LoopClass.TSL, LoopClass.TRL):
            order += [(a, cls) for a in self.prog.axis_names if LoopClass(classes[a]) == cls]
        return order

    def check_capacity(self, level: int, elements: int):
        if level == self.hw.top:
            return
        size = elements * self.hw.element_size_bytes
        cap = self.hw.levels[level].memory_capacity_bytes
        if size > cap:
            raise CapacityError(f"level {level} buffers need {size} B, capacity is {cap} B")

    def run(self, level: int, origin: dict, extent: dict, bufs: dict):
        """Execute level ``level``'s loops over the box (origin, extent)."""
        tile = dict(zip(self.prog.axis_names, self.tiles[level]))
        if level == 0 and self.trace is None:
            self.level0(origin, extent, bufs)
            return
        order = self.loop_order(level)
        ranges = [range(0, extent[a] // tile[a]) for a, _ in order]
        stages = self.prog.layers[level].stages
        self.check_capacity(
            level, int(self.prog.level_footprint_elements(level, tile))
        )
        par_axes = [a for a, c in order if c == LoopClass.PL]
        seen_par = set()
        for idx in itertools.product(*ranges):
            point = dict(zip((a for a, _ in order), idx))
            seen_par.add(tuple(point[a] for a in par_axes))
            self.serial[level] += 1
            if self.trace is not None:
                self.trace.append(("iter", level, tuple((a, c.value, point[a]) for a, c in order)))
            sub = {a: origin[a] + point[a] * tile[a] for a in self.prog.axis_names}
            child = dict(bufs)
            for op in stages.load_action:
                box = operand_box(self.prog, op, sub, tile)
                src = bufs[op].view(box)
                child[op] = _Buffer(src.copy(), tuple(lo for lo, _ in box))
                if self.trace is not None:
                    self.trace.append(("load", level, op))
            if level == 0:
                self.compute0(sub, tile, child)
            else:
                self.run(level - 1, sub, tile, child)
            for op in stages.store_action:
                if self.trace is not None:
                    self.trace.append(("store", level, op))
        self.parallel[level] = max(self.parallel[level], len(seen_par))

    def level0(self, origin, extent, bufs):
        """Level-0 nest over one level-1 box, through the compiled kernel."""
        t = self.tiles[0]
        self.serial[0] += int(np.prod([extent[a] // v for a, v in zip(self.prog.axis_names, t)]))
        self.parallel[0] = max(self.parallel[0], 1)
        self.check_capacity(0, int(self.prog.level_footprint_elements(0, dict(zip(self.prog.axis_names, t)))))
        if self.prog.operator_kind == "GEMM":
            a = bufs["A"].view(operand_box(self.prog, "A", origin, extent))
            b = bufs["B"].view(operand_box(self.prog, "B", origin, extent))
            c = self.output.view(operand_box(self.prog, "C", origin, extent))
            kernels.gemm_level0(a, b, c, *t)
        else:
            i = bufs["I"].view(operand_box(self.prog, "I", origin, extent))
            w = bufs["W"].view(operand_box(self.prog, "W", origin, extent))
            o = self.output.view(operand_box(self.prog, "O", origin, extent))
            kernels.conv_level0(i, w, o, t)

    def compute0(self, origin, tile, bufs):
        """One base-instruction chunk, used on the traced path only."""
        self.trace.append(("compute", 0))
        if self.prog.operator_kind == "GEMM":
            a = bufs["A"].data
            b = bufs["B"].data
            c = self.output.view(operand_box(self.prog, "C", origin, tile))
            c += a @ b
        else:
            i = bufs["I"].data
            w = bufs["W"].data
            o = self.output.view(operand_box(self.prog, "O", origin, tile))
            for r in range(tile["kh"]):
                for s in range(tile["kw"]):
                    patch = i[:, :, r : r + tile["h"], s : s + tile["w"]]
                    o += np.einsum("bcyx,oc->boyx", patch, w[:, :, r, s])


def _stage_inputs(plan, prog, inputs, poison: bool):
    """Padded staging copies of the inputs and a zeroed padded output."""
    shape = dict(zip(prog.axis_names, plan.shape))
    padded = dict(zip(prog.axis_names, plan.padded_shape))
    dtype = inputs[0].dtype
    acc_t = np.int64 if dtype == "int32" else np.float32
    sentinel = INT_SENTINEL if dtype == "int32" else FLOAT_SENTINEL
    zero = {a: 0 for a in prog.axis_names}
    staged = {}
    names = [o.name for o in prog.operands if not o.is_output]
    for name, t in zip(names, inputs):
        box = operand_box(prog, name, zero, padded)
        true_box = operand_box(prog, name, zero, shape)
        want = tuple(hi - lo for lo, hi in true_box)
        if t.shape != want:
            raise PlanError(f"input {name} has shape {t.shape}, plan needs {want}")
        if t.dtype != dtype:
            raise PlanError("inputs must share an element type")
        data = np.zeros(tuple(hi - lo for lo, hi in box), dtype=acc_t)
        if poison:
            data[...] = sentinel
            # reduction pads of the second operand stay zero: they mask the
            # poisoned reduction pads of the first
            mask = _reduction_mask(prog, name, shape)
            if mask is not None:
                data[mask] = 0
        data[tuple(slice(0, s) for s in want)] = t.data
        staged[name] = _Buffer(data, tuple(0 for _ in box))
    out_name = [o.name for o in prog.operands if o.is_output][0]
    out_box = operand_box(prog, out_name, zero, padded)
    output = _Buffer(np.zeros(tuple(hi - lo for lo, hi in out_box), dtype=acc_t), (0,) * len(out_box))
    true_out = tuple(hi - lo for lo, hi in operand_box(prog, out_name, zero, shape))
    return staged, output, true_out, dtype


def _reduction_mask(prog, name, shape):
    if prog.operator_kind == "GEMM" and name == "B":
        return (slice(shape["k"], None), slice(None))
    if prog.operator_kind == "CONV2D" and name == "W":
        return (slice(None), slice(shape["ci"], None), slice(None), slice(None))
    return None


def _execute(plan, inputs, hw, prog, poison=False, trace=None):
    validate_plan(plan, hw, prog)
    if len(inputs) != sum(1 for o in prog.operands if not o.is_output):
        raise PlanError("wrong number of input tensors")
    staged, output, true_out, dtype = _stage_inputs(plan, prog, list(inputs), poison)
    run = _Run(plan, hw, prog, trace, [tuple(t) for t in reversed(plan.chain)])
    run.output = output
    origin = {a: 0 for a in prog.axis_names}
    run.run(hw.top, origin, dict(zip(prog.axis_names, plan.padded_shape)), staged)
    result = output.data[tuple(slice(0, s) for s in true_out)]
    if dtype == "float32":
        return Tensor(result.shape, dtype, result), run
    return _finish(result, dtype), run


def execute_plan(
    plan: SchedulePlan,
    inputs: Sequence[Tensor],
    hw: HardwareDescriptor,
    prog: TensorProgramSpec,
    poison_padding: bool = False,
    trace: Optional[list] = None,
) -> Tensor:
    """Run ``plan`` on ``inputs`` and return the unpadded output tensor.

    ``poison_padding`` fills pad regions with large sentinels instead of
    zeros (reduction pads of the second operand stay zero as a mask), so any
    leak into the true output shows up as a mismatch. ``trace`` collects
    loop, load, compute and store events; it forces a slow pure-Python
    level 0 and is meant for small probe plans.
    """
    out, _ = _execute(plan, inputs, hw, prog, poison_padding, trace)
    return out


def count_cycles(plan: SchedulePlan, hw, prog, serial, parallel, overlap: bool = False) -> int:
    """Simulated cycles for ``plan`` given per-level iteration counts.

    ``serial[L]`` is the total number of level-L iterations executed and
    ``parallel[L]`` the width of the level's parallel loops; the per-chunk
    serial trip count is their ratio to the enclosing iteration count.
    """
    tiles = [tuple(t) for t in reversed(plan.chain)]
    lo0, st0 = stage_cycles(prog, hw, 0, tiles[0])
    inner = simulate(micro_kernel_fragment(prog, hw, tiles[0]), hw, overlap=overlap) - lo0 - st0
    for level in range(hw.depth):
        enclosing = serial[level + 1] if level + 1 < hw.depth else 1
        trips = serial[level] // enclosing
        par = max(parallel[level], 1)
        lo, st = stage_cycles(prog, hw, level, tiles[level])
        per_unit = trips // par
        frag = Fragment.uniform(per_unit, lo, inner, st)
        inner = parallel_factor(par, hw.levels[level].unit_count) * simulate(frag, hw, overlap=True)
    return inner


def execute_and_count(
    plan: SchedulePlan,
    inputs: Sequence[Tensor],
    hw: HardwareDescriptor,
    prog: TensorProgramSpec,
    overlap: bool = False,
    poison_padding: bool = False,
):
    """Like :func:`execute_plan`, also returning simulated cycles for the whole plan.

    With ``overlap`` off the level-0 micro-kernel runs without intra-kernel
    overlap, so the count matches the analytical prediction of the chain.
    """
    out, run = _execute(plan, inputs, hw, prog, poison_padding)
    return out, count_cycles(plan, hw, prog, run.serial, run.parallel, overlap)
