import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tileplan.cost import analytical_cost
from tileplan.errors import CapacityError, ParseError, PlanError
from tileplan.interp import (
    Tensor,
    dumps_tensor,
    execute_and_count,
    execute_plan,
    load_tensor,
    loads_tensor,
    naive_conv2d,
    naive_gemm,
    save_tensor,
)
from tileplan.runtime import select

from conftest import bank_for

RANK = {"PL": 0, "TSL": 1, "TRL": 2}


def _gemm_inputs(m, n, k, seed=0, dtype="int32"):
    rng = np.random.default_rng(seed)
    if dtype == "int32":
        a = rng.integers(-8, 8, (m, k))
        b = rng.integers(-8, 8, (k, n))
    else:
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
    return Tensor((m, k), dtype, a), Tensor((k, n), dtype, b)


def _conv_inputs(n, co, h, w, ci, kh=3, kw=3, seed=0):
    rng = np.random.default_rng(seed)
    x = Tensor((n, ci, h + kh - 1, w + kw - 1), "int32", rng.integers(-4, 4, (n, ci, h + kh - 1, w + kw - 1)))
    wt = Tensor((co, ci, kh, kw), "int32", rng.integers(-4, 4, (co, ci, kh, kw)))
    return x, wt


# ------------------------------------------------------------------ oracles


def test_naive_gemm_identity_and_scalar():
    a = Tensor.from_array(np.arange(12, dtype=np.int32).reshape(3, 4))
    eye = Tensor.from_array(np.eye(4, dtype=np.int32))
    assert naive_gemm(a, eye) == a
    one = naive_gemm(Tensor.from_array(np.array([[3]], np.int32)), Tensor.from_array(np.array([[4]], np.int32)))
    assert one.data[0, 0] == 12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(0, 1000))
def test_naive_gemm_matches_numpy(m, n, k, seed):
    a, b = _gemm_inputs(m, n, k, seed)
    ref = a.data.astype(np.int64) @ b.data.astype(np.int64)
    assert np.array_equal(naive_gemm(a, b).data, ref)


def test_naive_gemm_rejects_bad_shapes():
    a, b = _gemm_inputs(3, 4, 5)
    with pytest.raises(PlanError):
        naive_gemm(a, a)


def test_naive_gemm_overflow_detected():
    big = Tensor.from_array(np.full((1, 4), 1 << 30, np.int32))
    with pytest.raises(PlanError):
        naive_gemm(big, Tensor.from_array(np.full((4, 1), 4, np.int32)))


def test_naive_conv_identity_and_ones():
    x = Tensor.from_array(np.arange(2 * 3 * 5 * 5, dtype=np.int32).reshape(2, 3, 5, 5))
    w = Tensor.from_array(np.eye(3, dtype=np.int32).reshape(3, 3, 1, 1))
    assert naive_conv2d(x, w) == x
    ones = naive_conv2d(
        Tensor.from_array(np.ones((1, 4, 6, 6), np.int32)),
        Tensor.from_array(np.ones((2, 4, 3, 3), np.int32)),
    )
    assert ones.shape == (1, 2, 4, 4)
    assert np.all(ones.data == 3 * 3 * 4)


def test_naive_conv_strided():
    x = Tensor.from_array(np.ones((1, 1, 7, 7), np.int32))
    w = Tensor.from_array(np.ones((1, 1, 3, 3), np.int32))
    out = naive_conv2d(x, w, strides=(2, 2))
    assert out.shape == (1, 1, 3, 3)
    with pytest.raises(PlanError):
        naive_conv2d(x, w, strides=(0, 1))


# --------------------------------------------------------------- interpreter


@pytest.mark.parametrize("name", ["gpu-matrix", "gpu-vector", "cpu-like"])
def test_exact_top_tile_shape(name):
    hw, prog, bank = bank_for(name)
    tile = bank.levels[-1][0].candidate.tile
    shape = tuple(min(t, 64) for t in tile)
    plan = select(bank, shape, hw, prog)
    a, b = _gemm_inputs(*shape)
    assert execute_plan(plan, [a, b], hw, prog) == naive_gemm(a, b)


@pytest.mark.parametrize("name", ["gpu-matrix", "gpu-vector", "cpu-like"])
def test_padded_gemm_matches_oracle(name):
    hw, prog, bank = bank_for(name)
    plan = select(bank, (5, 8, 8), hw, prog)
    a, b = _gemm_inputs(5, 8, 8, seed=4)
    assert plan.padding_waste > 0
    assert execute_plan(plan, [a, b], hw, prog) == naive_gemm(a, b)
    assert execute_plan(plan, [a, b], hw, prog, poison_padding=True) == naive_gemm(a, b)


@pytest.mark.parametrize("name", ["gpu-matrix", "cpu-like"])
def test_conv_matches_oracle_with_poison(name):
    hw, prog, bank = bank_for(name, "conv2d")
    shape = (1, 5, 3, 6, 7, 3, 3)
    plan = select(bank, shape, hw, prog)
    x, w = _conv_inputs(*shape[:5])
    ref = naive_conv2d(x, w)
    assert execute_plan(plan, [x, w], hw, prog) == ref
    assert execute_plan(plan, [x, w], hw, prog, poison_padding=True) == ref


def test_float32_within_tolerance():
    hw, prog, bank = bank_for("gpu-matrix")
    plan = select(bank, (17, 33, 70), hw, prog)
    a, b = _gemm_inputs(17, 33, 70, seed=9, dtype="float32")
    got = execute_plan(plan, [a, b], hw, prog)
    ref = naive_gemm(a, b)
    assert got.dtype == "float32"
    assert np.allclose(got.data, ref.data, rtol=1e-4, atol=1e-4)


def test_trace_follows_loop_class_order():
    hw, prog, bank = bank_for("cpu-like")
    plan = select(bank, (3, 5, 6), hw, prog)
    a, b = _gemm_inputs(3, 5, 6)
    trace = []
    out = execute_plan(plan, [a, b], hw, prog, trace=trace)
    assert out == naive_gemm(a, b)
    iters = [e for e in trace if e[0] == "iter"]
    assert iters and iters[0][1] == hw.top
    for _, level, loops in iters:
        ranks = [RANK[c] for _, c, _ in loops]
        assert ranks == sorted(ranks)
    # every level-0 iteration is followed by its loads, then one compute
    for i, e in enumerate(trace):
        if e[0] == "iter" and e[1] == 0:
            nxt = trace[i + 1 : i + 1 + len(prog.layers[0].stages.load_action) + 1]
            assert [x[0] for x in nxt] == ["load"] * (len(nxt) - 1) + ["compute"]
    computes = sum(1 for e in trace if e[0] == "compute")
    assert computes == sum(1 for e in iters if e[1] == 0)


def test_capacity_violation_raises():
    hw, prog, bank = bank_for("gpu-matrix")
    plan = select(bank, (512, 512, 512), hw, prog)
    top = plan.chain[0]
    bad = dataclasses.replace(plan, chain=(top, top, plan.chain[-1]))
    a, b = _gemm_inputs(512, 512, 512)
    with pytest.raises(CapacityError):
        execute_plan(bad, [a, b], hw, prog)


def test_plan_input_mismatch():
    hw, prog, bank = bank_for("gpu-matrix")
    plan = select(bank, (8, 8, 8), hw, prog)
    a, b = _gemm_inputs(8, 8, 9)
    with pytest.raises(PlanError):
        execute_plan(plan, [a, b], hw, prog)
    with pytest.raises(PlanError):
        execute_plan(plan, [a], hw, prog)


@pytest.mark.parametrize("name", ["gpu-matrix", "gpu-vector", "cpu-like"])
@pytest.mark.parametrize("shape", [(5, 8, 8), (40, 24, 96), (96, 96, 96)])
def test_counted_cycles_match_analytical(name, shape):
    hw, prog, bank = bank_for(name)
    plan = select(bank, shape, hw, prog)
    a, b = _gemm_inputs(*shape)
    out, cycles = execute_and_count(plan, [a, b], hw, prog)
    assert out == execute_plan(plan, [a, b], hw, prog)
    assert cycles == analytical_cost(plan.chain, plan.shape, hw, prog).total_cycles
    _, overlapped = execute_and_count(plan, [a, b], hw, prog, overlap=True)
    assert overlapped <= cycles


def test_cycles_nondecreasing_with_shape():
    hw, prog, bank = bank_for("gpu-matrix")
    plan = select(bank, (64, 64, 64), hw, prog)
    last = 0
    for m in (8, 16, 32, 64):
        shape = (m, 64, 64)
        cyc = analytical_cost(plan.chain, shape, hw, prog).total_cycles
        assert cyc >= last
        last = cyc


# --------------------------------------------------------------- tensor I/O


@pytest.mark.parametrize("dtype", ["int32", "float32"])
def test_tensor_round_trip(tmp_path, dtype):
    a, _ = _gemm_inputs(3, 4, 5, dtype=dtype)
    assert loads_tensor(dumps_tensor(a)) == a
    save_tensor(a, tmp_path / "a.txt")
    assert load_tensor(tmp_path / "a.txt") == a


def test_tensor_parse_errors():
    for bad in ["", "int64 2\n1 2\n", "int32 2 2\n1 2 3\n", "int32 x\n1\n"]:
        with pytest.raises(ParseError):
            loads_tensor(bad)
