import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tileplan.bank import BuildConfig
from tileplan.candgen import MicroKernelCandidate, build_bank
from tileplan.cost import (
    EMPIRICAL,
    Fragment,
    analytical_breakdown,
    analytical_cost,
    compute_cycles,
    empirical_cost,
    micro_kernel_fragment,
    parallel_factor,
    simulate,
    stage_cycles,
    t_load,
    t_store,
    temporal_cost,
)
from tileplan.errors import ChainError
from tileplan.hwmodel import HardwareDescriptor, IsaGranularity, LevelSpec, preset
from tileplan.program import gemm_program

import oracles
from conftest import bank_for


def test_transfer_times():
    level = LevelSpec(0, 1, 1024, 64, 32)
    assert t_load(level, 1024) == 16
    assert t_load(level, 0) == 0
    assert t_load(level, 100) == 2
    assert t_store(level, 100) == 4
    with pytest.raises(ValueError):
        t_load(level, -1)


def test_temporal_cost_examples():
    assert temporal_cost(10, 4, 8, 5) == 53
    assert temporal_cost(10, 1, 8, 5) == 23
    assert temporal_cost(4, 3, 9, 2) == 33
    with pytest.raises(ValueError):
        temporal_cost(1, 0, 1, 1)


def test_parallel_factor_examples():
    assert parallel_factor(216, 108) == 2
    assert parallel_factor(1, 108) == 1
    assert parallel_factor(109, 108) == 2
    for k in range(1, 9):
        assert parallel_factor(k * 108, 108) == k
        assert parallel_factor(k * 108 + 1, 108) == k + 1


@settings(max_examples=1000, deadline=None)
@given(
    st.integers(0, 10**6),
    st.integers(0, 10**6),
    st.integers(0, 10**6),
    st.integers(1, 500),
    st.integers(1, 5000),
    st.integers(1, 256),
    st.sampled_from(["load", "store", "inner", "trip", "par"]),
    st.integers(1, 1000),
)
def test_total_monotone(lo, so, inner, trip, par, units, which, bump):
    def total(lo, so, inner, trip, par):
        return parallel_factor(par, units) * temporal_cost(lo, trip, inner, so)

    args = dict(lo=lo, so=so, inner=inner, trip=trip, par=par)
    base = total(**args)
    key = {"load": "lo", "store": "so", "inner": "inner", "trip": "trip", "par": "par"}[which]
    args[key] += bump
    assert total(**args) >= base


def _two_level_machine():
    return HardwareDescriptor(
        name="toy2",
        levels=(LevelSpec(0, 2, 4096, 16, 8), LevelSpec(1, 3, 1 << 30, 4, 4)),
        isa=IsaGranularity({"m": 2, "n": 2, "k": 2}, 8),
        element_size_bytes=4,
    )


def test_two_level_hand_chain():
    hw = _two_level_machine()
    prog = gemm_program(2)
    # level 0 tile (4, 4, 2): load (8 + 8) * 4 / 16 = 4, store 16 * 4 / 8 = 8,
    # base 2*4*4*2 / 8 = 8; inside the top tile (8, 4, 6) it runs 2*1*3 = 6 trips:
    # 4 + 5*8 + 8 + 8 = 60. Top over the padded shape (9, 4, 6) -> (16, 4, 6):
    # 2 parallel tiles on 3 units -> F = 1, k trips 1, total 60.
    est = analytical_cost([(8, 4, 6), (4, 4, 2)], (9, 4, 6), hw, prog)
    assert est.total_cycles == 60
    # 7 parallel tiles on 3 units -> F = 3
    assert analytical_cost([(8, 4, 6), (4, 4, 2)], (49, 4, 6), hw, prog).total_cycles == 180


def test_degenerate_chain_collapses_to_base():
    hw = dataclasses.replace(
        _two_level_machine(),
        levels=(LevelSpec(0, 1, 4096, 1 << 20, 1 << 20), LevelSpec(1, 1, 1 << 30, 4, 4)),
    )
    prog = gemm_program(2)
    est = analytical_cost([(2, 2, 2), (2, 2, 2)], (2, 2, 2), hw, prog)
    lo, st = stage_cycles(prog, hw, 0, (2, 2, 2))
    assert (lo, st) == (1, 1)
    assert est.total_cycles == lo + compute_cycles(prog, hw, (2, 2, 2)) + st


def test_parallel_step_doubles():
    hw = _two_level_machine()
    prog = gemm_program(2)
    chain = [(8, 4, 6), (4, 4, 2)]
    one = analytical_cost(chain, (8 * 3, 4, 6), hw, prog)
    two = analytical_cost(chain, (8 * 6, 4, 6), hw, prog)
    assert one.f_parallel == 1 and two.f_parallel == 2
    assert two.total_cycles == 2 * one.total_cycles


def test_inconsistent_chain():
    hw = _two_level_machine()
    with pytest.raises(ChainError):
        analytical_cost([(8, 4, 6), (4, 4, 4)], None, hw, gemm_program(2))
    with pytest.raises(ChainError):
        analytical_cost([(8, 4, 6)], None, hw, gemm_program(2))


@st.composite
def three_level_cases(draw):
    levels = []
    for i in range(3):
        levels.append(
            LevelSpec(
                i,
                draw(st.integers(1, 128)),
                1 << 40,
                draw(st.integers(1, 128)),
                draw(st.integers(1, 128)),
            )
        )
    hw = HardwareDescriptor(
        "rand3",
        tuple(levels),
        IsaGranularity({"m": 1, "n": 1, "k": 1}, draw(st.integers(1, 1024))),
        draw(st.sampled_from([1, 2, 4])),
    )
    t0 = tuple(draw(st.sampled_from([1, 2, 4, 8])) for _ in range(3))
    t1 = tuple(x * draw(st.integers(1, 4)) for x in t0)
    t2 = tuple(x * draw(st.integers(1, 4)) for x in t1)
    shape = tuple(draw(st.integers(1, 300)) for _ in range(3))
    return hw, t0, t1, t2, shape


@settings(max_examples=100, deadline=None)
@given(three_level_cases())
def test_oracle_equivalence(case):
    hw, t0, t1, t2, shape = case
    levels = [
        {"units": lv.unit_count, "ld": lv.load_bandwidth_bytes_per_cycle, "st": lv.store_bandwidth_bytes_per_cycle}
        for lv in hw.levels
    ]
    want = oracles.gemm3_cost(levels, hw.element_size_bytes, hw.isa.throughput_ops_per_cycle, t0, t1, t2, shape)
    got = analytical_cost([t2, t1, t0], shape, hw, gemm_program(3))
    assert got.total_cycles == want


def test_estimate_invariants(gemm_bank):
    hw, prog, bank = gemm_bank
    for i in range(0, len(bank.levels[-1]), 11):
        chain = [a.candidate.tile for a in bank.chain(i)]
        for est in analytical_breakdown(chain, (1000, 700, 300), hw, prog):
            assert est.total_cycles == est.f_parallel * est.temporal_cycles
            assert est.temporal_cycles >= est.t_load_cycles + est.inner_cost_cycles + est.t_store_cycles


# ----------------------------------------------------------------- simulator


def test_simulator_examples():
    assert simulate(Fragment.uniform(1, 16, 20, 4), overlap=False) == 40
    assert simulate(Fragment.uniform(1, 16, 20, 4), overlap=True) == 40
    assert simulate(Fragment.uniform(4, 10, 8, 5), overlap=True) == 10 + 3 * 10 + 8 + 5


@st.composite
def fragments(draw):
    groups = draw(st.integers(1, 6))
    size = draw(st.integers(1, 8))
    n = groups * size
    loads = draw(st.lists(st.integers(0, 50), min_size=n, max_size=n))
    comps = draw(st.lists(st.integers(0, 50), min_size=n, max_size=n))
    stores = draw(st.lists(st.integers(0, 50), min_size=groups, max_size=groups))
    return Fragment(tuple(loads), tuple(comps), tuple(stores), size)


@settings(max_examples=100, deadline=None)
@given(fragments(), st.booleans())
def test_overlap_never_slower(frag, store_overlap):
    off = simulate(frag, overlap=False)
    assert off == oracles.sequential_cycles(frag.loads, frag.computes, frag.stores)
    on = simulate(frag, overlap=True, store_overlap=store_overlap)
    assert on <= off
    assert on >= max(sum(frag.loads), sum(frag.computes))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 100), st.integers(0, 100), st.integers(0, 100))
def test_uniform_pipeline_matches_closed_form(n, lo, co, so):
    assert simulate(Fragment.uniform(n, lo, co, so)) == oracles.pipeline_cycles(lo, co, so, n)


def test_fragment_validation():
    with pytest.raises(ValueError):
        Fragment((1, 2), (1,), (1,), 2)
    with pytest.raises(ValueError):
        Fragment((1, 2, 3), (1, 2, 3), (1,), 2)


def test_simulator_numba_and_numpy_agree():
    from tileplan import kernels

    rng = np.random.default_rng(3)
    for _ in range(50):
        g = int(rng.integers(1, 5))
        n = g * int(rng.integers(1, 7))
        lo, co, so = rng.integers(0, 30, n), rng.integers(0, 30, n), rng.integers(0, 30, g)
        for flag in (False, True):
            assert kernels.simulate(lo, co, so, n // g, flag) == kernels.simulate_numpy(lo, co, so, n // g, flag)


# ----------------------------------------------------------------- empirical


@pytest.mark.parametrize("name", ["gpu-matrix", "cpu-like", "gpu-vector"])
def test_empirical_level0_without_overlap_is_analytical(name):
    hw = preset(name)
    prog = gemm_program(3)
    _, _, bank = bank_for(name)
    for a in bank.levels[0]:
        c = a.candidate
        off = empirical_cost(c, (), hw, prog, overlap=False)
        lo, st = stage_cycles(prog, hw, 0, c.tile)
        assert off.total_cycles == lo + compute_cycles(prog, hw, c.tile) + st
        on = empirical_cost(c, (), hw, prog, overlap=True)
        assert on.total_cycles <= off.total_cycles
        assert on.source == EMPIRICAL
        assert empirical_cost(c, (), hw, prog, overlap=True) == on


def test_empirical_level1_closed_form(gemm_bank):
    hw, prog, bank = gemm_bank
    for a in bank.levels[1][::13]:
        child = bank.levels[0][a.best_child]
        emp = empirical_cost(a.candidate, [child.candidate], hw, prog, child_inner=child.cost.inner_cost_cycles)
        assert emp.inner_cost_cycles == a.cost.inner_cost_cycles


def test_micro_kernel_fragment_totals():
    hw = preset("gpu-matrix")
    prog = gemm_program(3)
    frag = micro_kernel_fragment(prog, hw, (32, 16, 48))
    lo, st = stage_cycles(prog, hw, 0, (32, 16, 48))
    assert int(np.sum(frag.loads)) == lo
    assert int(np.sum(frag.stores)) == st
    assert int(np.sum(frag.computes)) == compute_cycles(prog, hw, (32, 16, 48))
    assert frag.group_size == 3 and len(frag.stores) == 4


# ---------------------------------------------------------------- bank pass


def test_best_child_is_argmin(any_bank):
    hw, prog, bank = any_bank
    for level in range(1, hw.depth):
        lower = bank.levels[level - 1]
        for a, children in zip(bank.levels[level], bank.maps[level - 1]):
            assert a.best_child in children
            costs = []
            for j in children:
                chain = [a.candidate.tile, lower[j].candidate.tile]
                serial = par = 1
                for i, name in enumerate(prog.axis_names):
                    q = chain[0][i] // chain[1][i]
                    if prog.layers[level - 1].loop_class_map[name].value == "PL":
                        par *= q
                    else:
                        serial *= q
                lo, st = stage_cycles(prog, hw, level - 1, chain[1])
                f = oracles.cdiv(par, hw.levels[level - 1].unit_count)
                costs.append((f * oracles.pipeline(lo, serial, lower[j].cost.inner_cost_cycles, st), lower[j].candidate.tile, j))
            best = min(costs)
            assert a.cost.inner_cost_cycles == best[0]
            assert a.best_child == best[2]


def test_compositional_identity(any_bank):
    """Hybrid totals equal the closed form with the measured base case substituted."""
    hw, prog, bank = any_bank
    for level in range(hw.depth):
        for i in range(0, len(bank.levels[level]), 5):
            chain = [bank.levels[level][i]]
            for lv in range(level, 0, -1):
                chain.append(bank.levels[lv - 1][chain[-1].best_child])
            tiles = [a.candidate.tile for a in chain][::-1]  # bottom up
            inner = chain[-1].cost.inner_cost_cycles
            for lv in range(1, level + 1):
                serial = par = 1
                for ax, name in enumerate(prog.axis_names):
                    q = tiles[lv][ax] // tiles[lv - 1][ax]
                    if prog.layers[lv - 1].loop_class_map[name].value == "PL":
                        par *= q
                    else:
                        serial *= q
                lo, st = stage_cycles(prog, hw, lv - 1, tiles[lv - 1])
                inner = oracles.cdiv(par, hw.levels[lv - 1].unit_count) * oracles.pipeline(lo, serial, inner, st)
            lo, st = stage_cycles(prog, hw, level, tiles[level])
            assert bank.levels[level][i].cost.total_cycles == lo + inner + st
            if level == hw.top:
                full = analytical_cost(tiles[::-1], None, hw, prog, level0_inner=chain[-1].cost.inner_cost_cycles)
                assert full.total_cycles == bank.levels[level][i].cost.total_cycles


def test_analytic_only_config_same_structure():
    hw = preset("cpu-like")
    prog = gemm_program(3)
    hybrid = build_bank(prog, hw)
    analytic = build_bank(prog, hw, BuildConfig(analyzers=("analytical",) * 3))
    assert [[a.candidate for a in r] for r in hybrid.levels] == [[a.candidate for a in r] for r in analytic.levels]
    assert hybrid.maps == analytic.maps
    for a in analytic.levels[0]:
        lo, st = stage_cycles(prog, hw, 0, a.candidate.tile)
        assert a.cost.inner_cost_cycles == compute_cycles(prog, hw, a.candidate.tile)
        assert a.cost.source == "analytical"


def test_single_chain_bank():
    hw = preset("cpu-like")
    prog = gemm_program(3)
    lvl0 = [MicroKernelCandidate(0, (4, 16, 4), 0, 1)]
    lvl1 = [MicroKernelCandidate(1, (8, 32, 8), 0, 1)]
    lvl2 = [MicroKernelCandidate(2, (16, 64, 16), 0, 1)]
    from tileplan.bank import assemble_bank
    from tileplan.cost import analyze_bank

    maps = [{(8, 32, 8): [(4, 16, 4)]}, {(16, 64, 16): [(8, 32, 8)]}]
    bank = analyze_bank(assemble_bank(prog, hw, BuildConfig(), [lvl0, lvl1, lvl2], maps), hw, prog)
    assert bank.levels[1][0].best_child == 0 and bank.levels[2][0].best_child == 0
