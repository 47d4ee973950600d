import dataclasses

import numpy as np
import pytest

from tileplan.bank import BuildConfig, KernelBank, dumps_bank
from tileplan.candgen import MicroKernelCandidate, build_bank
from tileplan.cost import AnalyzedCandidate, CostEstimate, analytical_cost
from tileplan.errors import EmptyCandidateSetError, PlanError
from tileplan.hwmodel import HardwareDescriptor, IsaGranularity, LevelSpec, preset
from tileplan.program import conv2d_program, gemm_program
from tileplan.runtime import (
    RuntimeShape,
    dumps_plan,
    load_plan,
    plan_cost_breakdown,
    save_plan,
    select,
    select_adaptive,
    top_level_costs,
    validate_plan,
)

from conftest import bank_for


def _toy():
    hw = HardwareDescriptor(
        "toy",
        (LevelSpec(0, 1, 1 << 20, 64, 64), LevelSpec(1, 1, 1 << 20, 64, 64), LevelSpec(2, 1, 1 << 40, 8, 8)),
        IsaGranularity({"m": 1, "n": 1, "k": 1}, 1),
        4,
    )
    prog = gemm_program(3)

    def row(level, tile, inner):
        est = CostEstimate(0, 0, inner, inner, 1, inner)
        return AnalyzedCandidate(MicroKernelCandidate(level, tile, 0, 1), 0 if level else None, est)

    levels = ([row(0, (4, 1, 1), 10)], [row(1, (4, 1, 1), 10)], [row(2, (4, 1, 1), 10), row(2, (8, 1, 1), 20)])
    bank = KernelBank("toy", hw.digest(), prog.identifier, BuildConfig(), levels, ([[0]], [[0], [0]]))
    return hw, prog, bank


def test_toy_tie_goes_to_smaller_tile():
    hw, prog, bank = _toy()
    costs = top_level_costs(bank, (5, 1, 1), hw, prog)
    assert costs.tolist() == [20, 20]
    plan = select(bank, (5, 1, 1), hw, prog)
    assert plan.chain[0] == (4, 1, 1)
    assert plan.padded_shape == (8, 1, 1)
    assert plan.padding_waste == pytest.approx(3 / 8)


def test_toy_waste_breaks_cost_ties():
    hw, prog, bank = _toy()
    # M = 4: tile 4 has no waste, tile 8 wastes half; both cost 10 vs 20
    plan = select(bank, (4, 1, 1), hw, prog)
    assert plan.chain[0] == (4, 1, 1) and plan.padding_waste == 0.0


def test_exact_tile_shape_has_no_waste(gemm_bank):
    hw, prog, bank = gemm_bank
    zero = 0
    for a in bank.levels[-1]:
        shape = a.candidate.tile
        plan = select(bank, shape, hw, prog)
        if all(s % t == 0 for s, t in zip(shape, plan.chain[0])):
            assert plan.padding_waste == 0.0
            assert plan.padded_shape == shape
            zero += 1
    # a padded, more parallel tile can still beat the exact one
    assert zero > len(bank.levels[-1]) // 2
    plan = select(bank, (384, 768, 2304), hw, prog)
    assert plan.padding_waste == 0.0


@pytest.mark.parametrize("name", ["gpu-matrix", "cpu-like"])
def test_select_is_exhaustive_min(name):
    hw, prog, bank = bank_for(name)
    rng = np.random.default_rng(5)
    for _ in range(25):
        shape = tuple(int(x) for x in rng.integers(1, 3000, 3))
        plan = select(bank, shape, hw, prog)
        brute = min(
            analytical_cost(
                [a.candidate.tile for a in bank.chain(i)],
                shape,
                hw,
                prog,
                level0_inner=bank.chain(i)[-1].cost.inner_cost_cycles,
            ).total_cycles
            for i in range(len(bank.levels[-1]))
        )
        assert plan.predicted_cost_cycles == brute
        assert plan.padded_shape == tuple(-(-s // t) * t for s, t in zip(shape, plan.chain[0]))
        assert 0 <= plan.padding_waste < 1


def test_select_does_not_mutate_bank(gemm_bank):
    hw, prog, bank = gemm_bank
    before = dumps_bank(bank, hw)
    select(bank, (77, 300, 129), hw, prog)
    assert dumps_bank(bank, hw) == before


def test_launch_geometry(gemm_bank):
    hw, prog, bank = gemm_bank
    plan = select(bank, (1000, 500, 64), hw, prog)
    geom = plan.launch_geometry[2]
    assert geom == {
        "m": plan.padded_shape[0] // plan.chain[0][0],
        "n": plan.padded_shape[1] // plan.chain[0][1],
    }


def test_shape_validation():
    prog = conv2d_program(3)
    with pytest.raises(PlanError):
        RuntimeShape(("m",), (0,))
    with pytest.raises(PlanError):
        RuntimeShape.for_program(prog, {"n": 1, "co": 1, "h": 1, "w": 1, "ci": 1, "kh": 5})
    with pytest.raises(PlanError):
        RuntimeShape.for_program(prog, {"n": 1})
    shape = RuntimeShape.for_program(prog, {"n": 1, "co": 2, "h": 3, "w": 4, "ci": 5})
    assert shape.extents == (1, 2, 3, 4, 5, 3, 3)


def test_empty_bank():
    hw, prog, bank = _toy()
    empty = dataclasses.replace(bank, levels=(bank.levels[0], bank.levels[1], []), maps=(bank.maps[0], []))
    with pytest.raises(EmptyCandidateSetError):
        select(empty, (4, 1, 1), hw, prog)


def test_breakdown_accounting(gemm_bank):
    hw, prog, bank = gemm_bank
    plan = select(bank, (384, 768, 2304), hw, prog)
    report = plan_cost_breakdown(plan, hw, prog)
    assert report["total_cycles"] == plan.predicted_cost_cycles
    assert report["padding_waste"] == 0.0
    assert report["selection_time_s"] > 0
    assert len(report["levels"]) == 3


def test_plan_round_trip(gemm_bank, tmp_path):
    hw, prog, bank = gemm_bank
    plan = select(bank, (50, 60, 70), hw, prog)
    save_plan(plan, tmp_path / "p.json")
    again = load_plan(tmp_path / "p.json")
    assert again == plan
    validate_plan(again, hw, prog)
    assert dumps_plan(again) == dumps_plan(plan)


def test_validate_plan_rejects_broken_chain(gemm_bank):
    hw, prog, bank = gemm_bank
    plan = select(bank, (50, 60, 70), hw, prog)
    bad = dataclasses.replace(plan, chain=(plan.chain[0], (7, 7, 7), plan.chain[2]))
    with pytest.raises(PlanError):
        validate_plan(bad, hw, prog)
    with pytest.raises(PlanError):
        validate_plan(dataclasses.replace(plan, padded_shape=(1, 1, 1)), hw, prog)
    with pytest.raises(PlanError):
        validate_plan(plan, preset("cpu-like"), prog)


def test_adaptive_single_backend_is_select(gemm_bank):
    hw, prog, bank = gemm_bank
    a = select_adaptive([(hw, bank)], (100, 200, 300))
    b = select(bank, (100, 200, 300), hw, prog)
    assert a == b


def test_adaptive_tie_goes_to_first():
    hw = preset("cpu-like")
    twin = dataclasses.replace(hw, name="cpu-twin")
    prog = gemm_program(3)
    b1 = build_bank(prog, hw)
    b2 = build_bank(prog, twin)
    assert select_adaptive([(hw, b1), (twin, b2)], (64, 64, 64)).backend == "cpu-like"
    assert select_adaptive([(twin, b2), (hw, b1)], (64, 64, 64)).backend == "cpu-twin"
    with pytest.raises(PlanError):
        select_adaptive([], (1, 1, 1))


def test_adaptive_crossover_direction():
    ha, pa, ba = bank_for("synthetic-a")
    hb, pb, bb = bank_for("synthetic-b")
    small = select_adaptive([(ha, ba), (hb, bb)], (2, 1024, 1024))
    large = select_adaptive([(ha, ba), (hb, bb)], (512, 1024, 1024))
    assert small.backend == "synthetic-b"
    assert large.backend == "synthetic-a"
