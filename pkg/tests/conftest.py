import functools

import pytest

from tileplan.candgen import build_bank
from tileplan.hwmodel import PRESET_NAMES, preset
from tileplan.program import conv2d_program, gemm_program

OPS = ("gemm", "conv2d")


@functools.lru_cache(maxsize=None)
def bank_for(hw_name: str, op: str = "gemm"):
    hw = preset(hw_name)
    prog = gemm_program(hw.depth) if op == "gemm" else conv2d_program(hw.depth)
    return hw, prog, build_bank(prog, hw)


@pytest.fixture(params=PRESET_NAMES)
def preset_name(request):
    return request.param


@pytest.fixture(params=[(p, op) for p in PRESET_NAMES for op in OPS], ids=lambda x: f"{x[0]}-{x[1]}")
def any_bank(request):
    return bank_for(*request.param)


@pytest.fixture
def gemm_bank():
    return bank_for("gpu-matrix", "gemm")


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
