import warnings
from functools import lru_cache

import pytest

from gevrey_witness import assembly as asm
from gevrey_witness.pipeline import prepare
from gevrey_witness.transport import run_transport


@lru_cache(maxsize=None)
def _built(q: int, a: int):
    P = prepare(q, a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fields, infos = run_transport(P.ctx, 6)
    cut = asm.build_cutoffs(P.params, 6, P.ctx.rho)
    w = asm.assemble_v(cut, fields, P.params.R0)
    return P, fields, infos, cut, w


@pytest.fixture(scope="session")
def built21():
    return _built(2, 1)


@pytest.fixture(scope="session")
def built32():
    return _built(3, 2)


@pytest.fixture(scope="session", params=[(2, 1), (3, 2)], ids=["q2a1", "q3a2"])
def built(request):
    return _built(*request.param)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
