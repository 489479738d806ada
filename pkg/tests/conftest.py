import numpy as np
import pytest

from whcpd import _accel, _kernels
from whcpd.whmodel import WhParams, volterra_kernel

REF_W = [1.0, 0.538, 1.834, -2.259, 0.862]
REF_H = [1.594, -6.538, -2.168]


@pytest.fixture(scope="session")
def ref_params():
    return WhParams(REF_W, REF_H, 1.0, 3)


@pytest.fixture(scope="session")
def ref_tensor(ref_params):
    return volterra_kernel(ref_params)


def random_params(rng, L_w, R, p, canonical=True, min_abs_h=0.3):
    w = np.r_[1.0, rng.standard_normal(L_w - 1)]
    h = rng.standard_normal(R)
    h = np.sign(h) * np.maximum(np.abs(h), min_abs_h)
    if canonical:
        return WhParams(w, h, 1.0, p)
    return WhParams(rng.uniform(0.5, 2.0) * w, h, rng.uniform(0.5, 2.0), p)


BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def kernels(request):
    """The kernel functions of one backend, keyed by their generic names."""
    suffix = "np" if request.param == "numpy" else "jit"
    return {
        name: getattr(_kernels, f"{name}_{suffix}")
        for name in ("volterra_kernel", "volterra_response", "wh_response", "cals_loop")
    }


ACCEPTANCE = []


def record(criterion, ok, detail):
    """Log one acceptance verdict for the terminal summary and return ``ok``."""
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
