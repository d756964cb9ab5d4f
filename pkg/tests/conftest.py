import numpy as np
import pytest

from smr.geometry import build_geometry, build_system_matrix
from smr.spectral import data_path, load_basis_attenuation, load_spectrum

BINS = (16, 22, 25, 28, 31, 34, 37, 41, 50)


@pytest.fixture(scope="session")
def model():
    return load_spectrum(data_path("spectrum_kramers_50kvp.txt"), BINS)


@pytest.fixture(scope="session")
def basis(model):
    paths = [data_path(f"attenuation_{n}.txt") for n in ("bone", "water", "iodine")]
    return load_basis_attenuation(paths, model.grid, ["bone", "water", "iodine"])


@pytest.fixture(scope="session")
def small_geometry():
    return build_geometry(dict(sdd=180, sod=132, cells=128, pitch=0.4, views=90, img=64, px=0.5))


@pytest.fixture(scope="session")
def small_A(small_geometry):
    return build_system_matrix(small_geometry)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _has_extension():
    try:
        from smr import _kernels  # noqa: F401
    except ImportError:
        return False
    return True


BACKENDS = [pytest.param("cython", marks=pytest.mark.skipif(not _has_extension(), reason="extension not built")),
            "python"]


def pytest_configure(config):
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown":
        return
    number, title = mark.args
    results = item.config._criteria
    if report.failed or report.when == "call":
        detail = getattr(item, "criterion_detail", "")
        results[number] = (title, "PASS" if report.passed else "FAIL", call.duration, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = config._criteria
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status, seconds, detail = results[number]
        line = f"criterion {number:2d} {status}  {title} ({seconds:.1f} s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
