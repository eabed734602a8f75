import numpy as np
import pytest

from maxstable.spatial import MaternParams, SiteSet
from maxstable.spectral import ArchimedeanClusterSpec, ClusteredArchimedean, GaussianSpectral, LogNormalSpectral


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sites3():
    return SiteSet([[0.0, 0.0], [0.7, 0.2], [0.3, 0.9]])


@pytest.fixture
def gaussian3(sites3):
    return GaussianSpectral.from_sites(sites3, MaternParams(1.0, 1.0))


@pytest.fixture
def lognormal3(sites3):
    return LogNormalSpectral.geometric(sites3, 1.0, MaternParams(1.0, 1.0))


@pytest.fixture
def clustered3():
    return ClusteredArchimedean([
        ArchimedeanClusterSpec((0, 1), "gumbel", 1.7, "lognormal", 0.9),
        ArchimedeanClusterSpec((2,), "clayton", 0.4, "weibull", 1.5),
    ])


@pytest.fixture(params=["gaussian", "lognormal", "clustered"])
def model3(request, gaussian3, lognormal3, clustered3):
    return {"gaussian": gaussian3, "lognormal": lognormal3, "clustered": clustered3}[request.param]


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
