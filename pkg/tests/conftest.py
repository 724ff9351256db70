import pytest

import fabricscope as fs


@pytest.fixture(scope="session")
def topo():
    return fs.default_topology()


@pytest.fixture(scope="session")
def profile():
    return fs.default_profile()


@pytest.fixture(scope="session")
def unit_profile():
    # unit-free aggregation tests
    return fs.CalibrationProfile(cpu_gpu_per_gcd_bidir_gbps=1.0)
