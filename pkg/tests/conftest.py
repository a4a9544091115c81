import os

import pytest
from hypothesis import HealthCheck, settings

from dftgamma.functionals import tf_c0, tf_d, vw_c0, vw_d
from dftgamma.ltable import LTableCache, build_l_table
from dftgamma.radial import RadialGrid

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def grid():
    return RadialGrid()


@pytest.fixture(scope="session")
def cache(tmp_path_factory):
    """Table cache shared by the session; DFTGAMMA_TEST_CACHE reuses a persistent one."""
    path = os.environ.get("DFTGAMMA_TEST_CACHE") or tmp_path_factory.mktemp("ltables")
    return LTableCache(path)


@pytest.fixture(scope="session")
def tables(cache):
    return {m.family: build_l_table(m, cache=cache) for m in (tf_c0(), tf_d(), vw_c0(2.0), vw_d(2.0))}
