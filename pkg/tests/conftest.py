import pytest

from fpukg.model import ChainParams
from fpukg.normal_form import build_normal_form


@pytest.fixture(scope="session")
def bundle_r1():
    return build_normal_form(ChainParams(16, 0.01, 0.0), 1)


@pytest.fixture(scope="session")
def bundle_r2():
    return build_normal_form(ChainParams(16, 1e-3, 0.0), 2)


@pytest.fixture(scope="session")
def bundle_uncoupled():
    return build_normal_form(ChainParams(8, 0.0, 0.0), 2)
