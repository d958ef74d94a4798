import pytest

from logtensor.heisenberg import build_fock, build_voa


@pytest.fixture(scope="session")
def voa():
    return build_voa(6)


@pytest.fixture(scope="session")
def voa4():
    return build_voa(4)


@pytest.fixture(scope="session")
def fock_jordan(voa4):
    return build_fock(voa4, "1/2", 2, 4)


@pytest.fixture(scope="session")
def fock_plain(voa4):
    return build_fock(voa4, "1/2", 1, 4)
