import pytest

from monohop.params import reference_params, reference_values


@pytest.fixture(scope="session")
def p():
    return reference_params()


@pytest.fixture(scope="session")
def values():
    return reference_values()
