import warnings

import pytest

from tcequil.params import PERTURBED, REFERENCE
from tcequil.riccati import solve_direct


def forced_direct(params, n_steps=4096):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_direct(params, n_steps, force=True)


@pytest.fixture(scope="session")
def ref_sol():
    return solve_direct(REFERENCE, 4096)


@pytest.fixture(scope="session")
def pert_sol():
    return forced_direct(PERTURBED)
