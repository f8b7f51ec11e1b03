import pytest

from narrowpair.crystal import CrystalSpec
from narrowpair.spectral import design_chain, tabulate_spectrum


@pytest.fixture(scope="session")
def crystal():
    return CrystalSpec()


@pytest.fixture(scope="session")
def chain():
    return design_chain()


@pytest.fixture(scope="session")
def narrow_spectrum(crystal):
    # a few hundred MHz around degeneracy, as used for pair simulation
    return tabulate_spectrum(crystal, 0, half_span=250e6, points=2001)
