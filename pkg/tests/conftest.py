import numpy as np
import pytest

from stemdegrade.synth import AtomMapSpec, gen_atom_map


@pytest.fixture(scope="session")
def lattice64():
    return gen_atom_map(AtomMapSpec(seed=3), 64, 64)


@pytest.fixture(scope="session")
def lattice128():
    return gen_atom_map(AtomMapSpec(seed=5), 128, 128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
