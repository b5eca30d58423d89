import numpy as np
import pytest

from facedecomp.synth import gen_sequence


@pytest.fixture(scope="session")
def small_seq():
    """A deterministic 3-frame sequence shared by read-only tests."""
    return gen_sequence(7, 3, size=32)


@pytest.fixture(scope="session")
def tiny_seq():
    """Cheapest useful sequence for solver smoke tests."""
    return gen_sequence(11, 2, size=16)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_unit_normals(rng, h, w):
    v = rng.normal(size=(h, w, 3))
    v[:, :, 2] = np.abs(v[:, :, 2]) + 0.3
    return v / np.linalg.norm(v, axis=2, keepdims=True)
