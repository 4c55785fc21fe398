"""Shared fixtures: the worked systems every suite file leans on.

Builds are session scoped because the commensurate solves, while fast,
add up across property tests.
"""

from fractions import Fraction
import math

import numpy as np
import pytest

import delaylyap as dl


# ---------------------------------------------------------------- systems

@pytest.fixture(scope="session")
def w1():
    return dl.WeightMatrix.identity(1)


@pytest.fixture(scope="session")
def w2():
    return dl.WeightMatrix.identity(2)


@pytest.fixture(scope="session")
def scalar_half():
    """x(t) = 0.5 x(t-1), the hand-solvable geometric case."""
    return dl.validate(dl.DelaySystem.single(0.5, Fraction(1)))


@pytest.fixture(scope="session")
def ex1():
    # unstable on purpose: the build is purely algebraic
    a = np.array([[-0.9375, 1.11844], [0.3732, -1.3009]])
    return dl.validate(dl.DelaySystem.single(a, Fraction(1)))


EX2A_MATS = (
    np.array([[-0.4, -0.3], [0.1, 0.15]]),
    np.array([[0.1, 0.25], [-0.9, -0.1]]),
)

EX2B_MATS = (
    np.array([[1.1, 0.0], [-0.4, 0.0]]),
    np.array([[0.25, -0.125], [-0.4, -0.5]]),
)


def _two_delay(mats, scale=1.0):
    pairs = [
        (Fraction(1), scale * mats[0]),
        (Fraction(3, 2), scale * mats[1]),
    ]
    return dl.validate(dl.DelaySystem(2, pairs))


@pytest.fixture(scope="session")
def ex2a():
    return _two_delay(EX2A_MATS)


@pytest.fixture(scope="session")
def ex2b():
    return _two_delay(EX2B_MATS)


@pytest.fixture(scope="session")
def ex2a_half():
    """Example 2(a) matrices halved: comfortably stable, used wherever a
    convergent integral is required."""
    return _two_delay(EX2A_MATS, scale=0.5)


@pytest.fixture(scope="session")
def ex3():
    a, b = 0.7, -1.1
    pairs = [
        (Fraction(1), np.array([[-0.4, -0.3], [0.1 + a, 0.15]])),
        (math.sqrt(2.0), np.array([[0.1, 0.25], [-0.9, -0.1 + b]])),
    ]
    return dl.validate(dl.DelaySystem(2, pairs))


# ---------------------------------------------------------------- builds

@pytest.fixture(scope="session")
def u_scalar(scalar_half, w1):
    return dl.build_single_delay(scalar_half, w1)


@pytest.fixture(scope="session")
def u_ex1(ex1, w2):
    return dl.build_single_delay(ex1, w2)


@pytest.fixture(scope="session")
def u_ex2a(ex2a, w2):
    return dl.build_commensurate(dl.to_commensurate(ex2a), w2)


@pytest.fixture(scope="session")
def u_ex2b(ex2b, w2):
    return dl.build_commensurate(dl.to_commensurate(ex2b), w2)


@pytest.fixture(scope="session")
def u_ex2a_half(ex2a_half, w2):
    return dl.build_commensurate(dl.to_commensurate(ex2a_half), w2)


@pytest.fixture(scope="session")
def report_ex2a_half(ex2a_half):
    return dl.stability_check(ex2a_half)


# ---------------------------------------------------------------- helpers

def random_stable_single(seed, n=2, radius=0.8):
    """Deterministic random single-delay system with spectral radius
    exactly `radius`."""
    rng = np.random.default_rng(seed)
    while True:
        a = rng.uniform(-1.0, 1.0, size=(n, n))
        rho = max(abs(np.linalg.eigvals(a)))
        if rho > 1e-3:
            break
    a *= radius / rho
    return dl.validate(dl.DelaySystem.single(a, Fraction(1)))
