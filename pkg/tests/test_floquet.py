import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kinklab.floquet import (InstabilityError, floquet_analysis, monodromy,
                             pseudopotential_from_paul)
from kinklab.model import PaulTrap


def mathieu_beta(a, q):
    """Characteristic exponent of y'' + (a - 2 q cos 2t) y = 0 from its monodromy."""
    def rhs(t, s):
        y = s[:2]
        dy = s[2:]
        return np.r_[dy, -(a - 2 * q * np.cos(2 * t)) * y]
    sol = solve_ivp(rhs, (0, np.pi), [1, 0, 0, 1], rtol=1e-12, atol=1e-14)
    m = sol.y[:, -1].reshape(2, 2)
    return np.arccos(0.5 * (m[0, 0] + m[1, 1])) / np.pi


@pytest.mark.parametrize("a_y,q", [(0.0, 0.1), (-0.0002, 0.286), (0.01, 0.4)])
def test_radial_frequencies_match_mathieu_exponents(a_y, q):
    a_x = 0.0003
    fa = floquet_analysis(PaulTrap(a_x, a_y, 0.0, q))
    expected = sorted([mathieu_beta(a_y, q), mathieu_beta(-a_x - a_y, -q)])
    assert np.allclose(np.sort(fa.frequencies[1:]), expected, atol=1e-8)
    assert fa.frequencies[0] == pytest.approx(np.sqrt(a_x))


def test_small_q_limit_is_the_pseudopotential():
    q = 0.02
    fa = floquet_analysis(PaulTrap(1e-9, 0.0, 0.0, q))
    assert np.allclose(fa.frequencies[1:], q / np.sqrt(2), rtol=1e-3)


def test_monodromy_is_symplectic():
    m = monodromy(PaulTrap(0.000328, -0.0002, 0.0019, 0.286))
    assert abs(np.linalg.det(m) - 1.0) < 1e-9


def test_rotated_axes_are_orthonormal():
    fa = floquet_analysis(PaulTrap(0.000328, -0.0002, 0.0019, 0.286))
    assert np.allclose(fa.axes @ fa.axes.T, np.eye(3), atol=1e-10)
    assert fa.rotation_angle() != 0.0


def test_unstable_parameters_raise():
    with pytest.raises(InstabilityError):
        pseudopotential_from_paul(PaulTrap(0.0003, 0.0, 0.0, 0.95))
