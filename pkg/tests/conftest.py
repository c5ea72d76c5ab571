import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from blochwave.profiles import (WaveProfile, _series_from_values,
                                cnoidal_closed_form, solve_profile)
from blochwave.systems import (burgers_system, coupled_center_system,
                               heat_system, kdv_system)


@pytest.fixture(scope="session")
def kdv():
    return kdv_system()


@pytest.fixture(scope="session")
def small_wave():
    """Gentle cnoidal wave; tight absolute tolerances are reachable here."""
    return cnoidal_closed_form(0.6, 0.0, 0.5, n_modes=32)


@pytest.fixture(scope="session")
def mid_wave():
    return cnoidal_closed_form(0.75, 0.1, 0.8, n_modes=24)


@pytest.fixture(scope="session")
def big_wave():
    """Cnoidal wave with k close to 0.7; amplitudes are O(50), so residual
    tolerances carry the equation scale."""
    return cnoidal_closed_form(0.6, 0.0, 53.637, n_modes=48, residual_tol=1e-8)


def constant_kdv_profile(mean, k, omega):
    c = np.zeros((1, 3), dtype=complex)
    c[0, 1] = mean
    return WaveProfile("kdv", 1, c, k, omega,
                       np.array([mean, 0.5 * mean**2]), ("M", "P"),
                       np.array([omega * mean + 0.5 * k * mean**2]),
                       0.0, degenerate=True)


@pytest.fixture(scope="session")
def const_wave():
    return constant_kdv_profile(0.3, 0.9, 0.45)


@pytest.fixture(scope="session")
def p2():
    return coupled_center_system()


@pytest.fixture(scope="session")
def p2_wave(p2):
    """Nonconstant periodic wave of the d=2 system, seeded by shooting the
    reversible profile plane to a period-one orbit."""
    k, c = 0.25, 3.6
    ustar = -np.sqrt(2 * c)

    def rhs(t, y):
        return [y[1], (0.5 * y[0] ** 2 - c) / k**2]

    def half_period(a):
        ev = lambda t, y: y[1]
        ev.direction = 1.0
        s = solve_ivp(rhs, (1e-9, 10), [ustar + a, 0.0], events=ev,
                      rtol=1e-11, atol=1e-12)
        return s.t_events[0][0]

    a1 = brentq(lambda a: half_period(a) - 0.5, 1.5, 2.0, xtol=1e-10)
    sol = solve_ivp(rhs, (1e-9, 1.2), [ustar + a1, 0.0], rtol=1e-12,
                    atol=1e-13, dense_output=True)
    x = np.arange(192) / 192
    u = sol.sol(x)[0]
    M2 = 0.2
    v = k * sol.sol(x)[1] + M2
    seed = _series_from_values(np.stack([u, v]), 32)
    return solve_profile(p2, (seed, 0.0, np.array([k * M2, 0.0])),
                         targets=(np.array([u.mean(), M2]), k))


@pytest.fixture(scope="session")
def heat1():
    return heat_system(d=1, diffusion=[[1.0]], advection=[[0.4]])


@pytest.fixture(scope="session")
def heat2():
    return heat_system(d=2, diffusion=[[1.0, 0.2], [0.2, 2.0]],
                       advection=[[0.5, 0.2], [0.1, -0.3]])


@pytest.fixture(scope="session")
def burgers():
    return burgers_system(viscosity=1.0)


def constant_parabolic_profile(system, mean, k, omega):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    c = np.zeros((system.d, 3), dtype=complex)
    c[:, 1] = mean
    q = omega * mean + k * system.eval_flux(mean)
    return WaveProfile("parabolic", system.d, c, k, omega, mean,
                       tuple(f"M{i+1}" for i in range(system.d)), q,
                       0.0, degenerate=True)
