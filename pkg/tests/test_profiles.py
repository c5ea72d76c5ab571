import json

import numpy as np
import pytest
from scipy.special import ellipk

from blochwave.profiles import (NewtonDivergenceError, WaveProfile,
                                cnoidal_closed_form, continue_family,
                                family_derivatives, load_profile, phase_align,
                                residual_collocation, save_profile,
                                solve_profile, _series_from_values)


def kdv_residual_values(prof, n_pts=512):
    """Residual of the differentiated traveling-wave equation,
    -omega U' - k (U^2/2)' - k^3 U''', on a sample grid."""
    x = np.arange(n_pts) / n_pts
    j = prof.mode_numbers
    ph = np.exp(2j * np.pi * np.outer(x, j))
    U = (ph @ prof.coeffs[0]).real
    d1 = (ph @ (prof.coeffs[0] * (2j * np.pi * j))).real
    d3 = (ph @ (prof.coeffs[0] * (2j * np.pi * j) ** 3)).real
    k, om = prof.k, prof.omega
    return -om * d1 - k * U * d1 - k**3 * d3


class TestCnoidalClosedForm:
    def test_differentiated_equation_residual(self, small_wave):
        r = kdv_residual_values(small_wave)
        assert np.sqrt(np.mean(r**2)) < 1e-10

    @pytest.mark.parametrize("m,amp", [(0.3, 0.2), (0.8, 1.0), (0.95, 2.0)])
    def test_residual_across_modulus_range(self, m, amp):
        w = cnoidal_closed_form(m, 0.1, amp, n_modes=48)
        r = kdv_residual_values(w)
        assert np.sqrt(np.mean(r**2)) < 1e-10

    def test_mean_invariant(self, small_wave):
        assert abs(small_wave.mean()[0] - 0.0) < 1e-12
        w = cnoidal_closed_form(0.4, -0.7, 0.3, n_modes=32)
        assert abs(w.mean()[0] + 0.7) < 1e-12

    def test_small_modulus_limit_is_harmonic(self):
        """Toward the harmonic limit the profile tends to mean plus a small
        cosine and the wavenumber obeys the linear dispersion relation."""
        m = 2e-3
        M1, amp = 0.2, 0.01
        w = cnoidal_closed_form(m, M1, amp, n_modes=16, modulus_bounds=(1e-4, 0.97))
        v = w.values(256).real[0]
        cosfit = M1 + 0.5 * amp * np.cos(2 * np.pi * (np.arange(256) / 256))
        assert np.abs(v - cosfit).max() < 0.02 * amp
        # linear dispersion of the once-integrated equation:
        # omega = 4 pi^2 k^3 - k M at the bifurcating wavenumber
        assert w.omega == pytest.approx(4 * np.pi**2 * w.k**3 - w.k * M1,
                                        rel=5e-3)

    def test_modulus_bounds_rejected(self):
        with pytest.raises(ValueError):
            cnoidal_closed_form(0.999, 0.0, 1.0)
        with pytest.raises(ValueError):
            cnoidal_closed_form(1e-7, 0.0, 1.0)
        with pytest.raises(ValueError):
            cnoidal_closed_form(0.5, 0.0, -1.0)

    def test_amplitude_and_wavenumber_relation(self, small_wave):
        m = small_wave.meta["modulus"]
        K = ellipk(m)
        assert small_wave.amplitude() == pytest.approx(
            48 * m * small_wave.k**2 * K**2, rel=1e-8)


class TestSolveProfile:
    def test_reconverges_to_closed_form(self, kdv, small_wave):
        w2 = solve_profile(kdv, small_wave,
                           targets=(np.array([0.0]), small_wave.k))
        aligned = phase_align(w2, small_wave)
        diff = np.abs(aligned.values(256) - small_wave.values(256)).max()
        assert diff < 1e-9
        assert w2.residual < 1e-10

    def test_small_amplitude_ansatz_kdv(self, kdv):
        """Seed at a neutral wavenumber of the linearization about the mean
        converges to a nearby small wave."""
        M1, k, eps = 0.2, 0.08, 0.02
        om0 = 4 * np.pi**2 * k**3 - k * M1
        x = np.arange(128) / 128
        seed = _series_from_values(M1 + eps * np.cos(2 * np.pi * x), 16)
        q0 = om0 * M1 + 0.5 * k * M1**2
        P = 0.5 * M1**2 + 0.25 * eps**2
        w = solve_profile(kdv, (seed, om0, np.array([q0])),
                          targets=(np.array([M1]), k), quad_target=P)
        assert w.residual < 1e-10
        assert not w.degenerate
        assert w.amplitude() > eps

    def test_small_amplitude_ansatz_parabolic(self, p2, p2_wave):
        assert p2_wave.residual < 1e-10
        assert residual_collocation(p2, p2_wave) < 1e-10
        assert p2_wave.amplitude() > 1.0

    def test_constant_seed_degenerate(self, kdv):
        seed = np.zeros((1, 17), dtype=complex)
        seed[0, 8] = 0.3
        w = solve_profile(kdv, (seed, 0.1, np.array([0.0])),
                          targets=(np.array([0.3]), 0.5))
        assert w.degenerate
        assert "constant" in w.meta["note"]
        v = w.values(64).real
        assert np.abs(v - 0.3).max() < 1e-14

    def test_mean_constraint_tight(self, kdv, small_wave):
        w = solve_profile(kdv, small_wave, targets=(np.array([0.013]), small_wave.k))
        assert abs(w.mean()[0] - 0.013) < 1e-12

    def test_infeasible_quadratic_average(self, kdv, small_wave):
        with pytest.raises(NewtonDivergenceError):
            solve_profile(kdv, small_wave,
                          targets=(np.array([0.0]), small_wave.k),
                          quad_target=-0.05)


class TestContinuation:
    def test_zero_steps_returns_start(self, kdv, small_wave):
        res = continue_family(kdv, small_wave, "P", steps=0, step_size=0.01)
        assert res.profiles == [small_wave]
        assert not res.fold

    def test_matches_closed_form_along_modulus_slice(self, kdv):
        """At fixed (M, k), the quadratic average parametrizes the family;
        continuation reproduces the closed-form wave at matched parameters."""
        k = 0.07
        m0, m1 = 0.5, 0.62

        def by_modulus(m):
            K = ellipk(m)
            amp = 48 * m * k**2 * K**2
            return cnoidal_closed_form(m, 0.0, amp, n_modes=32)

        w0, w1 = by_modulus(m0), by_modulus(m1)
        P0, P1 = w0.params[1], w1.params[1]
        steps = 8
        res = continue_family(kdv, w0, "P", steps=steps,
                              step_size=(P1 - P0) / steps)
        assert not res.fold
        final = phase_align(res.profiles[-1], w1)
        assert np.abs(final.values(256) - w1.values(256)).max() < 1e-8

    def test_manufactured_fold_flag(self, kdv, small_wave):
        """Marching the quadratic average below the constant-state floor
        runs out of family; step halving must exhaust and raise the flag."""
        P0 = small_wave.params[1]
        res = continue_family(kdv, small_wave, "P", steps=60,
                              step_size=-P0 / 30.0)
        assert res.fold
        assert len(res.profiles) < 61
        assert res.profiles[-1].params[1] > -1e-12

    def test_kdv_family_has_three_continuable_directions(self, kdv, small_wave):
        for direction, h in (("M", 0.01), ("P", 0.002), ("k", 0.001)):
            res = continue_family(kdv, small_wave, direction, steps=2,
                                  step_size=h)
            assert not res.fold and len(res.profiles) == 3

    def test_parabolic_family_has_d_plus_one_directions(self, p2, p2_wave):
        for direction, h in (("M1", 0.01), ("M2", 0.01), ("k", 0.0005)):
            res = continue_family(p2, p2_wave, direction, steps=2, step_size=h)
            assert not res.fold and len(res.profiles) == 3


class TestFamilyDerivatives:
    def test_translation_direction_is_analytic_derivative(self, kdv, small_wave):
        fam = family_derivatives(kdv, small_wave, richardson=False)
        expected = small_wave.derivative_coeffs(1)
        assert np.abs(fam.translation - expected).max() < 1e-14

    def test_finite_difference_consistency(self, kdv, small_wave):
        """Central differences at delta match the stored partial to
        O(delta^2), against independently re-solved neighbors."""
        fam = family_derivatives(kdv, small_wave, fd_step=1e-5)
        for delta in (2e-4, 1e-4):
            up = solve_profile(kdv, small_wave,
                               targets=(np.array([delta]), small_wave.k))
            dn = solve_profile(kdv, small_wave,
                               targets=(np.array([-delta]), small_wave.k))
            fd = (up.coeffs - dn.coeffs) / (2 * delta)
            err = np.abs(fd - fam.partials["M"]).max()
            assert err < 10.0 * delta**2 + 1e-9

    def test_richardson_diagnostic_small(self, kdv, small_wave):
        fam = family_derivatives(kdv, small_wave)
        assert all(v < 1e-5 for v in fam.richardson.values())

    def test_frequency_derivative_matches_dispersion(self, kdv):
        """For a small-amplitude wave, d omega / d k approaches the
        derivative of the linear dispersion relation at the mean state."""
        M1 = 0.2
        w = cnoidal_closed_form(3e-3, M1, 0.01, n_modes=16,
                                modulus_bounds=(1e-4, 0.97))
        fam = family_derivatives(kdv, w, fd_step=1e-6)
        expected = 12 * np.pi**2 * w.k**2 - M1
        assert fam.freq_partials["k"] == pytest.approx(expected, rel=2e-2)


class TestPersistence:
    def test_json_roundtrip(self, small_wave, tmp_path):
        path = tmp_path / "wave.json"
        save_profile(small_wave, path)
        back = load_profile(path)
        assert np.array_equal(back.coeffs, small_wave.coeffs)
        assert back.k == small_wave.k and back.omega == small_wave.omega
        assert np.array_equal(back.params, small_wave.params)
        assert back.param_names == small_wave.param_names

    def test_json_roundtrip_multicomponent(self, p2_wave, tmp_path):
        path = tmp_path / "wave2.json"
        save_profile(p2_wave, path)
        back = load_profile(path)
        assert np.array_equal(back.coeffs, p2_wave.coeffs)

    def test_schema_fields_present(self, small_wave, tmp_path):
        path = tmp_path / "wave.json"
        save_profile(small_wave, path)
        doc = json.loads(path.read_text())
        for key in ("kind", "d", "k", "omega", "params", "constants",
                    "coeffs", "residual"):
            assert key in doc
        assert doc["coeffs"][0] == [small_wave.coeffs[0, 0].real,
                                    small_wave.coeffs[0, 0].imag]


class TestResidualOracle:
    def test_collocation_independent_of_solver(self, kdv, small_wave, p2, p2_wave):
        assert residual_collocation(kdv, small_wave) < 1e-12
        assert residual_collocation(p2, p2_wave) < 1e-12

    def test_collocation_detects_corruption(self, kdv, small_wave):
        bad = WaveProfile(small_wave.kind, 1, small_wave.coeffs * 1.01,
                          small_wave.k, small_wave.omega, small_wave.params,
                          small_wave.param_names, small_wave.constants,
                          small_wave.residual)
        assert residual_collocation(kdv, bad) > 1e-6
