"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured margins when it completes.

Scales and tolerances are fixed here, not tuned at runtime.  Shared
full-scale spectra (truncation 96/144 on a 255-point Floquet grid) are
computed once per session and reused across the spectrum-structure,
expansion, and large-branch criteria.
"""

import numpy as np
import pytest
from scipy.special import ellipk

from blochwave import _kernels
from blochwave import dynamics as dyn
from blochwave import floquet as fl
from blochwave import stability as st
from blochwave import whitham as wh
from blochwave.bloch import (SampledLine, forward_bloch, inverse_bloch,
                             line_norm, mixed_norm)
from blochwave.profiles import cnoidal_closed_form, solve_profile
from blochwave.systems import burgers_system, heat_system, kdv_system
from tests.conftest import constant_kdv_profile, constant_parabolic_profile


def report(num, text):
    print(f"\nACCEPTANCE {num}: PASS  {text}")


@pytest.fixture(scope="module")
def kdv():
    return kdv_system()


def make_wave(m, kbar, n_modes=48):
    amp = 48.0 * m * kbar**2 * ellipk(m) ** 2
    return cnoidal_closed_form(m, 0.0, amp, n_modes=n_modes,
                               residual_tol=1e-8)


@pytest.fixture(scope="module")
def wave_set():
    return [make_wave(0.35, 0.75), make_wave(0.6, 0.7), make_wave(0.8, 0.65)]


@pytest.fixture(scope="module")
def full_sweeps(kdv, wave_set):
    grid = fl.symmetric_xi_grid(255)
    out = []
    for w in wave_set:
        spec = fl.sweep(kdv, w, grid, 96, 144)
        curves = fl.track_curves(spec)
        cls = fl.classify_curves(curves, kdv)
        out.append((w, spec, curves, cls))
    return out


def test_criterion_1_bloch_engine():
    """Roundtrip 1e-10; Parseval constant 2 pi to 1e-12; both
    Hausdorff-Young inequalities on 100 random inputs, p in {2, 4, inf}."""
    rng = np.random.default_rng(100)
    worst_rt = 0.0
    for n, m in [(4, 4), (16, 12), (64, 16), (8, 256), (256, 4), (32, 32)]:
        K = n * m
        gf = np.zeros(K, dtype=complex)
        nb = max(2, K // 6)
        gf[:nb] = rng.normal(size=nb) + 1j * rng.normal(size=nb)
        gf[-nb:] = rng.normal(size=nb) + 1j * rng.normal(size=nb)
        g = np.fft.ifft(gf) * K
        line = SampledLine(g, n, m)
        back = inverse_bloch(forward_bloch(line))
        worst_rt = max(worst_rt, np.abs(back.values - g).max() / np.abs(g).max())
    assert worst_rt < 1e-10

    worst_pv = 0.0
    worst_hy = 0.0
    n, m = 16, 12
    for _ in range(100):
        K = n * m
        gf = np.zeros(K, dtype=complex)
        nb = K // 5
        gf[:nb] = rng.normal(size=nb) + 1j * rng.normal(size=nb)
        gf[-nb:] = rng.normal(size=nb) + 1j * rng.normal(size=nb)
        g = np.fft.ifft(gf) * K
        line = SampledLine(g, n, m)
        G = forward_bloch(line)
        l2 = line_norm(line, 2)
        worst_pv = max(worst_pv,
                       abs(l2**2 - 2 * np.pi * mixed_norm(G, 2, 2) ** 2) / l2**2)
        for p in (2.0, 4.0, np.inf):
            pp = 1.0 if np.isinf(p) else p / (p - 1.0)
            cp = 1.0 if np.isinf(p) else (2 * np.pi) ** (1.0 / p)
            r1 = line_norm(line, p) / (cp * mixed_norm(G, pp, p))
            r2 = mixed_norm(G, p, pp) * cp / line_norm(line, pp)
            worst_hy = max(worst_hy, r1, r2)
    assert worst_pv < 1e-12
    assert worst_hy <= 1.0 + 1e-12
    report(1, f"roundtrip {worst_rt:.1e}, Parseval {worst_pv:.1e}, "
              f"HY ratio max {worst_hy:.12f}")


def test_criterion_2_fiber_oracle(kdv):
    """Constant-coefficient KdV and heat fibers match the analytic
    eigenvalues to 1e-8 for |j| <= 10 across 64 Floquet values."""
    n_f = 24
    xis = np.linspace(-np.pi, np.pi, 64, endpoint=False)
    kb, om, M1 = 0.9, 0.45, 0.3
    const = constant_kdv_profile(M1, kb, om)
    mats = fl.assemble_fibers(kdv, const, xis, n_f)
    worst_kdv = 0.0
    for A, xi in zip(mats, xis):
        w = np.linalg.eigvals(A)
        for j in range(-10, 11):
            th = xi + 2 * np.pi * j
            lam = -1j * th * (om + kb * M1) + 1j * kb**3 * th**3
            worst_kdv = max(worst_kdv, np.abs(w - lam).min())
    assert worst_kdv < 1e-8

    heat = heat_system(d=2, diffusion=[[1.0, 0.2], [0.2, 2.0]],
                       advection=[[0.5, 0.2], [0.1, -0.3]])
    prof = constant_parabolic_profile(heat, [0.1, -0.2], 0.8, 0.3)
    mats = fl.assemble_fibers(heat, prof, xis, n_f)
    A0 = heat.meta["advection"]
    D = heat.diffusion
    worst_heat = 0.0
    for A, xi in zip(mats, xis):
        w = np.linalg.eigvals(A)
        for j in range(-10, 11):
            th = xi + 2 * np.pi * j
            blk = -1j * th * (prof.omega * np.eye(2) + prof.k * A0) \
                - prof.k**2 * th**2 * D
            for lam in np.linalg.eigvals(blk):
                worst_heat = max(worst_heat, np.abs(w - lam).min())
    assert worst_heat < 1e-8
    report(2, f"KdV fiber error {worst_kdv:.1e}, heat fiber error {worst_heat:.1e}")


def test_criterion_3_cnoidal_spectrum_structure(full_sweeps):
    """Across the modulus range: resolved spectrum on the imaginary axis to
    1e-6, exactly three branches through zero, one line family plus one
    loop (tracked as the symmetric branch pair)."""
    lines = []
    for w, spec, curves, cls in full_sweeps:
        _, lr = spec.resolved_pairs()
        max_re = float(np.abs(lr.real).max())
        assert max_re < 1e-6
        assert len(cls["critical"]) == 3
        assert len(cls["loop"]) == 2
        assert len(cls["line"]) >= 10
        loop_ids = set(cls["loop"])
        loop_reach = max(c.reach for c in curves if c.branch_id in loop_ids)
        line_reach = min(c.reach for c in curves
                         if c.branch_id in set(cls["line"]) - loop_ids)
        assert loop_reach < line_reach
        lines.append(f"m={w.meta['modulus']}: max|Re|={max_re:.1e}, "
                     f"critical=3, loop pair + {len(cls['line'])} line branches")
    report(3, "; ".join(lines))


def test_criterion_4_critical_expansion(kdv, wave_set):
    """Vanishing curvature and nonvanishing third derivative with margin on
    the three critical branches, for each wave."""
    lines = []
    for w in wave_set:
        exp = fl.critical_expansion(kdv, w, n_fourier=48,
                                    fd_solve_kw={"report_tol": 1e-8})
        assert exp.multiplicity == 3
        curv = np.abs(exp.curvatures).max()
        third = np.abs(exp.third_derivs.imag).min()
        assert curv < 1e-4
        assert third > 0.3
        assert third > 100.0 * curv
        assert exp.richardson["d3"] < 0.05
        assert exp.slope_consistency < 1e-4
        lines.append(f"m={w.meta['modulus']}: |curv|max={curv:.1e}, "
                     f"|third|min={third:.3f}")
    report(4, "; ".join(lines))


def test_criterion_5_spectral_averaged_cross_validation(kdv, wave_set):
    """Whitham characteristic speeds equal the critical slopes to 1e-3
    relative: KdV cnoidal via tabulated averages, and a d=2 parabolic
    constant state via the analytic zero-amplitude maps."""
    w = wave_set[1]
    maps = wh.tabulate_averages(kdv, w,
                                spans={"M": 0.02, "P": 0.2, "k": 0.002},
                                counts=4, solve_kw={"report_tol": 1e-8})
    at = {"M": w.params[0], "P": w.params[1], "k": w.k}
    res = wh.characteristic_matrix(maps, at)
    assert res.hyperbolic
    mapped = np.sort(wh.moving_frame_slope_map(res.speeds.real, w))
    exp = fl.critical_expansion(kdv, w, n_fourier=48,
                                fd_solve_kw={"report_tol": 1e-8})
    mu = np.sort((exp.slopes / 1j).real)
    kdv_err = float(np.abs(mapped - mu).max() / np.abs(mu).max())
    assert kdv_err < 1e-3

    heat = heat_system(d=2, diffusion=[[1.0, 0.2], [0.2, 2.0]],
                       advection=[[0.5, 0.2], [0.1, -0.3]])
    prof = constant_parabolic_profile(heat, [0.1, -0.2], 0.8, -0.2)
    a_eigs = np.sort(np.linalg.eigvals(heat.meta["advection"]).real)
    cmaps = wh.constant_state_maps(heat, [0.1, -0.2], 0.8, speed=a_eigs[0],
                                   spans={"M1": 0.1, "M2": 0.1, "k": 0.05},
                                   counts=5)
    cres = wh.characteristic_matrix(cmaps, {"M1": 0.1, "M2": -0.2, "k": 0.8})
    mapped_c = wh.moving_frame_slope_map(cres.speeds.real, prof)
    uniq = np.sort(np.unique(np.round(mapped_c, 8)))
    # finite-difference slopes of the d critical branches of the fiber
    h = 1e-2
    offs = np.array([i * h for i in range(-3, 4) if i != 0])
    samp = fl._critical_branch_samples(heat, prof, 2, offs, 24, shift=0.35)
    full = np.zeros((7, 2), dtype=complex)
    full[:3] = samp[:3]
    full[4:] = samp[3:]
    d1 = fl._D1_STENCIL @ full[1:6] / (12.0 * h)
    slopes_fd = np.sort((d1 / 1j).real)
    heat_err = float(np.abs(slopes_fd - uniq).max() / np.abs(uniq).max())
    assert heat_err < 1e-3
    report(5, f"KdV slope match {kdv_err:.1e}; parabolic constant "
              f"slope match {heat_err:.1e}")


def test_criterion_6_condition_checkers(kdv, full_sweeps):
    """KdV cnoidal fails the strict and quadratic-decay conditions while
    passing the imaginary-axis and derivative-sign conditions; a pure-heat
    constant passes them with theta = k^2 lambda_min(D) to 1e-6; linearized
    decay about a stable constant state fits the diffusive exponent."""
    w, spec, curves, cls = full_sweeps[1]
    d1 = st.check_d1(spec)
    d2 = st.check_d2(spec, curves)
    im = st.check_imag_axis(spec)
    a = st.check_a(curves, cls)
    assert not d1.verdict and not d2.verdict
    assert im.verdict and a.verdict

    heat = heat_system(d=2, diffusion=[[1.0, 0.3], [0.3, 2.0]])
    prof = constant_parabolic_profile(heat, [0.0, 0.0], 0.9, 0.0)
    grid = fl.symmetric_xi_grid(41)
    hspec = fl.sweep(heat, prof, grid, 16, 24, refine=False)
    hcurves = fl.track_curves(hspec)
    fl.classify_curves(hcurves, heat)
    hd1 = st.check_d1(hspec)
    hd2 = st.check_d2(hspec, hcurves)
    lam_min = float(np.linalg.eigvalsh(heat.diffusion).min())
    theta_expected = prof.k**2 * lam_min
    assert hd1.verdict and hd2.verdict
    theta_err = abs(hd2.theta_fit - theta_expected)
    assert theta_err < 1e-6

    bs = burgers_system(viscosity=1.0)
    cprof = constant_parabolic_profile(bs, [0.3], 1.0, -0.3)
    w0 = dyn.gaussian_bump(512, 8, width_cells=1.0, amplitude=1.0)
    times = np.geomspace(10, 1000, 16)
    traj = dyn.evolve_linear(bs, cprof, w0, times, norms=("Linf",))
    fit = dyn.fit_decay(times, traj.norms["Linf"], window=(10, 1000))
    assert abs(fit.exponent - (-0.5)) < 0.05
    report(6, f"KdV: D1/D2 fail, imag-axis/sign-control pass; heat theta "
              f"error {theta_err:.1e}; constant-state decay exponent "
              f"{fit.exponent:+.4f}")


@pytest.fixture(scope="module")
def dispersive_run(kdv):
    """Linear evolution about a small-modulus cnoidal wave on 200 cells.

    Larger-amplitude waves phase-mix this torus before t = 500 (checked by
    quadrupling the domain, where the same setup recovers the -1/3 law), so
    the dispersive window is realized on a weakly nonlinear family member.
    Data is a localized zero-mean bump: a nonzero mean pumps the uniform
    translation mode through the Jordan block at the origin, which the
    mean-free phase gauge of the periodic domain cannot absorb.
    """
    w = make_wave(0.01, 0.05 ** (1.0 / 3.0), n_modes=16)
    N, M = 200, 24
    w0 = dyn.gaussian_bump(N, M, width_cells=1.0, amplitude=1.0,
                           zero_mean=True)
    times = np.geomspace(48, 540, 18)
    traj = dyn.evolve_linear(kdv, w, w0, times, norms=("L2", "Linf"))
    return w, w0, traj


def test_criterion_7_kdv_dispersive_decay(dispersive_run):
    """Fitted exponent of the space-modulated sup-norm upper bound over
    t in [50, 500] lies in [-0.40, -0.25] with window-split drift < 0.05."""
    w, w0, traj = dispersive_run
    series = []
    for i in range(traj.times.size):
        v, _ = dyn.compute_sm_norm(traj.state_line(i), w, "Linf",
                                   cutoff=np.pi / 8, refine=True,
                                   refine_maxiter=20)
        series.append(v)
    fit = dyn.fit_decay(traj.times, np.array(series), window=(50.0, 500.0))
    assert -0.40 <= fit.exponent <= -0.25
    assert fit.drift < 0.05
    report(7, f"N_Linf exponent {fit.exponent:+.4f} (target -1/3), "
              f"drift {fit.drift:.4f} over [50, 500]")


def test_criterion_8_crude_group_bound(kdv, dispersive_run, wave_set):
    """Along every linearized trajectory the energy stays below the
    exponential envelope exp(t (k/2) max(-U_x)_+) times the initial energy,
    with 1e-6 slack; checked in logarithms to dodge overflow."""
    checked = 0
    for w, times in ((dispersive_run[0], None), (wave_set[1], None)):
        N, M = 64, 96
        rng = np.random.default_rng(7)
        K = N * M
        cf = np.zeros(K, dtype=complex)
        cf[1:40] = rng.normal(size=39) + 1j * rng.normal(size=39)
        cf[-39:] = np.conj(cf[1:40])[::-1]
        g = np.fft.ifft(cf).real * K
        g /= np.abs(g).max()
        tarr = np.linspace(0.5, 25.0, 12)
        traj = dyn.evolve_linear(kdv, w, SampledLine(g, N, M), tarr,
                                 norms=("L2",))
        rate = dyn.kdv_group_bound_rate(w)
        log0 = np.log(dyn.state_norm(SampledLine(g, N, M), "L2"))
        for t, v in zip(traj.times, traj.norms["L2"]):
            assert np.log(v) <= log0 + t * rate + np.log1p(1e-6)
            checked += 1
    # and along the dispersive run itself
    w, w0, traj = dispersive_run
    rate = dyn.kdv_group_bound_rate(w)
    log0 = np.log(dyn.state_norm(w0, "L2"))
    for t, v in zip(traj.times, traj.norms["L2"]):
        assert np.log(v) <= log0 + t * rate + np.log1p(1e-6)
        checked += 1
    report(8, f"energy envelope held at {checked} trajectory points")


def test_criterion_9_space_modulated_machinery(kdv):
    """Translates cost nothing, the quadratic bound is monotone under
    cutoff refinement, and the phase-ramp example beats the unmodulated
    comparison by at least a factor 10 at domain width 200."""
    w = cnoidal_closed_form(0.75, 0.1, 0.8, n_modes=24)
    n, m = 16, 64
    u = np.tile(w.translate(0.07).values(m).real[0], n)
    dval, _ = dyn.compute_sm_distance(SampledLine(u, n, m), w)
    assert dval < 1e-8

    rng = np.random.default_rng(17)
    x = np.arange(n * m) / m
    ux = np.tile(dyn._eval_deriv(w, m), n)
    K = n * m
    cf = np.zeros(K, dtype=complex)
    cf[1:20] = rng.normal(size=19) + 1j * rng.normal(size=19)
    cf[-19:] = np.conj(cf[1:20])[::-1]
    noise = np.fft.ifft(cf).real * K
    g = ux * (0.2 * np.sin(2 * np.pi * x / n)) + 0.02 * noise / np.abs(noise).max()
    vals = []
    for cutoff in (np.pi / 16, np.pi / 8, np.pi / 4, np.pi / 2):
        v, _ = dyn.compute_sm_norm(SampledLine(g, n, m), w, "L2",
                                   cutoff=cutoff)
        vals.append(v)
    assert all(vals[i + 1] <= vals[i] * (1 + 1e-10) for i in range(3))

    # phase-ramp demonstration on 200 cells: a family member with one
    # extra period, resynchronized by a ramp whose compensating slip hides
    # in the flat trough
    wave = make_wave(0.9, 0.35, n_modes=40)
    N, M = 200, 96
    eps = 1.0 / N
    kp = wave.k * (1 + eps)
    x = np.arange(N * M) / M
    j = wave.mode_numbers
    wp = solve_profile(kdv, wave, targets=(np.array([0.0]), kp),
                       quad_target=wave.params[1], report_tol=1e-8)
    uvals = _kernels.nufft_eval(wp.coeffs[0], 2 * np.pi * j.astype(float),
                                (1 + eps) * x).real
    uline = SampledLine(uvals, N, M)
    ub = np.tile(wave.values(M).real[0], N)
    plain = dyn._values_norm((uvals - ub)[None], 1.0 / M, "L2")
    trough = np.argmin(wave.values(M).real[0]) / M
    jump = N / (N + 1.0)
    ell = 0.25
    c = 100 + trough - ell / 2
    s = np.clip((x - c) / ell, 0, 1)
    psi = eps * x / (1 + eps) - jump * (3 * s**2 - 2 * s**3)
    val, _ = dyn.sm_distance_objective(uline, wave, psi, "L2")
    ratio = plain / val
    assert ratio >= 10.0
    report(9, f"translate distance {dval:.1e}; cutoff-monotone bounds "
              f"{np.round(vals, 4).tolist()}; ramp ratio {ratio:.1f}x")


def test_criterion_10_effective_data(kdv):
    """The Jacobian correction vanishes exactly for unmodulated data, and
    the ramp case matches independent per-cell Simpson quadrature at second
    order under grid refinement."""
    w = cnoidal_closed_form(0.75, 0.1, 0.8, n_modes=24)
    n, m = 16, 64
    bump = dyn.gaussian_bump(n, m, width_cells=2.0, amplitude=0.05,
                             zero_mean=True).values
    u0v = np.tile(w.values(m).real, (1, n)) + bump
    mf = wh.effective_data(SampledLine(u0v, n, m), None, w)
    expected = w.mean()[:, None] + wh._cell_average(bump, n, m)
    exact_err = float(np.abs(mf.M - expected).max())
    assert exact_err < 1e-12
    assert np.abs(mf.kappa - w.k).max() < 1e-12

    from scipy.integrate import simpson
    n = 24
    errs = []
    for m_pts in (64, 128):
        K = n * m_pts
        x = np.arange(K) / m_pts
        psi0 = 0.35 * np.sin(2 * np.pi * x / n)
        u0 = SampledLine(np.tile(w.values(m_pts).real, (1, n)), n, m_pts)
        mf = wh.effective_data(u0, psi0, w)
        Mbar = w.mean()[0]
        j = w.mode_numbers
        oracle = np.empty(n)
        mfine = 8 * m_pts
        for cell in range(n):
            xs = cell + np.arange(mfine + 1) / mfine
            Psi = wh.invert_phase_map(psi0, n, m_pts, xs)
            pxf = wh._periodic_interp(dyn._spectral_dx(psi0, 1.0 / m_pts),
                                      m_pts, Psi)
            dPsi = 1.0 / (1.0 - pxf)
            ubv = _kernels.nufft_eval(w.coeffs[0],
                                      2 * np.pi * j.astype(float), Psi).real
            u0f = wh._periodic_interp(u0.values[0], m_pts, xs)
            integrand = Mbar + u0f - ubv + (1.0 / dPsi - 1.0) * (ubv - Mbar)
            oracle[cell] = simpson(integrand, x=xs)
        errs.append(np.abs(mf.M[0] - oracle).max())
    assert errs[1] < 0.3 * errs[0]
    report(10, f"unmodulated case exact ({exact_err:.1e}); ramp-vs-oracle "
               f"errors {errs[0]:.2e} -> {errs[1]:.2e} under refinement")


def test_criterion_11_large_branch_asymptotics(kdv, full_sweeps):
    """Third-derivative estimates on line branches j = 5..10 converge to
    the limit singled out by the constant-coefficient control (6 k^3 under
    this gluing) within 5 percent."""
    const = constant_kdv_profile(0.3, wave_set_k := full_sweeps[1][0].k, 0.45)
    grid = fl.symmetric_xi_grid(41)
    cspec = fl.sweep(kdv, const, grid, 16, 24, refine=False)
    ccurves = fl.track_curves(cspec)
    for c in ccurves:
        c.classification = "line"
    cres = fl.large_branch_asymptotics(ccurves, const.k, (5, 10))
    assert cres["resolved_normalization"] == "6k^3"
    assert cres["final_relative_error"] < 1e-6

    lines = []
    for w, spec, curves, cls in full_sweeps:
        res = fl.large_branch_asymptotics(curves, w.k, (5, 10))
        target = 6.0 * w.k**3
        vals = np.array(list(res["estimates"].values()))
        rel = np.abs(vals - target).max() / target
        assert res["resolved_normalization"] == "6k^3"
        assert rel < 0.05
        lines.append(f"m={w.meta['modulus']}: max dev {rel:.2%}")
    report(11, "control resolves 6k^3; " + "; ".join(lines))
