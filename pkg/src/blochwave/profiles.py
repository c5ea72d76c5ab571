"""Periodic traveling-wave profiles and their parameter families.

Profiles are stored as truncated Fourier series on the unit cell.  The
once-integrated profile system (period normalized to one, wavenumber k,
frequency omega, integration constants q) is

    KdV:        k^3 U'' + k U^2/2 + omega U = q
    parabolic:  omega U + k f(U) - k^2 D U' = q     (componentwise)

Newton corrections run on a collocation grid with spectral differentiation.
Translation invariance is removed by requiring the first sine coefficient
of component one to vanish.  The KdV family carries two conserved
parameters, the cell mean M and the quadratic average P = mean(U^2)/2,
besides the wavenumber; parabolic families carry the d cell means and the
wavenumber.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ellipe, ellipj, ellipk

from .systems import SystemSpec

__all__ = [
    "WaveProfile",
    "WaveFamily",
    "ContinuationResult",
    "cnoidal_closed_form",
    "solve_profile",
    "continue_family",
    "family_derivatives",
    "residual_collocation",
    "save_profile",
    "load_profile",
    "phase_align",
]

_MACHINE_RTOL = 5e-15


class ProfileError(RuntimeError):
    pass


class NewtonDivergenceError(ProfileError):
    def __init__(self, msg, residual=None, cond=None):
        super().__init__(msg)
        self.residual = residual
        self.cond = cond


class SingularJacobianError(ProfileError):
    def __init__(self, msg, cond):
        super().__init__(msg)
        self.cond = cond


@dataclass(frozen=True)
class WaveProfile:
    """One periodic wave: Fourier data plus family parameters.

    coeffs has shape (d, 2*n_modes+1) with mode numbers -n_modes..n_modes;
    real profiles have Hermitian-symmetric coefficients.  params holds the
    conserved family coordinates named in param_names ("M", "P" for KdV,
    "M1".."Md" for parabolic systems).
    """

    kind: str
    d: int
    coeffs: np.ndarray
    k: float
    omega: float
    params: np.ndarray
    param_names: tuple
    constants: np.ndarray
    residual: float
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if c.shape[0] != self.d or c.shape[1] % 2 != 1:
            raise ValueError("coeffs must be (d, 2*n_modes+1)")
        if self.k <= 0:
            raise ValueError("wavenumber must be positive")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        object.__setattr__(self, "constants", np.asarray(self.constants, dtype=float))

    @property
    def speed(self):
        return -self.omega / self.k

    @property
    def n_modes(self):
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def mode_numbers(self):
        n = self.n_modes
        return np.arange(-n, n + 1)

    def values(self, n_pts):
        """Profile sampled at i/n_pts, i = 0..n_pts-1, shape (d, n_pts)."""
        return _eval_series(self.coeffs, n_pts)

    def derivative_coeffs(self, order=1):
        j = self.mode_numbers
        return self.coeffs * (2j * np.pi * j) ** order

    def mean(self):
        return self.coeffs[:, self.n_modes].real.copy()

    def quad_average(self):
        """Cell average of U^2/2 (first component), exact for the series."""
        return 0.5 * float(np.sum(np.abs(self.coeffs[0]) ** 2).real)

    def translate(self, phi):
        j = self.mode_numbers
        shifted = self.coeffs * np.exp(-2j * np.pi * j * phi)
        return WaveProfile(self.kind, self.d, shifted, self.k, self.omega,
                           self.params, self.param_names, self.constants,
                           self.residual, self.degenerate, dict(self.meta))

    def amplitude(self):
        v = self.values(max(64, 4 * self.n_modes)).real
        return float(v[0].max() - v[0].min())


def _eval_series(coeffs, n_pts):
    coeffs = np.atleast_2d(coeffs)
    n = (coeffs.shape[1] - 1) // 2
    if n_pts < 2 * n + 1:
        raise ValueError(f"{n_pts} points cannot represent modes up to {n}")
    buf = np.zeros((coeffs.shape[0], n_pts), dtype=complex)
    j = np.arange(-n, n + 1)
    buf[:, j % n_pts] = coeffs
    return np.fft.ifft(buf, axis=-1) * n_pts


def _series_from_values(vals, n_modes):
    vals = np.atleast_2d(vals)
    n_pts = vals.shape[-1]
    ch = np.fft.fft(vals, axis=-1) / n_pts
    j = np.arange(-n_modes, n_modes + 1)
    return ch[:, j % n_pts]


@lru_cache(maxsize=16)
def _spectral_matrices(n_pts):
    freq = 2j * np.pi * np.fft.fftfreq(n_pts, d=1.0 / n_pts)
    F = np.fft.fft(np.eye(n_pts), axis=0)
    D1 = np.real(np.fft.ifft(freq[:, None] * F, axis=0))
    D2 = np.real(np.fft.ifft((freq**2)[:, None] * F, axis=0))
    return D1, D2


def _d1(vals):
    n_pts = vals.shape[-1]
    freq = 2j * np.pi * np.fft.fftfreq(n_pts, d=1.0 / n_pts)
    return np.real(np.fft.ifft(freq * np.fft.fft(vals, axis=-1), axis=-1))


def _d2(vals):
    n_pts = vals.shape[-1]
    freq = 2j * np.pi * np.fft.fftfreq(n_pts, d=1.0 / n_pts)
    return np.real(np.fft.ifft(freq**2 * np.fft.fft(vals, axis=-1), axis=-1))


def _profile_scale(system, U, k, omega):
    """Magnitude of the once-integrated equation terms; floors tolerances."""
    if system.kind == "kdv":
        terms = [k**3 * _d2(U), 0.5 * k * U**2, omega * U]
    else:
        terms = [omega * U, k * system.eval_flux(U),
                 k**2 * np.einsum("ab,bx->ax", system.diffusion, _d1(U))]
    return max(1.0, *(float(np.abs(t).max()) for t in terms))


# ---------------------------------------------------------------------------
# closed-form cnoidal waves


def cnoidal_closed_form(modulus, mean, amplitude, n_modes=64,
                        modulus_bounds=(1e-4, 0.97), polish=True,
                        residual_tol=1e-10):
    """KdV cnoidal wave of unit period built from the squared elliptic cosine.

    modulus is the elliptic parameter m in (0,1); mean is the cell average;
    amplitude (crest to trough, > 0) sets the wavenumber through
    k = sqrt(amplitude / (48 m K(m)^2)).  Values of m outside
    modulus_bounds are rejected: near 1 the profile approaches the solitary
    limit and the Fourier representation degrades, near 0 the wave loses
    its nonlinear character and the scaling becomes singular.
    """
    m = float(modulus)
    if not (modulus_bounds[0] <= m <= modulus_bounds[1]):
        raise ValueError(
            f"modulus {m} outside configured bounds {modulus_bounds}; "
            "the solitary and harmonic limits are ill-conditioned here")
    if amplitude <= 0:
        raise ValueError("amplitude must be positive")
    K = ellipk(m)
    E = ellipe(m)
    k = float(np.sqrt(amplitude / (48.0 * m * K**2)))
    A = amplitude
    mean_cn2 = (E - (1.0 - m) * K) / (m * K)
    beta = mean - A * mean_cn2
    omega = -k * beta - 16.0 * k**3 * K**2 * (2.0 * m - 1.0)
    q = 8.0 * k**3 * A * K**2 * (1.0 - m) + 0.5 * k * beta**2 + omega * beta

    n_samp = max(512, 8 * n_modes)
    x = np.arange(n_samp) / n_samp
    cn = ellipj(2.0 * K * x, m)[1]
    U = beta + A * cn**2
    ch = np.fft.fft(U) / n_samp
    tail = np.abs(ch[n_modes:n_samp - n_modes]).max() / np.abs(ch).max()
    if tail > 1e-10:
        raise ValueError(
            f"modulus {m} needs more than {n_modes} modes "
            f"(relative tail {tail:.1e}); raise n_modes or lower m")
    coeffs = _series_from_values(U, n_modes)
    P = float(np.mean(0.5 * U**2))

    prof = WaveProfile("kdv", 1, coeffs, k, omega, np.array([mean, P]),
                       ("M", "P"), np.array([q]), residual=np.nan,
                       meta={"modulus": m, "K": float(K), "coeff_tail": float(tail)})
    if polish:
        from .systems import kdv_system
        prof = solve_profile(kdv_system(), prof, targets=(np.array([mean]), k),
                             quad_target=P, n_modes=n_modes,
                             report_tol=residual_tol)
        prof.meta.update({"modulus": m, "K": float(K)})
    else:
        res = residual_collocation(None, prof)
        object.__setattr__(prof, "residual", res)
    return prof


# ---------------------------------------------------------------------------
# Newton solves on a collocation grid


def _newton_kdv(k, M, P, U0, om0, q0, n_pts, tol, step_tol, itmax):
    D1, D2 = _spectral_matrices(n_pts)
    x = np.arange(n_pts) / n_pts
    sinx = np.sin(2.0 * np.pi * x)
    U, om, q = U0.copy(), float(om0), float(q0)
    scale = _profile_scale(_KDV_STUB, U[None], k, om)
    tol_eff = max(tol, _MACHINE_RTOL * scale)
    best = None
    for _ in range(itmax):
        R = k**3 * _d2(U) + 0.5 * k * U**2 + om * U - q
        Fv = np.concatenate([R, [np.mean(U) - M, np.mean(0.5 * U**2) - P,
                                 np.mean(U * sinx)]])
        rn = float(np.sqrt(np.mean(R**2)) + np.abs(Fv[n_pts:]).max())
        if best is None or rn < best[0]:
            best = (rn, U.copy(), om, q)
        if rn < tol_eff:
            return U, om, q, rn
        J = np.zeros((n_pts + 3, n_pts + 2))
        J[:n_pts, :n_pts] = k**3 * D2 + np.diag(k * U + om)
        J[:n_pts, n_pts] = U
        J[:n_pts, n_pts + 1] = -1.0
        J[n_pts, :n_pts] = 1.0 / n_pts
        J[n_pts + 1, :n_pts] = U / n_pts
        J[n_pts + 2, :n_pts] = sinx / n_pts
        dx = np.linalg.lstsq(J, -Fv, rcond=None)[0]
        lam = 1.0
        for _bt in range(8):
            Ut = U + lam * dx[:n_pts]
            omt = om + lam * dx[n_pts]
            qt = q + lam * dx[n_pts + 1]
            Rt = k**3 * _d2(Ut) + 0.5 * k * Ut**2 + omt * Ut - qt
            rt = float(np.sqrt(np.mean(Rt**2))
                       + abs(np.mean(Ut) - M) + abs(np.mean(0.5 * Ut**2) - P)
                       + abs(np.mean(Ut * sinx)))
            if rt < rn or lam < 1e-3:
                break
            lam *= 0.5
        U, om, q = Ut, omt, qt
        if lam * float(np.abs(dx).max()) < step_tol * (1.0 + float(np.abs(U).max())):
            R = k**3 * _d2(U) + 0.5 * k * U**2 + om * U - q
            cons = abs(np.mean(U) - M) + abs(np.mean(0.5 * U**2) - P) \
                + abs(np.mean(U * sinx))
            if cons > 1e-8 * (1.0 + abs(M) + abs(P)):
                raise NewtonDivergenceError(
                    f"Newton stalled with constraint violation {cons:.3e}; "
                    "target parameters appear infeasible", residual=cons)
            rn = float(np.sqrt(np.mean(R**2)))
            return U, om, q, rn
    raise NewtonDivergenceError(
        f"KdV profile Newton did not converge (best residual {best[0]:.3e})",
        residual=best[0])


class _KdvStub:
    kind = "kdv"


_KDV_STUB = _KdvStub()


def _newton_parabolic(system, k, M, U0, om0, q0, n_pts, tol, step_tol, itmax):
    d = system.d
    D1, _ = _spectral_matrices(n_pts)
    Dm = system.diffusion
    x = np.arange(n_pts) / n_pts
    sinx = np.sin(2.0 * np.pi * x)
    U, om, q = U0.copy(), float(om0), np.asarray(q0, dtype=float).copy()
    scale = _profile_scale(system, U, k, om)
    tol_eff = max(tol, _MACHINE_RTOL * scale)

    def resid(U, om, q):
        return (om * U + k * system.eval_flux(U)
                - k**2 * np.einsum("ab,bx->ax", Dm, _d1(U)) - q[:, None])

    best = None
    nv = d * n_pts
    for _ in range(itmax):
        R = resid(U, om, q)
        cons = np.concatenate([U.mean(axis=1) - M, [np.mean(U[0] * sinx)]])
        rn = float(np.sqrt(np.mean(R**2)) + np.abs(cons).max())
        if best is None or rn < best[0]:
            best = (rn, U.copy(), om, q.copy())
        if rn < tol_eff:
            return U, om, q, rn
        J = np.zeros((nv + d + 1, nv + 1 + d))
        dfU = system.eval_dflux(U)                     # (d, d, n_pts)
        for a in range(d):
            ra = slice(a * n_pts, (a + 1) * n_pts)
            for b in range(d):
                cb = slice(b * n_pts, (b + 1) * n_pts)
                blk = k * np.diag(dfU[a, b]) - k**2 * Dm[a, b] * D1
                if a == b:
                    blk = blk + om * np.eye(n_pts)
                J[ra, cb] = blk
            J[ra, nv] = U[a]
            J[ra, nv + 1 + a] = -1.0
            J[nv + a, ra] = 1.0 / n_pts
        J[nv + d, :n_pts] = sinx / n_pts
        Fv = np.concatenate([R.ravel(), cons])
        try:
            dxv = np.linalg.solve(J, -Fv)
        except np.linalg.LinAlgError:
            cond = np.linalg.cond(J)
            raise SingularJacobianError(
                f"singular profile Jacobian (cond estimate {cond:.2e}); "
                "parameters may sit at a fold of the family", cond)
        lam = 1.0
        for _bt in range(8):
            Ut = U + lam * dxv[:nv].reshape(d, n_pts)
            omt = om + lam * dxv[nv]
            qt = q + lam * dxv[nv + 1:]
            Rt = resid(Ut, omt, qt)
            ct = np.concatenate([Ut.mean(axis=1) - M, [np.mean(Ut[0] * sinx)]])
            if float(np.sqrt(np.mean(Rt**2)) + np.abs(ct).max()) < rn or lam < 1e-3:
                break
            lam *= 0.5
        U, om, q = Ut, omt, qt
        if lam * float(np.abs(dxv).max()) < step_tol * (1.0 + float(np.abs(U).max())):
            cons = float(np.abs(np.concatenate(
                [U.mean(axis=1) - M, [np.mean(U[0] * sinx)]])).max())
            if cons > 1e-8 * (1.0 + float(np.abs(M).max())):
                raise NewtonDivergenceError(
                    f"Newton stalled with constraint violation {cons:.3e}; "
                    "target parameters appear infeasible", residual=cons)
            rn = float(np.sqrt(np.mean(resid(U, om, q) ** 2)))
            return U, om, q, rn
    cond = float(np.linalg.cond(J))
    if cond > 1e12:
        raise SingularJacobianError(
            f"profile Jacobian nearly singular (cond {cond:.2e}); "
            "parameters may sit at a fold of the family", cond)
    raise NewtonDivergenceError(
        f"parabolic profile Newton did not converge (best residual {best[0]:.3e})",
        residual=best[0], cond=cond)


def solve_profile(system: SystemSpec, seed, targets, quad_target=None,
                  n_modes=None, n_pts=None, tol=1e-12, step_tol=1e-13,
                  report_tol=1e-10, itmax=60) -> WaveProfile:
    """Newton-correct a seed profile to prescribed cell averages and wavenumber.

    targets is (M, k) with M of length d.  For KdV the quadratic average is
    an additional family coordinate; quad_target defaults to the seed's
    value.  Raises NewtonDivergenceError / SingularJacobianError on
    failure; the returned profile has residual below report_tol (floored by
    machine precision at the equation's own scale).
    """
    M, k = targets
    M = np.atleast_1d(np.asarray(M, dtype=float))
    k = float(k)
    if isinstance(seed, WaveProfile):
        n_modes = n_modes or seed.n_modes
        seed_coeffs, om0 = seed.coeffs, seed.omega
        q0 = seed.constants
    else:
        seed_coeffs, om0, q0 = seed
        seed_coeffs = np.atleast_2d(np.asarray(seed_coeffs, dtype=complex))
        n_modes = n_modes or (seed_coeffs.shape[1] - 1) // 2
    n_pts = n_pts or max(128, 4 * n_modes)
    U0 = _eval_series(seed_coeffs, n_pts).real

    osc = float(np.abs(U0 - U0.mean(axis=1, keepdims=True)).max())
    if osc < 1e-13 * (1.0 + float(np.abs(M).max())):
        U = np.repeat(M[:, None], n_pts, axis=1)
        if system.kind == "kdv":
            om = float(om0)
            q = np.array([om * M[0] + 0.5 * k * M[0] ** 2])
            params, names = np.array([M[0], 0.5 * M[0] ** 2]), ("M", "P")
        else:
            om = float(om0)
            q = om * M + k * system.eval_flux(M)
            params, names = M, tuple(f"M{i+1}" for i in range(system.d))
        coeffs = _series_from_values(U, n_modes)
        return WaveProfile(system.kind, system.d, coeffs, k, om, params,
                           names, q, residual=0.0, degenerate=True,
                           meta={"note": "degenerate (constant)"})

    if system.kind == "kdv":
        if quad_target is None:
            c = _series_from_values(U0, n_modes)
            quad_target = 0.5 * float(np.sum(np.abs(c[0]) ** 2))
        q0s = float(np.atleast_1d(q0)[0])
        U, om, q, rn = _newton_kdv(k, M[0], float(quad_target), U0[0], om0,
                                   q0s, n_pts, tol, step_tol, itmax)
        U = U[None]
        params, names = np.array([M[0], float(quad_target)]), ("M", "P")
        qv = np.array([q])
    else:
        if M.size != system.d:
            raise ValueError("target means must have length d")
        U, om, qv, rn = _newton_parabolic(system, k, M, U0, om0,
                                          np.atleast_1d(q0), n_pts, tol,
                                          step_tol, itmax)
        params, names = M, tuple(f"M{i+1}" for i in range(system.d))

    scale = _profile_scale(system, U, k, om)
    report_eff = max(report_tol, _MACHINE_RTOL * scale * 10.0)
    if rn > report_eff:
        raise NewtonDivergenceError(
            f"converged residual {rn:.3e} above report tolerance {report_eff:.3e}",
            residual=rn)
    coeffs = _series_from_values(U, n_modes)
    ch = np.fft.fft(U, axis=-1) / n_pts
    mid = np.abs(ch[:, n_modes:n_pts - n_modes]).max() if n_pts > 2 * n_modes else 0.0
    tail = float(mid / max(np.abs(ch).max(), 1e-300))
    return WaveProfile(system.kind, system.d, coeffs, k, float(om), params,
                       names, qv, residual=float(rn),
                       meta={"coeff_tail": tail, "n_pts": n_pts})


# ---------------------------------------------------------------------------
# continuation and family derivatives


@dataclass
class ContinuationResult:
    profiles: list
    fold: bool
    message: str = ""
    fold_info: dict = field(default_factory=dict)


def _direction_name(profile, direction):
    names = list(profile.param_names) + ["k"]
    if isinstance(direction, str):
        if direction not in names:
            raise ValueError(f"unknown direction {direction!r}; have {names}")
        return direction
    return names[direction]


def _solve_at(system, seed, name, value, **kw):
    params = dict(zip(seed.param_names, seed.params))
    k = seed.k
    if name == "k":
        k = value
    else:
        params[name] = value
    M = np.array([params[n] for n in seed.param_names if n.startswith("M")])
    quad = params.get("P")
    return solve_profile(system, seed, targets=(M, k), quad_target=quad, **kw)


def continue_family(system: SystemSpec, start: WaveProfile, direction,
                    steps, step_size, max_halvings=6, **solve_kw) -> ContinuationResult:
    """March the wave family in one parameter with step halving at failures.

    Returns all converged members; a fold flag is raised when step halving
    is exhausted, together with a condition estimate of the last Jacobian
    probe, instead of silently returning wrong parameters.
    """
    name = _direction_name(start, direction)
    profiles = [start]
    if steps == 0:
        return ContinuationResult(profiles, fold=False)
    h = float(step_size)
    value = start.params[list(start.param_names).index(name)] if name != "k" else start.k
    remaining = steps
    while remaining > 0:
        target = value + h
        seed = profiles[-1]
        if len(profiles) >= 2 and not profiles[-2].degenerate:
            prev = profiles[-2]
            frac = 1.0  # secant predictor assumes uniform steps after halving
            coeffs = seed.coeffs + frac * (seed.coeffs - prev.coeffs)
            om0 = seed.omega + frac * (seed.omega - prev.omega)
            q0 = seed.constants + frac * (seed.constants - prev.constants)
            seed = WaveProfile(seed.kind, seed.d, coeffs, seed.k, om0,
                               seed.params, seed.param_names, q0,
                               seed.residual, meta=dict(seed.meta))
        try:
            nxt = _solve_at(system, seed, name, target, **solve_kw)
        except ProfileError:
            if h / 2.0 < step_size / 2.0**max_halvings:
                info = {}
                try:
                    _solve_at(system, profiles[-1], name, value + h, **solve_kw)
                except SingularJacobianError as exc:
                    info["cond"] = exc.cond
                except ProfileError as exc:
                    info["error"] = str(exc)
                return ContinuationResult(
                    profiles, fold=True,
                    message=f"step halving exhausted at {name}={value + h:.6g}",
                    fold_info=info)
            h /= 2.0
            continue
        profiles.append(nxt)
        value = target
        remaining -= 1
    return ContinuationResult(profiles, fold=False)


@dataclass
class WaveFamily:
    """Central-difference derivatives of a wave along its parameter family."""

    center: WaveProfile
    partials: dict            # name -> coeff array (d, 2n+1)
    freq_partials: dict       # name -> d omega / d name
    translation: np.ndarray   # analytic phase derivative, coeffs of U_x
    fd_step: float
    richardson: dict          # name -> relative change when halving the step


def family_derivatives(system: SystemSpec, center: WaveProfile,
                       fd_step=1e-5, richardson=True, **solve_kw) -> WaveFamily:
    """Differentiate profile and frequency in each family parameter and k."""
    names = list(center.param_names) + ["k"]
    partials, freqs, rich = {}, {}, {}
    for name in names:
        base = center.k if name == "k" else center.params[list(center.param_names).index(name)]
        h = fd_step * max(1.0, abs(base))

        def central(hh):
            up = _solve_at(system, center, name, base + hh, **solve_kw)
            dn = _solve_at(system, center, name, base - hh, **solve_kw)
            return (up.coeffs - dn.coeffs) / (2 * hh), (up.omega - dn.omega) / (2 * hh)

        dc, dw = central(h)
        partials[name] = dc
        freqs[name] = dw
        if richardson:
            dc2, dw2 = central(h / 2.0)
            num = float(np.abs(dc - dc2).max()) + abs(dw - dw2)
            den = float(np.abs(dc2).max()) + abs(dw2) + 1e-300
            rich[name] = num / den
    translation = center.derivative_coeffs(1)
    return WaveFamily(center, partials, freqs, translation, fd_step, rich)


# ---------------------------------------------------------------------------
# independent residual oracle, persistence, alignment


def residual_collocation(system, profile: WaveProfile, n_pts=None) -> float:
    """L2 residual of the once-integrated profile system, evaluated by direct
    trigonometric collocation (independent of the solver's linear algebra)."""
    n_pts = n_pts or max(192, 4 * profile.n_modes + 1)
    j = profile.mode_numbers
    x = (np.arange(n_pts) + 0.37) / n_pts     # offset grid, not the solver's
    ph = np.exp(2j * np.pi * np.outer(x, j))
    U = (ph @ profile.coeffs.T).T.real
    k, om = profile.k, profile.omega
    if profile.kind == "kdv":
        Upp = (ph @ (profile.coeffs * (2j * np.pi * j) ** 2).T).T.real
        R = k**3 * Upp + 0.5 * k * U**2 + om * U - profile.constants[0]
        return float(np.sqrt(np.mean(R[0] ** 2)))
    Up = (ph @ (profile.coeffs * (2j * np.pi * j)).T).T.real
    R = (om * U + k * system.eval_flux(U)
         - k**2 * np.einsum("ab,bx->ax", system.diffusion, Up)
         - profile.constants[:, None])
    return float(np.sqrt(np.mean(R**2)))


def save_profile(profile: WaveProfile, path):
    """17-significant-digit JSON round trip of all profile data."""
    c = profile.coeffs
    if profile.d == 1:
        coeffs = [[v.real, v.imag] for v in c[0]]
    else:
        coeffs = [[[v.real, v.imag] for v in row] for row in c]
    doc = {
        "kind": profile.kind, "d": profile.d, "k": profile.k,
        "omega": profile.omega, "params": profile.params.tolist(),
        "param_names": list(profile.param_names),
        "constants": profile.constants.tolist(), "coeffs": coeffs,
        "residual": None if np.isnan(profile.residual) else profile.residual,
        "degenerate": profile.degenerate,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_profile(path) -> WaveProfile:
    with open(path) as fh:
        doc = json.load(fh)
    raw = doc["coeffs"]
    if doc["d"] == 1:
        coeffs = np.array([[complex(re, im) for re, im in raw]])
    else:
        coeffs = np.array([[complex(re, im) for re, im in row] for row in raw])
    return WaveProfile(doc["kind"], doc["d"], coeffs, doc["k"], doc["omega"],
                       np.array(doc["params"]), tuple(doc["param_names"]),
                       np.array(doc["constants"]),
                       residual=np.nan if doc["residual"] is None else doc["residual"],
                       degenerate=doc["degenerate"])


def phase_align(profile: WaveProfile, reference: WaveProfile, n_grid=512):
    """Translate profile to best match the reference in L2 over one period."""
    ref = reference.values(n_grid).real
    best_phi, best_err = 0.0, np.inf
    for phi in np.arange(n_grid) / n_grid:
        v = profile.translate(phi).values(n_grid).real
        err = float(np.sqrt(np.mean((v - ref) ** 2)))
        if err < best_err:
            best_phi, best_err = phi, err
    span = 1.0 / n_grid
    lo, hi = best_phi - span, best_phi + span
    for _ in range(40):
        mid1 = lo + (hi - lo) / 3
        mid2 = hi - (hi - lo) / 3
        e1 = float(np.sqrt(np.mean((profile.translate(mid1).values(n_grid).real - ref) ** 2)))
        e2 = float(np.sqrt(np.mean((profile.translate(mid2).values(n_grid).real - ref) ** 2)))
        if e1 < e2:
            hi = mid2
        else:
            lo = mid1
    phi = 0.5 * (lo + hi)
    return profile.translate(phi)
