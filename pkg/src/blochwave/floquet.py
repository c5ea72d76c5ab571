"""Bloch fiber operators by Fourier collocation, spectra over the Floquet
exponent, curve tracking, and the critical expansion at xi = 0.

The fiber operator at Floquet exponent xi acts on period-one functions in
the basis exp(2i pi j x), |j| <= N_F.  Writing D_xi = diag(i(xi + 2 pi j)),

    KdV:        L_xi = -omega D_xi - k D_xi Mult(U) - k^3 D_xi^3
    parabolic:  L_xi = -omega D_xi - k D_xi Mult(df(U)) + k^2 D_xi^2 (x) D

where Mult is the Toeplitz convolution by the periodic coefficient.  Two
standard safeguards are built in: eigenvalues are kept only when they match
between two truncations (spurious-mode filter), and eigenvalues near the
origin can be recomputed through a resolvent (shift-invert), which removes
the O(eps * ||L||) dense-solver noise that otherwise pollutes the
Jordan-block cluster at the origin.

Slopes of the critical curves at xi = 0 are eigenvalues of an exact
first-order pencil on the generalized kernel.  The phase direction U_x is
rescaled by i xi, which draws the wavenumber family direction into the
reduction through the identity

    A1 U_x + k L_0 (d U / d k) = (k domega/dk - omega) U_x,

valid for conservative fluxes (A1 is the first derivative of the fiber
family in i xi).  Curvatures and third derivatives come from
Richardson-extrapolated finite differences on shift-invert refined
branches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .profiles import WaveProfile, family_derivatives
from .systems import SystemSpec

__all__ = [
    "FiberMatrix",
    "FloquetSpectrum",
    "SpectralCurve",
    "CriticalExpansion",
    "assemble_fiber",
    "assemble_fibers",
    "eig_fiber",
    "sweep",
    "symmetric_xi_grid",
    "track_curves",
    "classify_curves",
    "critical_expansion",
    "large_branch_asymptotics",
    "spectrum_to_csv",
    "figure_data_csv",
]


class FiberTruncationError(ValueError):
    """The requested truncation cannot represent the wave's active modes."""


class EigenSolveError(RuntimeError):
    def __init__(self, msg, xi):
        super().__init__(msg)
        self.xi = xi


class CurveTrackingError(RuntimeError):
    def __init__(self, msg, xi):
        super().__init__(msg)
        self.xi = xi


@dataclass(frozen=True)
class FiberMatrix:
    xi: float
    matrix: np.ndarray
    truncation: int
    d: int

    @property
    def modes(self):
        return np.arange(-self.truncation, self.truncation + 1)


def _active_mode_check(wave: WaveProfile, n_fourier, active_tol=1e-10):
    n = wave.n_modes
    if n <= n_fourier:
        return
    c = np.abs(wave.coeffs)
    cmax = c.max()
    j = np.abs(wave.mode_numbers)
    beyond = c[:, j > n_fourier]
    if beyond.size and beyond.max() > active_tol * cmax:
        raise FiberTruncationError(
            f"truncation N_F={n_fourier} drops active profile modes "
            f"(relative size {beyond.max() / cmax:.2e}); increase N_F")


def _conv_table_kdv(wave: WaveProfile, span):
    """Profile Fourier coefficients indexable at offsets -span..span."""
    out = np.zeros(2 * span + 1, dtype=complex)
    n = wave.n_modes
    lo = max(-span, -n)
    hi = min(span, n)
    out[lo + span:hi + span + 1] = wave.coeffs[0, lo + n:hi + n + 1]
    return out


def _conv_table_parabolic(system, wave: WaveProfile, span):
    """Fourier coefficients of each entry of df(U), offsets -span..span."""
    n_eval = max(1024, 4 * (span + wave.n_modes))
    vals = wave.values(n_eval).real
    df = system.eval_dflux(vals)                       # (d, d, n_eval)
    ch = np.fft.fft(df, axis=-1) / n_eval
    idx = np.arange(-span, span + 1) % n_eval
    return ch[:, :, idx]


def assemble_fibers(system: SystemSpec, wave: WaveProfile, xis, n_fourier):
    """Dense fiber matrices at each Floquet exponent, shape (nxi, dn, dn)."""
    if n_fourier < 8:
        raise ValueError("truncation below 8 modes is never adequate here")
    _active_mode_check(wave, n_fourier)
    xis = np.atleast_1d(np.asarray(xis, dtype=float))
    modes = np.arange(-n_fourier, n_fourier + 1)
    span = 2 * n_fourier
    if system.kind == "kdv":
        conv = _conv_table_kdv(wave, span)
        return _kernels.assemble_kdv_fibers(xis, modes, conv, span,
                                            wave.omega, wave.k)
    conv = _conv_table_parabolic(system, wave, span)
    return _kernels.assemble_parabolic_fibers(xis, modes, conv, span,
                                              wave.omega, wave.k,
                                              system.diffusion)


def assemble_fiber(system, wave, xi, n_fourier) -> FiberMatrix:
    mats = assemble_fibers(system, wave, [xi], n_fourier)
    return FiberMatrix(float(xi), mats[0], n_fourier, system.d)


def _sorted_eig(A, vectors=False):
    if vectors:
        w, V = np.linalg.eig(A)
        order = np.lexsort((w.real, w.imag))
        return w[order], V[:, order]
    w = np.linalg.eigvals(A)
    return w[np.lexsort((w.real, w.imag))]


def eig_fiber(fiber: FiberMatrix, vectors=False):
    """Dense eigendecomposition, sorted by imaginary then real part."""
    try:
        return _sorted_eig(fiber.matrix, vectors=vectors)
    except np.linalg.LinAlgError as exc:
        raise EigenSolveError(f"dense eigensolver failed: {exc}", fiber.xi)


def _refine_small(A, w, shift, radius):
    """Recompute eigenvalues within `radius` of zero via (A - shift)^(-1).

    The resolvent's backward error scales with the local eigenvalue size
    instead of ||A||, so near-zero eigenvalues come back at ~1e-12 where the
    direct solve leaves 1e-8 noise.  Returns a copy of w with refined
    values substituted (greedy nearest match).
    """
    sel = np.abs(w) <= radius
    if not np.any(sel):
        return w
    n = A.shape[0]
    lu, piv = sla.lu_factor(A - shift * np.eye(n))
    B = sla.lu_solve((lu, piv), np.eye(n))
    nu = np.linalg.eigvals(B)
    cand = shift + 1.0 / nu
    cand = cand[np.abs(cand) <= 2.0 * radius + abs(shift)]
    out = w.copy()
    idxs = np.flatnonzero(sel)
    used = np.zeros(cand.size, dtype=bool)
    for i in idxs:
        if not cand.size:
            break
        d = np.abs(cand - w[i])
        d[used] = np.inf
        jbest = int(np.argmin(d))
        if np.isfinite(d[jbest]) and d[jbest] < 0.2 * radius + 1e-3:
            out[i] = cand[jbest]
            used[jbest] = True
    return out


@dataclass
class FloquetSpectrum:
    """Eigenvalues over a Floquet grid with a dual-truncation resolution mask."""

    xi: np.ndarray
    lams: np.ndarray          # (nxi, n) complex, at the lower truncation
    resolved: np.ndarray      # (nxi, n) bool
    truncations: tuple
    meta: dict = field(default_factory=dict)

    def resolved_pairs(self):
        xi_rep = np.repeat(self.xi, self.lams.shape[1])[self.resolved.ravel()]
        return xi_rep, self.lams[self.resolved]

    @property
    def n_xi(self):
        return self.xi.size


def symmetric_xi_grid(count):
    """Odd-count grid 2 pi m / count - pi, symmetric under xi -> -xi and
    excluding 0, where the Jordan cluster makes raw eigenvalues meaningless."""
    if count % 2 == 0:
        count += 1
    return 2.0 * np.pi * np.arange(count) / count - np.pi


def sweep(system, wave, xi_grid, n_fourier, n_fourier2=None,
          filter_atol=1e-6, filter_rtol=1e-6, refine=True,
          refine_radius=0.6, shift=0.35) -> FloquetSpectrum:
    """Eigenvalues at two truncations with cross-truncation matching.

    An eigenvalue of the N_F problem is `resolved` when the N_F2 problem
    has a partner within filter_atol + filter_rtol * |lambda|; unresolved
    values are retained but masked.
    """
    xi_grid = np.asarray(xi_grid, dtype=float)
    if n_fourier2 is None:
        n_fourier2 = int(np.ceil(1.5 * n_fourier))
    if n_fourier2 <= n_fourier:
        raise ValueError("second truncation must exceed the first")
    if xi_grid.size == 0:
        n = system.d * (2 * n_fourier + 1)
        return FloquetSpectrum(xi_grid, np.zeros((0, n), complex),
                               np.zeros((0, n), bool), (n_fourier, n_fourier2))
    A1 = assemble_fibers(system, wave, xi_grid, n_fourier)
    A2 = assemble_fibers(system, wave, xi_grid, n_fourier2)
    n1 = A1.shape[1]
    lams = np.empty((xi_grid.size, n1), dtype=complex)
    resolved = np.empty((xi_grid.size, n1), dtype=bool)
    for i, xi in enumerate(xi_grid):
        try:
            w1 = _sorted_eig(A1[i])
            w2 = _sorted_eig(A2[i])
        except np.linalg.LinAlgError as exc:
            raise EigenSolveError(f"eigensolve failed at xi={xi}: {exc}", xi)
        if refine and abs(xi) > 0:
            w1 = _refine_small(A1[i], w1, shift, refine_radius)
            w2 = _refine_small(A2[i], w2, shift, refine_radius)
        dist = _kernels.match_eigenvalues(w1, w2)
        lams[i] = w1
        resolved[i] = dist <= filter_atol + filter_rtol * np.abs(w1)
    return FloquetSpectrum(xi_grid, lams, resolved, (n_fourier, n_fourier2),
                           meta={"refine": bool(refine), "shift": shift})


# ---------------------------------------------------------------------------
# curve tracking and classification


@dataclass
class SpectralCurve:
    branch_id: int
    xis: np.ndarray
    lams: np.ndarray
    classification: str = "other"

    @property
    def span(self):
        return float(np.abs(self.lams.imag).max())

    @property
    def reach(self):
        return float(np.abs(self.lams).max())

    def lambda_at_zero(self):
        """Linear extrapolation of the branch to xi = 0."""
        i = int(np.argmin(np.abs(self.xis)))
        if self.xis.size == 1:
            return self.lams[i]
        j = i + 1 if (i + 1 < self.xis.size) else i - 1
        x0, x1 = self.xis[i], self.xis[j]
        l0, l1 = self.lams[i], self.lams[j]
        return l0 + (0.0 - x0) * (l1 - l0) / (x1 - x0)


def track_curves(spec: FloquetSpectrum, max_jump=None, ambiguity_tol=1e-8):
    """Partition resolved eigenvalues into branches continuous in xi.

    Continuation uses linear prediction from the previous two samples and a
    global greedy assignment.  Two candidates closer than ambiguity_tol to
    each other (and both admissible) raise CurveTrackingError with the
    offending xi; refine the grid in that case.
    """
    nxi = spec.n_xi
    if nxi == 0:
        return []
    if max_jump is None:
        moves = []
        for i in range(nxi - 1):
            a = spec.lams[i][spec.resolved[i]]
            b = spec.lams[i + 1][spec.resolved[i + 1]]
            if a.size and b.size:
                moves.append(np.median(_kernels.match_eigenvalues(a, b)))
        max_jump = 12.0 * float(np.median(moves)) + 1e-6 if moves else np.inf

    curves = []
    active = []   # list of dicts with xis, lams lists
    for i in range(nxi):
        cand = spec.lams[i][spec.resolved[i]]
        xi = spec.xi[i]
        taken = np.zeros(cand.size, dtype=bool)
        if active and cand.size:
            preds = np.array([
                2 * br["lams"][-1] - br["lams"][-2] if len(br["lams"]) > 1
                else br["lams"][-1] for br in active])
            dist = np.abs(preds[:, None] - cand[None, :])
            order = np.argsort(dist, axis=None)
            assigned_br = np.zeros(len(active), dtype=bool)
            for flat in order:
                bi, ci = divmod(int(flat), cand.size)
                dbest = dist[bi, ci]
                if dbest > max_jump:
                    break
                if assigned_br[bi] or taken[ci]:
                    continue
                row = dist[bi].copy()
                row[taken] = np.inf
                row[ci] = np.inf
                d2 = row.min() if np.isfinite(row).any() else np.inf
                if d2 - dbest < ambiguity_tol and d2 <= max_jump:
                    raise CurveTrackingError(
                        f"ambiguous branch continuation at xi={xi:.6f} "
                        f"(candidates {dbest:.3e} and {d2:.3e} apart); "
                        "refine the xi grid", xi)
                active[bi]["xis"].append(xi)
                active[bi]["lams"].append(cand[ci])
                assigned_br[bi] = True
                taken[ci] = True
            survivors = []
            for bi, br in enumerate(active):
                if assigned_br[bi]:
                    survivors.append(br)
                else:
                    curves.append(br)
            active = survivors
        for ci in np.flatnonzero(~taken):
            active.append({"xis": [xi], "lams": [cand[ci]]})
    curves.extend(active)
    out = [SpectralCurve(b, np.array(c["xis"]), np.array(c["lams"]))
           for b, c in enumerate(curves)]
    out.sort(key=lambda c: (-c.xis.size, c.span))
    for b, c in enumerate(out):
        c.branch_id = b
    return out


def classify_curves(curves, system: SystemSpec, crit_ratio=0.25,
                    min_samples=5):
    """Label KdV curves: the branches through the origin split into one
    line member (largest reach) and the loop pair; everything else
    resolved and long enough is line family.

    Returns {"critical": [...], "line": [...], "loop": [...], "other": [...]}
    with branch ids.
    """
    critical, line, loop, other = [], [], [], []
    for c in curves:
        if c.xis.size < min_samples:
            other.append(c.branch_id)
            c.classification = "other"
            continue
        has_both = c.xis.min() < 0 < c.xis.max()
        inner = np.abs(c.lams[np.argmin(np.abs(c.xis))])
        lam0 = np.abs(c.lambda_at_zero())
        # slope-dominated branches extrapolate far below the innermost
        # sample; curvature-dominated ones only below the branch reach
        through_zero = has_both and (lam0 < crit_ratio * max(inner, 1e-12)
                                     or lam0 < 1e-2 * max(c.reach, 1e-12))
        if through_zero:
            critical.append(c.branch_id)
            c.classification = "critical-through-zero"
        else:
            line.append(c.branch_id)
            c.classification = "line"
    if system.kind == "kdv" and len(critical) >= 3:
        by_span = sorted(critical, key=lambda b: curves[_find(curves, b)].span)
        loop = by_span[:-1][-2:]
        line_member = by_span[-1]
        line.append(line_member)
        for b in loop:
            curves[_find(curves, b)].classification = "loop"
    return {"critical": critical, "line": sorted(line), "loop": sorted(loop),
            "other": other}


def _find(curves, branch_id):
    for i, c in enumerate(curves):
        if c.branch_id == branch_id:
            return i
    raise KeyError(branch_id)


# ---------------------------------------------------------------------------
# critical expansion at xi = 0


@dataclass
class CriticalExpansion:
    multiplicity: int
    geometric_dim: int
    expected: int
    cluster_gap: float
    sv_gap: float
    jordan_ranks: list
    slopes: np.ndarray          # lambda_j'(0), from the modulation pencil
    slopes_fd: np.ndarray       # finite differences along refined branches
    slope_consistency: float    # max relative gap between the two
    curvatures: np.ndarray      # lambda_j''(0)
    third_derivs: np.ndarray    # lambda_j'''(0)
    richardson: dict            # stencil-halving disagreement per order
    degenerate_pencil: bool
    notes: list = field(default_factory=list)


def _fiber_vector(coeffs, n_fourier):
    """Stack (d, 2n+1) profile-style coefficients into the fiber basis."""
    coeffs = np.atleast_2d(coeffs)
    d = coeffs.shape[0]
    n = (coeffs.shape[1] - 1) // 2
    if n > n_fourier:
        raise FiberTruncationError("expansion truncation below profile modes")
    out = np.zeros(d * (2 * n_fourier + 1), dtype=complex)
    for a in range(d):
        out[a * (2 * n_fourier + 1) + n_fourier - n:
            a * (2 * n_fourier + 1) + n_fourier + n + 1] = coeffs[a]
    return out


def _first_order_matrices(system, wave, n_fourier):
    """A1 = d L_xi / d(i xi) and A2 = d^2 L_xi / d(i xi)^2 / 2 at xi = 0."""
    n = 2 * n_fourier + 1
    modes = np.arange(-n_fourier, n_fourier + 1)
    Dd = 2j * np.pi * modes
    span = 2 * n_fourier
    off = modes[:, None] - modes[None, :] + span
    k, om = wave.k, wave.omega
    if system.kind == "kdv":
        T = _conv_table_kdv(wave, span)[off]
        A1 = -(om * np.eye(n) + k * T) - 3.0 * k**3 * np.diag(Dd**2)
        A2 = -3.0 * k**3 * np.diag(Dd)
        return A1, A2
    d = system.d
    conv = _conv_table_parabolic(system, wave, span)
    Dm = system.diffusion
    A1 = np.zeros((d * n, d * n), dtype=complex)
    A2 = np.zeros((d * n, d * n), dtype=complex)
    for a in range(d):
        for b in range(d):
            blk = -k * conv[a, b][off]
            if a == b:
                blk = blk - om * np.eye(n)
            blk = blk + 2.0 * k**2 * Dm[a, b] * np.diag(Dd)
            A1[a * n:(a + 1) * n, b * n:(b + 1) * n] = blk
            A2[a * n:(a + 1) * n, b * n:(b + 1) * n] = k**2 * Dm[a, b] * np.eye(n)
    return A1, A2


def _pencil_slopes(system, wave, family, n_fourier):
    """Exact first-order slopes at xi = 0 via the desingularized pencil.

    Unknowns are the rescaled phase amplitude (U_x direction divided by
    i xi, which couples to k dU/dk) and the conserved-parameter directions;
    rows pair the kernel projection with the proper left kernel of L_0
    (constants for conservation laws, plus U itself for KdV).
    """
    A1, A2 = _first_order_matrices(system, wave, n_fourier)
    k, om = wave.k, wave.omega
    ux = _fiber_vector(wave.derivative_coeffs(1), n_fourier)
    pnames = list(wave.param_names)
    ts = [_fiber_vector(family.partials[nm], n_fourier) for nm in pnames]
    ns = [family.freq_partials[nm] for nm in pnames]
    tk = _fiber_vector(k * family.partials["k"], n_fourier)
    nk = family.freq_partials["k"]

    if system.kind == "kdv":
        zs = [_fiber_vector(np.zeros_like(wave.coeffs), n_fourier),
              _fiber_vector(wave.coeffs, n_fourier)]
        zs[0][n_fourier] = 1.0      # the constant function
    else:
        zs = []
        n = 2 * n_fourier + 1
        for b in range(system.d):
            z = np.zeros(system.d * n, dtype=complex)
            z[b * n + n_fourier] = 1.0
            zs.append(z)
    m = 1 + len(ts)
    X = np.zeros((m, m), dtype=complex)
    Y = np.zeros((m, m), dtype=complex)
    X[0, 0] = k * nk - om
    X[0, 1:] = ns
    Y[0, 0] = 1.0
    cols = [tk] + ts
    for r, z in enumerate(zs, start=1):
        X[r, 0] = np.vdot(z, A1 @ tk + A2 @ ux)
        for cidx, t in enumerate(ts, start=1):
            X[r, cidx] = np.vdot(z, A1 @ t)
        for cidx, col in enumerate(cols):
            Y[r, cidx] = np.vdot(z, col)
    w = sla.eigvals(X, Y)
    finite = np.isfinite(w)
    return 1j * w[finite], int(np.sum(~finite))


def _critical_branch_samples(system, wave, m, offsets, n_fourier, shift):
    """The m nearest-zero eigenvalues at each xi offset via shift-invert,
    ordered consistently by the real part of lambda / (i xi)."""
    mats = assemble_fibers(system, wave, offsets, n_fourier)
    out = np.zeros((len(offsets), m), dtype=complex)
    n = mats.shape[1]
    eye = np.eye(n)
    for i, xi in enumerate(offsets):
        lu = sla.lu_factor(mats[i] - shift * eye)
        B = sla.lu_solve(lu, eye)
        nu = np.linalg.eigvals(B)
        lam = shift + 1.0 / nu
        sel = lam[np.argsort(np.abs(lam))[:m]]
        mu = (sel / (1j * xi)).real
        out[i] = sel[np.argsort(mu)]
    return out


_D1_STENCIL = np.array([1.0, -8.0, 0.0, 8.0, -1.0])          # /(12 h)
_D2_STENCIL = np.array([-1.0, 16.0, -30.0, 16.0, -1.0])      # /(12 h^2)
_D3_STENCIL = np.array([-1.0, 8.0, -13.0, 0.0, 13.0, -8.0, 1.0])  # /(8 h^3)


def _branch_derivatives(system, wave, m, h, n_fourier, shift):
    offs = np.array([i * h for i in range(-3, 4) if i != 0])
    samp = _critical_branch_samples(system, wave, m, offs, n_fourier, shift)
    full = np.zeros((7, m), dtype=complex)
    full[:3] = samp[:3]
    full[4:] = samp[3:]
    d1 = _D1_STENCIL @ full[1:6] / (12.0 * h)
    d2 = _D2_STENCIL @ full[1:6] / (12.0 * h**2)
    d3 = _D3_STENCIL @ full / (8.0 * h**3)
    return d1, d2, d3


def critical_expansion(system: SystemSpec, wave: WaveProfile, family=None,
                       n_fourier=48, fd_steps=(1e-2, 5e-3), shift=0.35,
                       cluster_radius=1e-2, expected=None,
                       fd_solve_kw=None) -> CriticalExpansion:
    """Multiplicity, slopes, curvatures and third derivatives at xi = 0.

    Multiplicity is the eigenvalue cluster of L_0 inside cluster_radius
    (with the gap to the next eigenvalue reported); the geometric dimension
    comes from a singular-value threshold at 1e-8 ||L_0||; Jordan structure
    from rank tests of the restricted operator's powers.
    """
    if expected is None:
        expected = 3 if system.kind == "kdv" else system.d + 1
    if family is None:
        family = family_derivatives(system, wave, **(fd_solve_kw or {}))
    A0 = assemble_fibers(system, wave, [0.0], n_fourier)[0]
    nrm = float(np.linalg.norm(A0, 2))

    w0 = np.linalg.eigvals(A0)
    order = np.argsort(np.abs(w0))
    inside = np.abs(w0[order]) < cluster_radius
    mult = int(np.sum(inside))
    gap = float(np.abs(w0[order][mult]) / cluster_radius) if mult < w0.size else np.inf

    sv = np.linalg.svd(A0, compute_uv=False)
    geo = int(np.sum(sv < 1e-8 * sv[0]))
    below = sv[sv < 1e-8 * sv[0]]
    above = sv[sv >= 1e-8 * sv[0]]
    sv_gap = float(above.min() / below.max()) if below.size and above.size else np.inf

    notes = []
    if mult != expected:
        notes.append(f"multiplicity {mult} differs from expected {expected}")

    # Jordan chain structure on the invariant subspace of the cluster
    jordan_ranks = []
    try:
        TT, Z, sdim = sla.schur(A0, output="complex",
                                sort=lambda lam: abs(lam) < cluster_radius)
        if sdim:
            R0 = TT[:sdim, :sdim]
            tol_r = max(1e-6 * np.linalg.norm(R0, 2), 1e-12 * nrm)
            P = np.eye(sdim, dtype=complex)
            for _ in range(sdim):
                P = P @ R0
                r = int(np.sum(np.linalg.svd(P, compute_uv=False) > tol_r))
                jordan_ranks.append(r)
                if r == 0:
                    break
    except sla.LinAlgError:
        notes.append("Schur reduction for Jordan ranks failed")

    m = mult if mult > 0 else expected
    slopes, n_inf = _pencil_slopes(system, wave, family, n_fourier)
    degenerate = False
    if n_inf:
        degenerate = True
        notes.append(f"{n_inf} pencil eigenvalues at infinity")
    if slopes.size > 1:
        gaps = np.abs(slopes[:, None] - slopes[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() < 1e-8 * max(1.0, np.abs(slopes).max()):
            degenerate = True
            notes.append("pencil slopes not distinct within tolerance")

    h1, h2 = fd_steps
    d1a, d2a, d3a = _branch_derivatives(system, wave, m, h1, n_fourier, shift)
    d1b, d2b, d3b = _branch_derivatives(system, wave, m, h2, n_fourier, shift)
    r = (h1 / h2) ** 4
    d1 = (r * d1b - d1a) / (r - 1.0)
    d2 = (r * d2b - d2a) / (r - 1.0)
    d3 = (r * d3b - d3a) / (r - 1.0)
    scale1 = np.abs(d1).max() + 1e-300
    rich = {
        "d1": float(np.abs(d1a - d1b).max() / scale1),
        "d2": float(np.abs(d2a - d2b).max() / (np.abs(d2b).max() + scale1 * h1)),
        "d3": float(np.abs(d3a - d3b).max() / (np.abs(d3b).max() + 1e-300)),
    }

    sl_sorted = slopes[np.argsort((slopes / 1j).real)] if slopes.size else slopes
    fd_sorted = d1[np.argsort((d1 / 1j).real)]
    if sl_sorted.size == fd_sorted.size and sl_sorted.size:
        cons = float(np.max(np.abs(sl_sorted - fd_sorted) /
                            np.maximum(np.abs(sl_sorted), 1e-12)))
    else:
        cons = np.inf
        notes.append("pencil and finite-difference slope counts differ")

    return CriticalExpansion(
        multiplicity=mult, geometric_dim=geo, expected=expected,
        cluster_gap=gap, sv_gap=sv_gap, jordan_ranks=jordan_ranks,
        slopes=sl_sorted, slopes_fd=fd_sorted, slope_consistency=cons,
        curvatures=d2, third_derivs=d3, richardson=rich,
        degenerate_pencil=degenerate, notes=notes)


# ---------------------------------------------------------------------------
# large-branch asymptotics


def large_branch_asymptotics(curves, k, j_window=(5, 10), min_branches=3,
                             im_threshold=None):
    """Cubic fits of Im(lambda) on line branches indexed by the glued
    Floquet parameter theta = xi + 2 pi j; the fitted third derivative is
    compared against both candidate normalizations 6 k^3 and 6 k.

    Branch index j is inferred from the branch's extrapolated value at
    xi = 0 through |Im lambda| ~ k^3 (2 pi j)^3.
    """
    lo, hi = j_window
    if im_threshold is None:
        im_threshold = k**3 * (2 * np.pi * max(1, lo - 1)) ** 3 * 0.5
    ests = {}
    for c in curves:
        if c.classification not in ("line",) or c.xis.size < 8:
            continue
        lam0 = c.lambda_at_zero()
        if abs(lam0.imag) < im_threshold:
            continue
        j_est = int(round((abs(lam0.imag) / k**3) ** (1.0 / 3.0) / (2 * np.pi)))
        if not (lo <= j_est <= hi):
            continue
        sgn = 1.0 if lam0.imag > 0 else -1.0
        coef = np.polynomial.polynomial.polyfit(c.xis, c.lams.imag, 3)
        key = sgn * j_est
        ests[key] = 6.0 * float(coef[3])
    if len(ests) < min_branches:
        raise ValueError(
            f"only {len(ests)} usable line branches in j window {j_window}; "
            "need at least {0}".format(min_branches))
    js = sorted(ests, key=abs)
    vals = np.array([ests[j] for j in js])
    c_cubic = 6.0 * k**3
    c_linear = 6.0 * k
    err_cubic = float(abs(vals[-1] - c_cubic) / abs(c_cubic))
    err_linear = float(abs(vals[-1] - c_linear) / abs(c_linear))
    resolved = "6k^3" if err_cubic <= err_linear else "6k"
    return {
        "estimates": {int(j): float(ests[j]) for j in js},
        "limit_candidates": {"6k^3": c_cubic, "6k": c_linear},
        "resolved_normalization": resolved,
        "final_relative_error": min(err_cubic, err_linear),
    }


# ---------------------------------------------------------------------------
# exports


def spectrum_to_csv(spec: FloquetSpectrum, path, curves=None):
    """Rows: xi, re_lambda, im_lambda, branch_id, resolved."""
    branch_of = {}
    if curves:
        for c in curves:
            for xi, lam in zip(c.xis, c.lams):
                branch_of[(float(xi), complex(lam))] = c.branch_id
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "re_lambda", "im_lambda", "branch_id", "resolved"])
        for i, xi in enumerate(spec.xi):
            for lam, ok in zip(spec.lams[i], spec.resolved[i]):
                bid = branch_of.get((float(xi), complex(lam)), -1)
                w.writerow([repr(float(xi)), repr(float(lam.real)),
                            repr(float(lam.imag)), bid, int(ok)])


def figure_data_csv(curves, path):
    """Rows: im_lambda, xi, branch_class, matching the spectrum figure layout."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["im_lambda", "xi", "branch_class"])
        for c in curves:
            for xi, lam in zip(c.xis, c.lams):
                w.writerow([repr(float(lam.imag)), repr(float(xi)),
                            c.classification])
