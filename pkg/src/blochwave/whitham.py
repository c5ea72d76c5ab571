"""First-order averaged (modulation) dynamics built from a wave family.

The averaged maps tabulate, over a patch of the wave family, the cell
averages that drive slow modulations: the averaged flux F, the frequency
omega = -k c, and for KdV additionally the impulse flux

    G(M, P, k) = <U^3/3> - (3/2) k^2 <(U')^2>,

so the KdV field vector is (M, P, kappa) with fluxes (P, G, -omega) and a
parabolic system's field vector is (M_1..M_d, kappa) with fluxes
(F_1..F_d, -omega), all in the original frame.  In the co-moving frame of a
reference wave (kbar, omegabar) every conservation law q_t + (phi)_x = 0
transforms to q_t + (omegabar q + kbar phi)_x = 0, which is how the
first-order system is integrated for comparisons against moving-frame
simulations.  The second-order closure coefficients are not computed here;
an explicit scalar artificial viscosity stands in for them and its
refinement behavior is reported.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import _kernels
from .bloch import SampledLine
from .dynamics import Trajectory, _values_norm, compute_sm_norm, _spectral_dx
from .profiles import WaveProfile, solve_profile
from .systems import SystemSpec

__all__ = [
    "AveragedMaps", "ModulationField", "WhithamRun",
    "tabulate_averages", "constant_state_maps", "characteristic_matrix",
    "effective_data", "solve_whitham", "extract_modulation", "compare",
    "moving_frame_slope_map",
]


class TabulationError(RuntimeError):
    def __init__(self, msg, failed_nodes):
        super().__init__(msg)
        self.failed_nodes = failed_nodes


@dataclass
class AveragedMaps:
    """Tabulated averaged flux and frequency over a family patch."""

    kind: str
    axis_names: tuple            # family parameters, wavenumber named "k" last
    axes: tuple                  # 1d arrays
    flux_names: tuple
    flux_tables: np.ndarray      # (n_flux,) + grid shape
    omega_table: np.ndarray
    c_table: np.ndarray
    loo_error: float = np.nan
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._interp = None

    def _interpolators(self):
        if self._interp is None:
            method = "cubic" if all(a.size >= 4 for a in self.axes) else "linear"
            mk = lambda tab: RegularGridInterpolator(
                self.axes, tab, method=method, bounds_error=False,
                fill_value=None)
            self._interp = ([mk(t) for t in self.flux_tables], mk(self.omega_table))
        return self._interp

    def flux(self, pt):
        """Original-frame flux vector of the field system at pt (fields in
        axis order, wavenumber last): (F_components..., -omega)."""
        fls, om = self._interpolators()
        pt = np.atleast_2d(pt)
        out = np.stack([f(pt) for f in fls] + [-om(pt)], axis=-1)
        return out[0] if out.shape[0] == 1 else out

    def omega(self, pt):
        return self._interpolators()[1](np.atleast_2d(pt))[0]

    def to_json(self, path):
        doc = {
            "kind": self.kind, "axis_names": list(self.axis_names),
            "axes": [a.tolist() for a in self.axes],
            "flux_names": list(self.flux_names),
            "flux_tables": self.flux_tables.tolist(),
            "omega_table": self.omega_table.tolist(),
            "c_table": self.c_table.tolist(),
            "loo_error": None if np.isnan(self.loo_error) else self.loo_error,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        return cls(doc["kind"], tuple(doc["axis_names"]),
                   tuple(np.array(a) for a in doc["axes"]),
                   tuple(doc["flux_names"]), np.array(doc["flux_tables"]),
                   np.array(doc["omega_table"]), np.array(doc["c_table"]),
                   np.nan if doc["loo_error"] is None else doc["loo_error"])


def _profile_averages(system, prof: WaveProfile):
    n_pts = max(256, 4 * prof.n_modes)
    vals = prof.values(n_pts).real
    if system.kind == "kdv":
        j = prof.mode_numbers
        upc = prof.coeffs[0] * (2j * np.pi * j)
        up2 = float(np.sum(np.abs(upc) ** 2).real)         # <(U')^2>
        G = float(np.mean(vals[0] ** 3) / 3.0) - 1.5 * prof.k**2 * up2
        return np.array([prof.quad_average(), G])
    return system.eval_flux(vals).mean(axis=-1)


def tabulate_averages(system: SystemSpec, center: WaveProfile, spans,
                      counts, solve_kw=None) -> AveragedMaps:
    """Solve the family on a tensor grid around the center and tabulate.

    spans maps parameter name (including "k") to the half-width of the
    patch; counts to the number of nodes per axis.  Nodes are solved
    marching outward, each seeded from its nearest solved neighbor, and any
    failure aborts with the list of failed nodes.
    """
    solve_kw = solve_kw or {}
    names = list(center.param_names) + ["k"]
    axes, centers = [], []
    for nm in names:
        base = center.k if nm == "k" else center.params[list(center.param_names).index(nm)]
        cnt = counts[nm] if isinstance(counts, dict) else counts
        axes.append(base + np.linspace(-spans[nm], spans[nm], cnt))
        centers.append(base)
    shape = tuple(a.size for a in axes)
    flux_names = ("P", "G") if system.kind == "kdv" else \
        tuple(f"F{i+1}" for i in range(system.d))
    flux_tables = np.full((len(flux_names),) + shape, np.nan)
    omega_table = np.full(shape, np.nan)
    c_table = np.full(shape, np.nan)

    center_idx = tuple(int(np.argmin(np.abs(a - c0))) for a, c0 in zip(axes, centers))
    todo = sorted(product(*(range(s) for s in shape)),
                  key=lambda idx: sum(abs(i - c) for i, c in zip(idx, center_idx)))
    solved = {}
    failed = []
    for idx in todo:
        target = {nm: axes[ai][idx[ai]] for ai, nm in enumerate(names)}
        if solved:
            seed_idx = min(solved, key=lambda s: sum(abs(a - b) for a, b in zip(s, idx)))
            seed = solved[seed_idx]
        else:
            seed = center
        M = np.array([target[nm] for nm in names if nm.startswith("M")])
        try:
            prof = solve_profile(system, seed, targets=(M, target["k"]),
                                 quad_target=target.get("P"), **solve_kw)
        except Exception as exc:
            failed.append((idx, str(exc)))
            continue
        solved[idx] = prof
        flux_tables[(slice(None),) + idx] = _profile_averages(system, prof)
        omega_table[idx] = prof.omega
        c_table[idx] = prof.speed
    if failed:
        raise TabulationError(
            f"{len(failed)} family nodes failed to solve", failed)

    loo = _leave_one_out(axes, omega_table, flux_tables)
    return AveragedMaps(system.kind, tuple(names), tuple(axes), flux_names,
                        flux_tables, omega_table, c_table, loo)


def _leave_one_out(axes, omega_table, flux_tables):
    """Predict each interior node from a local quadratic fit of its
    neighbors (node excluded); returns the worst relative error."""
    shape = omega_table.shape
    nd = len(axes)
    worst = 0.0
    tables = [omega_table] + [flux_tables[i] for i in range(flux_tables.shape[0])]
    for idx in product(*(range(1, s - 1) for s in shape)):
        offs = list(product(*([-1, 0, 1],) * nd))
        pts, keep = [], []
        for off in offs:
            if all(o == 0 for o in off):
                continue
            nidx = tuple(i + o for i, o in zip(idx, off))
            pts.append([axes[a][nidx[a]] - axes[a][idx[a]] for a in range(nd)])
            keep.append(nidx)
        P = np.array(pts)
        cols = [np.ones(P.shape[0])]
        for a in range(nd):
            cols.append(P[:, a])
        for a in range(nd):
            for b in range(a, nd):
                cols.append(P[:, a] * P[:, b])
        A = np.column_stack(cols)
        for tab in tables:
            y = np.array([tab[n] for n in keep])
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            pred = coef[0]
            scale = max(abs(tab[idx]), 1e-12)
            worst = max(worst, abs(pred - tab[idx]) / scale)
    return float(worst)


def constant_state_maps(system: SystemSpec, mean, k, speed, spans, counts) -> AveragedMaps:
    """Zero-amplitude family: F(M, k) = f(M) exactly, omega = -k * speed.

    The frequency of the constant family is a convention (any speed works
    for a constant state); `speed` selects the linearization branch the
    degenerate family rides on, and the induced wavenumber-transport
    characteristic duplicates it.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    names = [f"M{i+1}" for i in range(system.d)] + ["k"]
    axes = []
    for i, nm in enumerate(names[:-1]):
        cnt = counts[nm] if isinstance(counts, dict) else counts
        axes.append(mean[i] + np.linspace(-spans[nm], spans[nm], cnt))
    cntk = counts["k"] if isinstance(counts, dict) else counts
    axes.append(k + np.linspace(-spans["k"], spans["k"], cntk))
    shape = tuple(a.size for a in axes)
    flux_tables = np.empty((system.d,) + shape)
    omega_table = np.empty(shape)
    for idx in product(*(range(s) for s in shape)):
        Mv = np.array([axes[a][idx[a]] for a in range(system.d)])
        kv = axes[-1][idx[-1]]
        flux_tables[(slice(None),) + idx] = system.eval_flux(Mv)
        omega_table[idx] = -kv * speed
    c_table = np.full(shape, speed)
    return AveragedMaps(system.kind, tuple(names), tuple(axes),
                        tuple(f"F{i+1}" for i in range(system.d)),
                        flux_tables, omega_table, c_table,
                        meta={"constant_family": True, "speed": speed})


@dataclass
class CharacteristicResult:
    matrix: np.ndarray
    speeds: np.ndarray
    hyperbolic: bool
    frame: str


def characteristic_matrix(maps: AveragedMaps, at, frame="original",
                          wave_ref=None, rel_step=0.25) -> CharacteristicResult:
    """Jacobian of the flux vector in the field variables at a family point.

    `at` maps axis names to values (the wavenumber axis doubles as the
    kappa field).  Speeds are the eigenvalues; the hyperbolicity verdict
    asks them to be real and distinct.  With frame="moving" the fluxes are
    transformed by (kbar, omegabar) = wave_ref first.
    """
    pt = np.array([at[nm] for nm in maps.axis_names], dtype=float)
    for a, (axis, x) in enumerate(zip(maps.axes, pt)):
        if not (axis.min() <= x <= axis.max()):
            raise ValueError(
                f"point {maps.axis_names[a]}={x} outside tabulated patch")
    nf = len(maps.axis_names)
    steps = [rel_step * (ax[1] - ax[0]) for ax in maps.axes]
    J = np.zeros((nf, nf))
    for col in range(nf):
        dp = np.zeros(nf)
        dp[col] = steps[col]
        fp = np.atleast_1d(maps.flux(pt + dp))
        fm = np.atleast_1d(maps.flux(pt - dp))
        J[:, col] = (fp - fm) / (2 * steps[col])
    if frame == "moving":
        if wave_ref is None:
            raise ValueError("moving frame needs wave_ref=(kbar, omegabar)")
        kbar, ombar = wave_ref
        J = ombar * np.eye(nf) + kbar * J
    speeds = np.linalg.eigvals(J)
    real = np.abs(speeds.imag).max() <= 1e-8 * (1 + np.abs(speeds).max())
    s = np.sort(speeds.real)
    distinct = s.size < 2 or np.diff(s).min() > 1e-8 * (1 + np.abs(s).max())
    order = np.argsort(speeds.real)
    return CharacteristicResult(J, speeds[order], bool(real and distinct), frame)


def moving_frame_slope_map(speeds, wave: WaveProfile):
    """Original-frame characteristic speeds mapped to the critical-curve
    slope convention: mu = -(kbar * s + omegabar), so i*mu matches
    d lambda / d xi at the origin."""
    return -(wave.k * np.asarray(speeds) + wave.omega)


# ---------------------------------------------------------------------------
# modulation fields


@dataclass
class ModulationField:
    y: np.ndarray                # slow grid, one point per cell
    M: np.ndarray                # (d, N) local averages
    kappa: np.ndarray            # (N,) local wavenumber
    psi: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.M = np.atleast_2d(self.M)
        if np.any(self.kappa <= 0):
            raise ValueError("local wavenumber must stay positive")


def _periodic_interp(values, pts_per_cell, pts, drop_tol=1e-13):
    """Trigonometric interpolation of grid samples at arbitrary points."""
    values = np.asarray(values, dtype=float)
    K = values.size
    ch = np.fft.fft(values) / K
    theta = 2.0 * np.pi * np.fft.fftfreq(K, d=1.0 / pts_per_cell)
    keep = np.abs(ch) > drop_tol * (np.abs(ch).max() + 1e-300)
    return _kernels.nufft_eval(ch[keep], theta[keep], np.asarray(pts)).real


def invert_phase_map(psi_values, n_cells, pts_per_cell, pts, tol=1e-12):
    """Psi = (Id - psi)^(-1) evaluated at pts, by fixed-point iteration
    x <- z + psi(x); requires ||psi_x||_inf < 1."""
    h = 1.0 / pts_per_cell
    px = _spectral_dx(np.asarray(psi_values, dtype=float), h)
    if np.abs(px).max() >= 1.0:
        raise ValueError("Id - psi is not invertible (|psi_x| reaches 1)")
    x = np.asarray(pts, dtype=float).copy()
    for _ in range(200):
        xn = pts + _periodic_interp(psi_values, pts_per_cell, x)
        if np.abs(xn - x).max() < tol:
            x = xn
            break
        x = xn
    return x


def _cell_average(fine_vals, n_cells, pts_per_cell):
    """Exact cell averages of the trigonometric interpolant of the samples.

    Integrating exp(i theta x) over a unit cell gives the weight
    (exp(i theta) - 1)/(i theta); folding the weighted modes onto the cell
    grid evaluates all N averages at once.  Exact for band-limited data, so
    the only error left is the sampling of the integrand itself.
    """
    v = np.atleast_2d(fine_vals)
    K = v.shape[-1]
    coef = np.fft.fft(v, axis=-1) / K
    theta = 2.0 * np.pi * np.fft.fftfreq(K, d=1.0 / pts_per_cell)
    w = np.ones_like(theta, dtype=complex)
    nz = theta != 0
    w[nz] = (np.exp(1j * theta[nz]) - 1.0) / (1j * theta[nz])
    z = coef * w
    folded = z.reshape(v.shape[0], K // n_cells, n_cells).sum(axis=1)
    return (np.fft.ifft(folded, axis=-1) * n_cells).real


def effective_data(u0: SampledLine, psi0, wave: WaveProfile) -> ModulationField:
    """Modulation data induced by (U_0, psi_0): the local wavenumber is
    kbar d_x Psi with Psi = (Id - psi_0)^(-1), and the local average adds to
    the naive difference a Jacobian correction that carries the high
    frequencies of psi_0:

        M_W = Mbar + U0 - Ubar o Psi + (1/d_x Psi - 1)(Ubar o Psi - Mbar).

    Fields are evaluated on the fine grid, then averaged cell by cell.
    """
    n, m = u0.n_cells, u0.pts_per_cell
    K = n * m
    x = np.arange(K) / m
    psi0 = np.zeros(K) if psi0 is None else np.asarray(psi0, dtype=float)
    vals = np.atleast_2d(u0.values).real

    Psi = invert_phase_map(psi0, n, m, x)
    px_at_Psi = _periodic_interp(_spectral_dx(psi0, 1.0 / m), m, Psi)
    dPsi = 1.0 / (1.0 - px_at_Psi)

    j = wave.mode_numbers
    thetas = 2.0 * np.pi * j.astype(float)
    ub_at_Psi = np.stack([
        _kernels.nufft_eval(wave.coeffs[a], thetas, Psi).real
        for a in range(wave.d)])
    Mbar = wave.mean()[:, None]
    MW = Mbar + vals - ub_at_Psi + (1.0 / dPsi - 1.0) * (ub_at_Psi - Mbar)
    kW = wave.k * dPsi

    y = np.arange(n) + 0.5
    return ModulationField(y, _cell_average(MW, n, m),
                           _cell_average(kW, n, m)[0],
                           psi=_cell_average(psi0, n, m)[0],
                           extras={"fine_kappa": kW, "fine_M": MW})


# ---------------------------------------------------------------------------
# first-order integration with artificial viscosity


@dataclass
class WhithamRun:
    times: np.ndarray
    fields: np.ndarray           # (T, n_fields, N)
    psi_w: np.ndarray | None
    field_names: tuple
    shock: bool = False
    truncated_at: float | None = None
    meta: dict = field(default_factory=dict)


def _patch_speed_bound(maps: AveragedMaps, frame, wave_ref):
    bound = 0.0
    grids = np.meshgrid(*maps.axes, indexing="ij")
    shape = maps.omega_table.shape
    idxs = list(product(*(range(0, s, max(1, s // 3)) for s in shape)))
    for idx in idxs:
        at = {nm: grids[a][idx] for a, nm in enumerate(maps.axis_names)}
        try:
            res = characteristic_matrix(maps, at, frame=frame, wave_ref=wave_ref)
            bound = max(bound, float(np.abs(res.speeds.real).max()))
        except ValueError:
            continue
    return bound if bound > 0 else 1.0


def solve_whitham(maps: AveragedMaps, init: ModulationField, times, nu_art,
                  frame="moving", wave_ref=None, cfl=0.4,
                  shock_factor=20.0) -> WhithamRun:
    """Integrate the first-order averaged system with local Lax-Friedrichs
    fluxes, explicit artificial viscosity nu_art, and Heun time stepping.

    The genuine second-order closure coefficients are out of reach here;
    nu_art stands in for them, so smooth-regime solutions depend on it at
    O(nu_art) and runs should be repeated under nu_art refinement.  The
    phase is recovered alongside by integrating Psi_t = omega(M, kappa)
    (transformed to the moving frame when requested).
    """
    if frame == "moving" and wave_ref is None:
        raise ValueError("moving frame needs wave_ref=(kbar, omegabar)")
    names = maps.axis_names
    nf = len(names)
    N = init.kappa.size
    w = np.empty((nf, N))
    rows = {nm: i for i, nm in enumerate(names)}
    for a in range(init.M.shape[0]):
        w[rows[f"M{a+1}"] if f"M{a+1}" in rows else rows["M"]] = init.M[a]
    if "P" in rows:
        if "P" not in init.extras:
            raise ValueError("KdV initialization needs a quadratic-average field")
        w[rows["P"]] = init.extras["P"]
    w[rows["k"]] = init.kappa

    kbar, ombar = wave_ref if wave_ref is not None else (None, None)
    dy = 1.0
    amax = _patch_speed_bound(maps, frame, wave_ref) * 1.5
    dt = cfl * dy / amax
    times = np.asarray(times, dtype=float)

    Psi = None
    if init.psi is not None:
        x0 = init.y
        Psi = invert_phase_map_coarse(init.psi, x0)

    def flux_of(wv):
        pts = wv.T
        fl = np.atleast_2d(maps.flux(pts))
        if frame == "moving":
            fl = ombar * wv.T + kbar * fl
        return fl.T

    def rhs(wv):
        fl = flux_of(wv)
        a_loc = amax
        fplus = 0.5 * (fl + np.roll(fl, -1, axis=1)) \
            - 0.5 * a_loc * (np.roll(wv, -1, axis=1) - wv)
        div = (fplus - np.roll(fplus, 1, axis=1)) / dy
        visc = nu_art * (np.roll(wv, -1, axis=1) - 2 * wv + np.roll(wv, 1, axis=1)) / dy**2
        return -div + visc

    def omega_of(wv):
        return np.array([maps.omega(p) for p in wv.T])

    grad0 = np.abs(np.diff(w, axis=1)).max() + 1e-12
    out_fields, out_psi, kept = [], [], []
    t_now = 0.0
    shock = False
    trunc = None
    for t_target in times:
        nsteps = int(np.ceil((t_target - t_now) / dt - 1e-12))
        for _ in range(nsteps):
            step = min(dt, t_target - t_now)
            k1 = rhs(w)
            k2 = rhs(w + step * k1)
            w_new = w + 0.5 * step * (k1 + k2)
            if Psi is not None:
                om1 = omega_of(w)
                om2 = omega_of(w_new)
                if frame == "moving":
                    om1 = om1 - ombar * w[rows["k"]] / kbar
                    om2 = om2 - ombar * w_new[rows["k"]] / kbar
                Psi = Psi + 0.5 * step * (om1 + om2)
            w = w_new
            t_now += step
            if np.abs(np.diff(w, axis=1)).max() > shock_factor * grad0:
                shock = True
                trunc = t_now
                break
        if shock:
            break
        out_fields.append(w.copy())
        out_psi.append(None if Psi is None else Psi.copy())
        kept.append(t_now)
    return WhithamRun(np.array(kept), np.array(out_fields),
                      None if Psi is None else np.array(
                          [p for p in out_psi if p is not None]),
                      names, shock, trunc,
                      meta={"dt": dt, "nu_art": nu_art, "amax": amax})


def invert_phase_map_coarse(psi_coarse, y):
    """Psi on the slow grid from cell-averaged psi (fixed point as above,
    linear interpolation between cells)."""
    N = y.size
    x = y.astype(float).copy()
    for _ in range(200):
        xn = y + np.interp(x % N, np.concatenate([y, [y[0] + N]]),
                           np.concatenate([psi_coarse, [psi_coarse[0]]]))
        if np.abs(xn - x).max() < 1e-12:
            return xn
        x = xn
    return x


# ---------------------------------------------------------------------------
# extraction from trajectories and comparison


def extract_modulation(traj: Trajectory, wave: WaveProfile, cutoff=np.pi / 8,
                       linear=True):
    """Per-time modulation fields from a trajectory: psi from the
    space-modulated decomposition, kappa = kbar d_x Psi, and local averages
    in the resynchronized frame."""
    n, m = traj.n_cells, traj.pts_per_cell
    K = n * m
    x = np.arange(K) / m
    Mbar = wave.mean()[:, None]
    out = []
    for i in range(traj.times.size):
        state = traj.states[i].real
        line = SampledLine(state[0] if state.shape[0] == 1 else state, n, m)
        _, dec = compute_sm_norm(line, wave, "L2", cutoff=cutoff)
        psi = dec.psi.values
        Psi = invert_phase_map(psi, n, m, x)
        px_at = _periodic_interp(_spectral_dx(psi, 1.0 / m), m, Psi)
        kappa_fine = wave.k / (1.0 - px_at)
        if linear:
            resync = np.stack([
                _periodic_interp(dec.v_part.values if state.shape[0] == 1
                                 else dec.v_part.values[a], m, Psi)
                for a in range(state.shape[0])])
            M_fine = Mbar + resync
        else:
            resync = np.stack([_periodic_interp(state[a], m, Psi)
                               for a in range(state.shape[0])])
            M_fine = resync
        out.append(ModulationField(
            np.arange(n) + 0.5, _cell_average(M_fine, n, m),
            _cell_average(kappa_fine[None], n, m)[0],
            psi=_cell_average(psi[None], n, m)[0]))
    return out


@dataclass
class ComparisonTable:
    times: np.ndarray
    gaps: dict                    # quantity -> (T,) array of L^p gaps
    p: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "quantity", "p", "gap"])
            for name, series in self.gaps.items():
                for t, v in zip(self.times, series):
                    w.writerow([repr(float(t)), name, self.p, repr(float(v))])


def compare(full_fields, reduced: WhithamRun, p=2.0,
            quantities=("M", "kappa")) -> ComparisonTable:
    """Per-time L^p gaps between extracted and reduced modulation fields."""
    T = min(len(full_fields), reduced.times.size)
    rows = {nm: i for i, nm in enumerate(reduced.field_names)}
    gaps = {}
    h = 1.0
    for qi, q in enumerate(quantities):
        series = np.empty(T)
        for t in range(T):
            mf = full_fields[t]
            if q == "kappa":
                a = mf.kappa
                b = reduced.fields[t, rows["k"]]
            elif q == "psi":
                a = mf.psi
                b = reduced.psi_w[t]
            else:
                comp = 0 if q == "M" else int(q[1:]) - 1
                a = mf.M[comp]
                key = "M" if "M" in rows else f"M{comp+1}"
                b = reduced.fields[t, rows[key]]
            series[t] = _values_norm((a - b)[None], h, f"L{int(p)}" if not np.isinf(p) else "Linf")
        gaps[q] = series
    return ComparisonTable(reduced.times[:T], gaps, p)
