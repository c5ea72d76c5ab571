"""Mechanical verification of the spectral stability conditions with margins.

Each check consumes already-computed spectral objects and returns a record
holding the verdict and the quantitative margin that justifies it.
Unresolved eigenvalues never create a pass: when they would violate a
condition that the resolved ones satisfy, the record is flagged blocked and
the run counts as inconclusive.

Orientation note for the quadratic-decay condition: it is checked here as
the upper bound Re(lambda) <= -theta * xi^2 on spectral curves.  The
opposite inequality appears in some displayed statements of the condition,
but only this orientation encodes the diffusive decay the condition is
meant to capture; the report carries this note.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .floquet import CriticalExpansion, FloquetSpectrum

__all__ = [
    "D1Record", "D2Record", "D3Record", "HRecord", "ImagAxisRecord", "ARecord",
    "StabilityReport", "check_d1", "check_d2", "check_d3", "check_h",
    "check_imag_axis", "check_a", "report_schema", "validate_report",
]

D2_ORIENTATION_NOTE = (
    "D2 checked as Re(lambda) <= -theta*xi^2; the displayed inequality in "
    "some condition statements has the opposite orientation, which would be "
    "vacuous for diffusive decay and is treated as a typo.")


class InsufficientSweepError(ValueError):
    pass


@dataclass
class D1Record:
    verdict: bool
    worst_re: float
    worst_lambda: complex
    worst_xi: float
    zero_radius: float
    margin_floor: float
    blocked_by_unresolved: bool = False


@dataclass
class D2Record:
    verdict: bool
    theta_fit: float
    theta_global: float
    theta_floor: float
    worst_xi: float
    curvature_ratio: float = np.nan
    blocked_by_unresolved: bool = False


@dataclass
class D3Record:
    verdict: bool
    multiplicity: int
    expected: int
    informational: bool
    cluster_gap: float


@dataclass
class HRecord:
    verdict: bool
    min_gap: float
    slopes: list
    gap_tol: float


@dataclass
class ImagAxisRecord:
    verdict: bool
    max_abs_re: float
    tol: float
    blocked_by_unresolved: bool = False


@dataclass
class ARecord:
    verdict: bool
    min_abs_d3_line: float
    d3_line_location: float
    min_abs_d2_loop: float
    d2_loop_location: float
    exclusion_window: float
    richardson_line: float
    richardson_loop: float
    richardson_tol: float


def _require_sweep(spec: FloquetSpectrum, min_xi_samples):
    if spec.n_xi == 0 or not spec.resolved.any():
        raise InsufficientSweepError("empty spectrum")
    if spec.n_xi < min_xi_samples:
        raise InsufficientSweepError(
            f"sweep has {spec.n_xi} xi samples, below the configured "
            f"minimum {min_xi_samples}")


def check_d1(spec: FloquetSpectrum, zero_radius=1e-4, margin_floor=1e-8,
             min_xi_samples=16) -> D1Record:
    """Strict spectral stability away from the origin."""
    _require_sweep(spec, min_xi_samples)
    away = np.abs(spec.lams) > zero_radius
    sel = spec.resolved & away
    if not sel.any():
        raise InsufficientSweepError("no resolved eigenvalues outside the origin ball")
    res = spec.lams[sel]
    iw = int(np.argmax(res.real))
    worst = res[iw]
    xi_rep = np.repeat(spec.xi, spec.lams.shape[1]).reshape(spec.lams.shape)
    worst_xi = float(xi_rep[sel][iw])
    verdict = bool(worst.real < -margin_floor)
    blocked = False
    un = spec.lams[(~spec.resolved) & away]
    if verdict and un.size and un.real.max() >= -margin_floor:
        verdict, blocked = False, True
    return D1Record(verdict, float(worst.real), complex(worst), worst_xi,
                    zero_radius, margin_floor, blocked)


def check_d2(spec: FloquetSpectrum, curves=None, theta_floor=1e-8,
             fit_window=0.5, min_xi_samples=16) -> D2Record:
    """Quadratic decay of real parts, Re(lambda) <= -theta xi^2."""
    _require_sweep(spec, min_xi_samples)
    nz = spec.xi != 0.0
    if not nz.any():
        raise InsufficientSweepError("no data away from xi = 0")
    xi2 = spec.xi[nz, None] ** 2
    ratios = -spec.lams[nz].real / xi2
    mask = spec.resolved[nz]
    if not mask.any():
        raise InsufficientSweepError("no resolved eigenvalues near xi = 0")
    theta_global = float(ratios[mask].min())
    iw = int(np.argmin(np.where(mask, ratios, np.inf), axis=None))
    worst_xi = float(np.repeat(spec.xi[nz], spec.lams.shape[1])[iw])
    verdict = theta_global > theta_floor
    blocked = False
    un = ~spec.resolved[nz]
    if verdict and un.any() and float(ratios[un].min()) <= theta_floor:
        verdict, blocked = False, True

    # degenerate-curvature guard: on a fixed grid, decay flatter than
    # quadratic shows up as -Re/xi^2 shrinking toward xi = 0.  Compare the
    # infimum at the two innermost |xi| rings; genuine quadratic decay keeps
    # the ratio near one, a quartic profile drops it by (xi1/xi2)^2.
    absxi = np.abs(spec.xi[nz])
    rings = np.unique(np.round(absxi, 12))
    curvature_ratio = np.nan
    if rings.size >= 2:
        def ring_min(r):
            rows = np.isclose(absxi, r)
            vals = ratios[rows][mask[rows]]
            return float(vals.min()) if vals.size else np.nan
        v1, v2 = ring_min(rings[0]), ring_min(rings[1])
        if np.isfinite(v1) and np.isfinite(v2) and v2 > 0:
            curvature_ratio = v1 / v2
            if verdict and curvature_ratio < 0.5:
                verdict = False

    theta_fit = np.nan
    if curves:
        vals = []
        for c in curves:
            if c.classification != "critical-through-zero":
                continue
            m = (np.abs(c.xis) <= fit_window) & (c.xis != 0)
            if m.any():
                vals.append((-c.lams[m].real / c.xis[m] ** 2).min())
        if vals:
            theta_fit = float(min(vals))
    return D2Record(bool(verdict), theta_fit, theta_global, theta_floor,
                    worst_xi, curvature_ratio, blocked)


def check_d3(expansion: CriticalExpansion, d, kind="parabolic") -> D3Record:
    expected = 3 if kind == "kdv" else d + 1
    return D3Record(bool(expansion.multiplicity == expected),
                    expansion.multiplicity, expected,
                    informational=(kind == "kdv"),
                    cluster_gap=expansion.cluster_gap)


def check_h(expansion: CriticalExpansion, gap_tol=1e-6) -> HRecord:
    s = np.asarray(expansion.slopes)
    if s.size < 2:
        return HRecord(False, 0.0, [complex(v) for v in s], gap_tol)
    gaps = np.abs(s[:, None] - s[None, :])
    np.fill_diagonal(gaps, np.inf)
    mg = float(gaps.min())
    return HRecord(bool(mg > gap_tol), mg, [complex(v) for v in s], gap_tol)


def check_imag_axis(spec: FloquetSpectrum, tol=1e-6,
                    min_xi_samples=16) -> ImagAxisRecord:
    """Whole resolved spectrum on the imaginary axis, within tolerance."""
    _require_sweep(spec, min_xi_samples)
    res = spec.lams[spec.resolved]
    mx = float(np.abs(res.real).max())
    verdict = mx < tol
    blocked = False
    return ImagAxisRecord(bool(verdict), mx, tol, blocked)


def _uniform_runs(xis, min_len):
    """Index ranges over which the xi samples are consecutive on the grid."""
    if xis.size < min_len:
        return []
    h = np.median(np.diff(xis))
    runs, start = [], 0
    for i in range(1, xis.size):
        if abs((xis[i] - xis[i - 1]) - h) > 1e-9 + 1e-6 * abs(h):
            if i - start >= min_len:
                runs.append((start, i))
            start = i
    if xis.size - start >= min_len:
        runs.append((start, xis.size))
    return runs, h if runs else (runs, h)


def _sliding_d(vals, h, stencil, denom_pow, step=1):
    width = stencil.size
    eff = h * step
    out, locs = [], []
    sub = vals[::step]
    for s in range(sub.size - width + 1):
        out.append(float(stencil @ sub[s:s + width]) / eff**denom_pow)
        locs.append(s * step + (width // 2) * step)
    return np.array(out), np.array(locs, dtype=int)


_D2_ST = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D3_ST = np.array([-1.0, 8.0, -13.0, 0.0, 13.0, -8.0, 1.0]) / 8.0


def check_a(curves, classification, margin=1e-6, exclusion_factor=10.0,
            richardson_tol=0.25) -> ARecord:
    """Sign control of Im-derivatives: third order on the line family, second
    order on the loop away from a declared window around zero."""
    line_ids = set(classification.get("line", []))
    loop_ids = set(classification.get("loop", []))
    by_id = {c.branch_id: c for c in curves}

    d3_samples, d3_locs, rich_line = [], [], 0.0
    grid_h = None
    for b in sorted(line_ids):
        c = by_id[b]
        runs, h = _uniform_runs(c.xis, 2 * _D3_ST.size)
        grid_h = h if grid_h is None else grid_h
        for s, e in runs:
            v = c.lams[s:e].imag
            d3, locs = _sliding_d(v, h, _D3_ST, 3)
            d3_samples.extend(d3)
            d3_locs.extend(c.xis[s:e][locs])
            d3c, locsc = _sliding_d(v, h, _D3_ST, 3, step=2)
            if d3c.size:
                ref = d3[::1]
                common = min(d3c.size, d3.size)
                if common:
                    num = np.abs(d3c[:common] - d3[:2 * common:2][:common]).max()
                    rich_line = max(rich_line, num / (np.abs(d3).max() + 1e-300))
    if not d3_samples:
        raise InsufficientSweepError("no line branches long enough for third derivatives")
    d3_samples = np.array(d3_samples)
    d3_locs = np.array(d3_locs)
    if rich_line > richardson_tol:
        raise InsufficientSweepError(
            f"third derivatives unstable under stencil halving "
            f"({rich_line:.2f} relative); refine the xi grid")

    one_sign_line = (d3_samples > margin).all() or (d3_samples < -margin).all()
    i3 = int(np.argmin(np.abs(d3_samples)))

    # loop: sign constancy is per branch and per side of the excluded
    # window (the second derivative of an odd curve flips sign across zero,
    # and the two loop branches curve oppositely)
    d2_samples, d2_locs, rich_loop = [], [], 0.0
    window = np.nan
    loop_ok = True
    for b in sorted(loop_ids):
        c = by_id[b]
        runs, h = _uniform_runs(c.xis, 2 * _D2_ST.size)
        window = exclusion_factor * h
        for s, e in runs:
            v = c.lams[s:e].imag
            d2, locs = _sliding_d(v, h, _D2_ST, 2)
            xi_loc = c.xis[s:e][locs]
            keep = np.abs(xi_loc) >= window
            d2_samples.extend(d2[keep])
            d2_locs.extend(xi_loc[keep])
            for side in (xi_loc > window, xi_loc < -window):
                vals = d2[side]
                if vals.size and not ((vals > margin).all()
                                      or (vals < -margin).all()):
                    loop_ok = False
            d2c, _ = _sliding_d(v, h, _D2_ST, 2, step=2)
            if d2c.size and d2.size:
                common = min(d2c.size, d2.size)
                num = np.abs(d2c[:common] - d2[:2 * common:2][:common]).max()
                rich_loop = max(rich_loop, num / (np.abs(d2).max() + 1e-300))
    if loop_ids:
        if not d2_samples:
            raise InsufficientSweepError("loop branches too short for second derivatives")
        d2_samples = np.array(d2_samples)
        d2_locs = np.array(d2_locs)
        i2 = int(np.argmin(np.abs(d2_samples)))
        min_d2, loc2 = float(np.abs(d2_samples[i2])), float(d2_locs[i2])
    else:
        min_d2, loc2 = np.nan, np.nan

    verdict = bool(one_sign_line and loop_ok)
    return ARecord(verdict, float(np.abs(d3_samples[i3])), float(d3_locs[i3]),
                   min_d2, loc2, float(window) if loop_ids else np.nan,
                   float(rich_line), float(rich_loop), richardson_tol)


# ---------------------------------------------------------------------------
# report container


def _jsonable(x):
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and np.isnan(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


@dataclass
class StabilityReport:
    system: str
    wave: dict
    conditions: dict            # name -> record dataclass or None
    tolerances: dict
    notes: list = field(default_factory=list)

    def to_dict(self):
        out = {
            "system": self.system,
            "wave": _jsonable(self.wave),
            "tolerances": _jsonable(self.tolerances),
            "notes": list(self.notes) + [D2_ORIENTATION_NOTE],
            "conditions": {},
        }
        for name, rec in self.conditions.items():
            out["conditions"][name] = None if rec is None else _jsonable(asdict(rec))
        return out

    def to_json(self, path=None):
        doc = self.to_dict()
        validate_report(doc)
        s = json.dumps(doc, indent=2, allow_nan=False)
        if path:
            with open(path, "w") as fh:
                fh.write(s)
        return s

    def text_summary(self):
        lines = [f"stability report: system={self.system}"]
        for name, rec in self.conditions.items():
            if rec is None:
                lines.append(f"  {name:10s} skipped")
                continue
            v = getattr(rec, "verdict", None)
            tag = "PASS" if v else "FAIL"
            extra = ""
            if isinstance(rec, D1Record):
                extra = f"worst Re = {rec.worst_re:.3e} at xi = {rec.worst_xi:.4f}"
            elif isinstance(rec, D2Record):
                extra = f"theta_global = {rec.theta_global:.3e}, theta_fit = {rec.theta_fit:.3e}"
            elif isinstance(rec, D3Record):
                extra = f"multiplicity {rec.multiplicity} (expected {rec.expected})"
                if rec.informational:
                    extra += " [informational]"
            elif isinstance(rec, HRecord):
                extra = f"min slope gap = {rec.min_gap:.3e}"
            elif isinstance(rec, ImagAxisRecord):
                extra = f"max |Re| = {rec.max_abs_re:.3e}"
            elif isinstance(rec, ARecord):
                extra = (f"min |d3 Im| line = {rec.min_abs_d3_line:.3e}, "
                         f"min |d2 Im| loop = {rec.min_abs_d2_loop:.3e}")
            if getattr(rec, "blocked_by_unresolved", False):
                tag = "INCONCLUSIVE"
            lines.append(f"  {name:10s} {tag:12s} {extra}")
        for n in self.notes + [D2_ORIENTATION_NOTE]:
            lines.append(f"  note: {n}")
        return "\n".join(lines)

    @classmethod
    def from_json(cls, s):
        doc = json.loads(s)
        validate_report(doc)
        return doc


DEFAULT_CHECK_CONFIG = {
    "conditions": ["d1", "d2"],
    "n_xi": 255,
    "n_fourier": 64,
    "n_fourier2": None,
    "zero_radius": 1e-4,
    "margin_floor": 1e-8,
    "theta_floor": 1e-8,
    "imag_axis_tol": 1e-6,
    "slope_gap_tol": 1e-6,
    "expansion_n_fourier": 48,
}


def full_report(system, wave, config=None):
    """Sweep, track, expand, and run the requested condition checks.

    config overrides DEFAULT_CHECK_CONFIG entries.  Returns the report; the
    run is deterministic for a fixed config.  Resolution failures mark the
    run inconclusive instead of raising.
    """
    from . import floquet as fl

    cfg = dict(DEFAULT_CHECK_CONFIG)
    cfg.update(config or {})
    conditions = cfg["conditions"]
    records = {}
    notes = []
    inconclusive = False
    try:
        grid = fl.symmetric_xi_grid(cfg["n_xi"])
        spec = fl.sweep(system, wave, grid, cfg["n_fourier"],
                        cfg["n_fourier2"])
        curves = fl.track_curves(spec)
        cls = fl.classify_curves(curves, system)
        expansion = None
        if {"d3", "h"} & set(conditions):
            rep_tol = 1e-8
            if np.isfinite(wave.residual):
                rep_tol = max(rep_tol, wave.residual * 10)
            expansion = fl.critical_expansion(
                system, wave, n_fourier=cfg["expansion_n_fourier"],
                fd_solve_kw={"report_tol": rep_tol})
        if "d1" in conditions:
            records["d1"] = check_d1(spec, cfg["zero_radius"],
                                     cfg["margin_floor"])
        if "d2" in conditions:
            records["d2"] = check_d2(spec, curves, cfg["theta_floor"])
        if "d3" in conditions:
            records["d3"] = check_d3(expansion, system.d, system.kind)
        if "h" in conditions:
            records["h"] = check_h(expansion, cfg["slope_gap_tol"])
        if "imag_axis" in conditions:
            records["imag_axis"] = check_imag_axis(spec, cfg["imag_axis_tol"])
        if "a" in conditions:
            records["a"] = check_a(curves, cls)
    except (InsufficientSweepError, fl.EigenSolveError,
            fl.CurveTrackingError, fl.FiberTruncationError) as exc:
        notes.append(f"inconclusive: {exc}")
        inconclusive = True
    report = StabilityReport(
        system=system.name or system.kind,
        wave={"k": wave.k, "omega": wave.omega,
              "params": dict(zip(wave.param_names, wave.params.tolist()))},
        conditions={c: records.get(c) for c in conditions},
        tolerances={k: v for k, v in cfg.items() if k != "conditions"},
        notes=notes)
    return report, inconclusive


def report_exit_status(report, inconclusive):
    """0 all pass, 2 some fail, 3 inconclusive (also when any verdict is
    blocked by unresolved eigenvalues or a check was skipped)."""
    if inconclusive:
        return 3
    recs = report.conditions.values()
    if any(r is None or getattr(r, "blocked_by_unresolved", False)
           for r in recs):
        return 3
    return 0 if all(r.verdict for r in recs) else 2


_SCHEMA = None


def report_schema():
    global _SCHEMA
    if _SCHEMA is None:
        import importlib.resources as ir

        with ir.files("blochwave").joinpath("data/report_schema.json").open() as fh:
            _SCHEMA = json.load(fh)
    return _SCHEMA


def validate_report(doc):
    import jsonschema

    jsonschema.validate(doc, report_schema())
