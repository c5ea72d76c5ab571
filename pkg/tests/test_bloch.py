import numpy as np
import pytest

from blochwave.bloch import (BlochField, GridError, SampledLine,
                             apply_fiberwise, bloch_field_to_csv,
                             forward_bloch, inverse_bloch, line_norm,
                             mixed_norm)


def random_bandlimited(rng, n, m, frac=6):
    K = n * m
    gf = np.zeros(K, dtype=complex)
    nb = max(2, K // frac)
    gf[:nb] = rng.normal(size=nb) + 1j * rng.normal(size=nb)
    gf[-nb:] = rng.normal(size=nb) + 1j * rng.normal(size=nb)
    return np.fft.ifft(gf) * K


@pytest.mark.parametrize("n,m", [(4, 4), (6, 12), (16, 8), (64, 4),
                                 (32, 32), (4, 256), (256, 4)])
def test_roundtrip_identity(n, m):
    rng = np.random.default_rng(n * 1000 + m)
    g = random_bandlimited(rng, n, m)
    line = SampledLine(g, n, m)
    back = inverse_bloch(forward_bloch(line))
    assert np.abs(back.values - g).max() <= 1e-10 * np.abs(g).max()


def test_parseval_constant_2pi():
    rng = np.random.default_rng(7)
    for n, m in [(8, 16), (32, 8), (10, 20)]:
        g = random_bandlimited(rng, n, m)
        line = SampledLine(g, n, m)
        G = forward_bloch(line)
        l2 = line_norm(line, 2)
        assert abs(l2**2 - 2 * np.pi * mixed_norm(G, 2, 2) ** 2) <= 1e-12 * l2**2


def test_pure_bloch_wave_single_fiber():
    n, m = 16, 12
    x = np.arange(n * m) / m
    G0 = BlochField(np.zeros((n, m), complex), n, m)
    xi0 = G0.xi[5]
    G = forward_bloch(SampledLine(np.exp(1j * xi0 * x), n, m))
    mags = np.abs(G.fibers)
    assert mags[5].max() > 0
    others = np.delete(mags, 5, axis=0)
    assert others.max() <= 1e-12 * mags[5].max()
    # constant periodic part: only the j=0 mode
    assert np.abs(G.fibers[5][1:]).max() <= 1e-12 * np.abs(G.fibers[5][0])


def test_periodic_input_lands_on_zero_fiber():
    n, m = 16, 12
    x = np.arange(n * m) / m
    G = forward_bloch(SampledLine(np.exp(2j * np.pi * x), n, m))
    zero_fiber = int(np.argmin(np.abs(G.xi)))
    mags = np.abs(G.fibers)
    assert np.delete(mags, zero_fiber, axis=0).max() <= 1e-12 * mags.max()
    modes = G.mode_numbers
    j1 = int(np.flatnonzero(modes == 1)[0])
    assert mags[zero_fiber, j1] == pytest.approx(mags.max())
    other = np.delete(mags[zero_fiber], j1)
    assert other.max() <= 1e-12 * mags.max()


def test_forward_matches_periodization_oracle():
    """Independent definition: the fiber equals 1/(2 pi) times the
    periodization of exp(-i xi x) g(x) over the cells."""
    rng = np.random.default_rng(3)
    n, m = 8, 10
    g = random_bandlimited(rng, n, m)
    line = SampledLine(g, n, m)
    vals = forward_bloch(line).fiber_values()
    gv = g.reshape(n, m)               # cell index, point within cell
    xcell = np.arange(m) / m
    G = forward_bloch(line)
    for mi in (0, 3, n - 1):
        xi = G.xi[mi]
        per = np.zeros(m, dtype=complex)
        for ell in range(n):
            per += np.exp(-1j * xi * (xcell + ell)) * gv[ell]
        expected = per / (2.0 * np.pi)
        scale = np.abs(expected).max() + 1e-300
        assert np.abs(expected - vals[mi]).max() / scale < 1e-10


def test_single_fiber_inverse_is_weighted_bloch_wave():
    n, m = 16, 8
    fib = np.zeros((n, m), dtype=complex)
    fib[4, 0] = 1.0          # constant periodic part at xi_4
    G = BlochField(fib, n, m)
    line = inverse_bloch(G)
    x = np.arange(n * m) / m
    expected = (2.0 * np.pi / n) * np.exp(1j * G.xi[4] * x)
    assert np.abs(line.values - expected).max() < 1e-12


def test_zero_field_inverts_to_zero():
    G = BlochField(np.zeros((8, 8), complex), 8, 8)
    assert np.abs(inverse_bloch(G).values).max() == 0.0
    assert mixed_norm(G, 2, 2) == 0.0


def test_apply_fiberwise_identity_and_errors():
    rng = np.random.default_rng(0)
    n, m = 8, 8
    g = random_bandlimited(rng, n, m)
    G = forward_bloch(SampledLine(g, n, m))
    out = apply_fiberwise(G, lambda xi: np.eye(m))
    assert np.abs(out.fibers - G.fibers).max() < 1e-15
    with pytest.raises(GridError):
        apply_fiberwise(G, np.zeros((n, m, m + 1)))


def test_fiberwise_differentiation_rule():
    rng = np.random.default_rng(1)
    n, m = 16, 16
    g = random_bandlimited(rng, n, m, frac=8)
    line = SampledLine(g, n, m)
    G = forward_bloch(line)
    modes = G.mode_numbers

    def dop(xi):
        return np.diag(1j * (xi + 2 * np.pi * modes))

    back = inverse_bloch(apply_fiberwise(G, dop))
    K = n * m
    theta = 2j * np.pi * np.fft.fftfreq(K, d=1.0 / m)
    gprime = np.fft.ifft(theta * np.fft.fft(g))
    assert np.abs(back.values - gprime).max() <= 1e-8 * np.abs(gprime).max()


def test_fiberwise_multiplication_commutes(mid_wave):
    rng = np.random.default_rng(2)
    n, m = 12, 64
    g = random_bandlimited(rng, n, m, frac=8)
    line = SampledLine(g, n, m)
    G = forward_bloch(line)
    uvals = mid_wave.values(m).real[0]
    uhat = np.fft.fft(uvals) / m
    C = uhat[(np.arange(m)[:, None] - np.arange(m)[None, :]) % m]
    back = inverse_bloch(apply_fiberwise(G, lambda xi: C))
    direct = np.tile(uvals, n) * g
    assert np.abs(back.values - direct).max() <= 1e-10 * np.abs(direct).max()


def test_kdv_fiber_multiplier_property(mid_wave):
    """Applying the linearized operator on the whole line equals acting
    fiber by fiber and inverting."""
    rng = np.random.default_rng(5)
    n, m = 12, 64
    g = random_bandlimited(rng, n, m, frac=10).real
    line = SampledLine(g, n, m)
    G = forward_bloch(line)
    k, om = mid_wave.k, mid_wave.omega
    uvals = mid_wave.values(m).real[0]
    uhat = np.fft.fft(uvals) / m
    C = uhat[(np.arange(m)[:, None] - np.arange(m)[None, :]) % m]
    modes = G.mode_numbers

    def lop(xi):
        D = np.diag(1j * (xi + 2 * np.pi * modes))
        return -om * D - k * D @ C - k**3 * D @ D @ D

    back = inverse_bloch(apply_fiberwise(G, lop))
    K = n * m
    theta = 2j * np.pi * np.fft.fftfreq(K, d=1.0 / m)

    def dx(v):
        return np.fft.ifft(theta * np.fft.fft(v))

    ub = np.tile(uvals, n)
    direct = -om * dx(g) - k * dx(ub * g) - k**3 * dx(dx(dx(g)))
    assert np.abs(back.values - direct).max() <= 1e-8 * np.abs(direct).max()


@pytest.mark.parametrize("p", [2.0, 4.0, np.inf])
def test_hausdorff_young_both_inequalities(p):
    rng = np.random.default_rng(11)
    n, m = 16, 12
    pp = 1.0 if np.isinf(p) else p / (p - 1.0)
    cp = 1.0 if np.isinf(p) else (2 * np.pi) ** (1.0 / p)
    for _ in range(100):
        g = random_bandlimited(rng, n, m)
        line = SampledLine(g, n, m)
        G = forward_bloch(line)
        assert line_norm(line, p) <= cp * mixed_norm(G, pp, p) * (1 + 1e-12)
        assert mixed_norm(G, p, pp) <= (1.0 / cp) * line_norm(line, pp) * (1 + 1e-12)


def test_mixed_norm_exponent_validation():
    G = BlochField(np.zeros((8, 8), complex), 8, 8)
    with pytest.raises(ValueError):
        mixed_norm(G, 0.5, 2)
    with pytest.raises(ValueError):
        mixed_norm(G, 2, -1)


def test_grid_validation_errors():
    with pytest.raises(GridError):
        SampledLine(np.zeros(12), 3, 4)          # odd cell count
    with pytest.raises(GridError):
        SampledLine(np.zeros(10), 4, 4)          # size mismatch
    with pytest.raises(GridError):
        SampledLine(np.zeros(0), 0, 4)
    x = np.array([0.0, 0.1, 0.25, 0.4])
    with pytest.raises(GridError):
        SampledLine.from_grid(x, np.zeros(4), 2)  # non-uniform
    ok = SampledLine.from_grid(np.arange(8) / 4.0, np.zeros(8), 2)
    assert ok.pts_per_cell == 4


def test_csv_dump(tmp_path):
    rng = np.random.default_rng(0)
    n, m = 4, 4
    G = forward_bloch(SampledLine(random_bandlimited(rng, n, m), n, m))
    path = tmp_path / "field.csv"
    bloch_field_to_csv(G, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "xi,mode_index,re,im"
    assert len(rows) == 1 + n * m
