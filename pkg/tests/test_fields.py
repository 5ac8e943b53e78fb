import numpy as np
import pytest
from hypothesis import given, strategies as st

from wingopt import fields
from wingopt.fields import FieldChain, PDEFilter, ProjectionParams, heaviside, heaviside_derivative


def test_filter_uniform_and_zero_radius(rng):
    f = PDEFilter((6, 5, 4), 0.1, 0.3, tol=1e-12)
    np.testing.assert_allclose(f(np.full(120, 0.37)), 0.37, atol=1e-10)
    x = rng.random(120)
    np.testing.assert_array_equal(PDEFilter((6, 5, 4), 0.1, 0.0)(x), x)
    with pytest.raises(ValueError):
        PDEFilter((2, 2, 2), 0.1, -1.0)


def test_filter_spike_green_function():
    n = 17
    f = PDEFilter((n, n, n), 1.0, 3.0, tol=1e-12)
    x = np.zeros(n**3)
    c = 8 + n * (8 + n * 8)
    x[c] = 1.0
    y = f(x).reshape(n, n, n)
    assert y.sum() == pytest.approx(1.0, abs=1e-8)
    line = y[8, 8, 8:]
    assert np.all(np.diff(line) < 0)
    assert y.min() >= 0
    # the filter is symmetric: it equals its own transpose
    A = f.A
    assert abs(A - A.T).max() == 0


@given(st.integers(0, 10_000))
def test_filter_maximum_principle_and_mass(seed):
    rng = np.random.default_rng(seed)
    f = PDEFilter((7, 6, 5), 0.1, 0.25, tol=1e-12)
    x = rng.random(210)
    y = f(x)
    assert y.min() >= x.min() - 1e-9 and y.max() <= x.max() + 1e-9
    assert y.sum() == pytest.approx(x.sum(), rel=1e-8)


def test_heaviside_values():
    assert heaviside(0.0, 8.0, 0.3) == pytest.approx(0.0, abs=1e-15)
    assert heaviside(1.0, 8.0, 0.3) == pytest.approx(1.0, abs=1e-15)
    assert heaviside(0.5, 8.0, 0.5) == pytest.approx(0.5, abs=1e-15)
    x = np.linspace(0, 1, 1001)
    assert np.abs(heaviside(x, 0.01, 0.5) - x).max() < 1e-3


def test_heaviside_derivative(rng):
    beta, eta = 6.0, 0.35
    x = np.linspace(0.05, 0.95, 91)
    fd = (heaviside(x + 1e-6, beta, eta) - heaviside(x - 1e-6, beta, eta)) / 2e-6
    d = heaviside_derivative(x, beta, eta)
    assert np.abs(fd / d - 1).max() < 1e-6
    assert (d > 0).all()
    fine = np.linspace(0, 1, 100001)
    assert fine[np.argmax(heaviside_derivative(fine, beta, eta))] == pytest.approx(eta, abs=1e-5)
    np.testing.assert_allclose(heaviside_derivative(fine, 1e-3, 0.5), 1.0, atol=1e-6)


@given(st.floats(0.01, 64), st.floats(0.05, 0.95), st.floats(0, 1), st.floats(0, 1))
def test_heaviside_monotone_and_bounded(beta, eta, a, b):
    lo, hi = sorted((a, b))
    ha, hb = heaviside(lo, beta, eta), heaviside(hi, beta, eta)
    assert -1e-12 <= ha <= hb + 1e-12 <= 1 + 2e-12


def test_projection_params():
    assert ProjectionParams(4.0).thresholds == (0.7, 0.5, 0.3)
    with pytest.raises(ValueError):
        ProjectionParams(0.0)
    with pytest.raises(ValueError):
        ProjectionParams(1.0, 0.5, 0.5)


def test_agglomerate_and_material():
    g = np.array([0.2, 0.2, 0.2])
    er, di = np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0])
    np.testing.assert_allclose(fields.agglomerate(er, di, g, 0.05), [0.0, 0.05, 0.2])
    E, M = fields.interpolate_material(np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0, 0.5]))
    np.testing.assert_allclose(E, [1e-6, 0.5 * (1 + 1e-6), 1.0])
    np.testing.assert_allclose(M, [0.0, 26.59e3, 0.5 * 26.59e3])
    assert fields.skin_radius(0.01) == pytest.approx(0.0075)


def test_chain_rejects_thin_skin():
    with pytest.raises(ValueError):
        FieldChain((4, 4, 4), 0.02, 0.03, 0.05)
    with pytest.raises(ValueError):
        FieldChain((4, 4, 4), 0.02, 0.04, 0.05, rho_skin=1.5)


def test_zero_and_full_fields():
    ch = FieldChain((8, 6, 5), 0.02, 0.04, 0.05)
    z = ch.forward(np.zeros(240), np.full(240, 0.5), 4.0)
    for a in (z.skin.filtered, z.skin.eroded, z.skin.dilated, *z.rho):
        np.testing.assert_allclose(a, 0.0, atol=1e-15)
    full = ch.forward(np.ones(240), np.ones(240), 4.0)
    for a in full.gamma_x:
        np.testing.assert_allclose(a, 1.0, atol=1e-9)


@given(st.integers(0, 10_000), st.floats(0.5, 32))
def test_field_ordering_and_bounds(seed, beta):
    rng = np.random.default_rng(seed)
    ch = FieldChain((6, 5, 4), 0.02, 0.04, 0.05, rho_skin=0.3)
    fs = ch.forward(rng.random(120), rng.random(120), beta)
    ge, gn, gd = fs.gamma_x
    assert np.all(ge <= gn + 1e-12) and np.all(gn <= gd + 1e-12)
    assert np.all(fs.skin.eroded <= fs.skin.dilated + 1e-12)
    for a in (*fs.gamma_x, *fs.rho, fs.skin.eroded, fs.skin.dilated, fs.skin.filtered):
        assert a.min() >= -1e-12 and a.max() <= 1 + 1e-12


def _slab_chain(h=0.02, n=30):
    ch = FieldChain((n, 3, 3), h, 2 * h, 2.5 * h)
    xi = np.zeros((3, 3, n))
    xi[:, :, n // 3:] = 1.0
    return ch, xi.ravel()


def test_skin_band_thickness_on_slab():
    ch, xi = _slab_chain()
    sk = ch.skin(xi)
    band = sk.skin.reshape(3, 3, -1)[1, 1]
    # count band elements across the face normal
    assert abs(np.sum(band > 0.5) - 2) <= 1


def _bar_pattern(widths, h, shape_x=80, gap=6):
    """Square-section bars of the given widths (elements), all running along y."""
    nz = max(widths) + 2 * gap
    g = np.zeros((nz, 3, shape_x))
    cx, centres = gap, []
    for w in widths:
        z0 = (nz - w) // 2
        g[z0:z0 + w, :, cx:cx + w] = 1.0
        centres.append((z0, cx, w))
        cx += w + gap
    return g, centres


def test_eroded_bars_respect_minimum_length_scale():
    h, r_s, beta = 0.02, 0.05, 16.0
    widths = [1, 2, 3, 4]
    g, centres = _bar_pattern(widths, h)
    nz, ny, nx = g.shape
    f = PDEFilter((nx, ny, nz), h, r_s, tol=1e-12)
    ge = fields.robust_fields(f(g.ravel()), ProjectionParams(beta))[0].reshape(g.shape)
    predicted = 0.9 * r_s
    for z0, x0, w in centres:
        survives = ge[z0:z0 + w, :, x0:x0 + w].max() > 0.5
        assert survives == (w * h > predicted)


def test_slab_erosion_threshold_matches_1d_kernel():
    # for plate-like features the eroded threshold is 2 ln(1/0.3) r / sqrt(12)
    h, r = 0.002, 0.05
    crit = 2 * np.log(1 / 0.3) * r / np.sqrt(12)
    n = 200
    f = PDEFilter((n, 1, 1), h, r, tol=1e-13)
    for w in (crit * 0.95, crit * 1.05):
        k = int(round(w / h))
        x = np.zeros(n)
        x[(n - k) // 2:(n - k) // 2 + k] = 1.0
        assert (f(x).max() > 0.7) == (w > crit)


def test_gamma_pullback_matches_fd(rng):
    ch = FieldChain((6, 5, 4), 0.02, 0.04, 0.05, rho_skin=0.2, tol=1e-13)
    xi, gamma, beta = rng.random(120), rng.uniform(0.2, 0.8, 120), 3.0
    w = rng.standard_normal((3, 120))
    fs = ch.forward(xi, gamma, beta)

    def J(g):
        return sum(wi @ r for wi, r in zip(w, ch.forward(xi, g, beta).rho))

    grad = ch.pullback_gamma(fs, beta, list(w))
    v = rng.standard_normal(120)
    eps = 1e-5
    fd = (J(gamma + eps * v) - J(gamma - eps * v)) / (2 * eps)
    assert grad @ v == pytest.approx(fd, rel=1e-5)


def test_xi_pullback_matches_fd(rng):
    ch = FieldChain((6, 5, 4), 0.02, 0.04, 0.05, rho_skin=0.2, tol=1e-13)
    xi, gamma, beta = rng.uniform(0.1, 0.9, 120), rng.random(120), 3.0
    w = rng.standard_normal((3, 120))
    fs = ch.forward(xi, gamma, beta)

    def J(x):
        return sum(wi @ r for wi, r in zip(w, ch.forward(x, gamma, beta).rho))

    grad = ch.pullback_xi(fs, list(w))
    v = rng.standard_normal(120)
    eps = 1e-5
    fd = (J(xi + eps * v) - J(xi - eps * v)) / (2 * eps)
    assert grad @ v == pytest.approx(fd, rel=1e-4)


def test_grey_fraction():
    ch = FieldChain((4, 4, 4), 0.02, 0.04, 0.05)
    fs = ch.forward(np.ones(64), np.ones(64), 16.0)
    assert fs.grey_fraction() == 0.0
    assert fs.grey_fraction(np.zeros(64, dtype=bool)) == 0.0
