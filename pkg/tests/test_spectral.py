import math

import numpy as np
import pytest
from scipy.special import jv

from heatsleuth.shapes import ShapeKind, ShapeParams
from heatsleuth.spectral import (
    EigenBasis,
    SpectralError,
    SpectralForward,
    bessel_zeros,
    build_basis,
    check_uniqueness_condition,
    disc_fourier_coeff,
    export_basis_csv,
    flux_series,
    flux_series_many,
    fourier_coeff,
    steady_flux,
)

PI = math.pi


def bessel_series(m, x, terms=60):
    """Independent power-series Bessel evaluation (test oracle)."""
    total = 0.0
    for k in range(terms):
        total += (-1) ** k * (x / 2) ** (m + 2 * k) / (
            math.factorial(k) * math.factorial(m + k)
        )
    return total


def test_bessel_zeros_against_power_series():
    for m in (0, 1, 2, 5):
        for z in bessel_zeros(m, 3):
            assert abs(bessel_series(m, z)) < 1e-10


def test_bessel_zeros_known_values():
    z0 = bessel_zeros(0, 2)
    assert z0[0] == pytest.approx(2.404825557695773, abs=1e-12)
    assert z0[1] == pytest.approx(5.520078110286311, abs=1e-12)
    z1 = bessel_zeros(1, 1)
    assert z1[0] == pytest.approx(3.8317059702075125, abs=1e-12)


def test_bessel_zeros_bounds():
    with pytest.raises(ValueError):
        bessel_zeros(-1, 5)
    with pytest.raises(ValueError):
        bessel_zeros(0, 0)


def test_build_basis_sorted_and_paired():
    basis = build_basis(20)
    lam = basis.lam
    assert np.all(np.diff(lam) >= -1e-12)
    # first eigenvalue is j_{0,1}^2
    assert lam[0] == pytest.approx(2.404825557695773**2)
    # every nonzero order appears with both signs at the same eigenvalue
    for p in basis.pairs:
        if p.order != 0:
            partners = [q for q in basis.pairs
                        if q.lam == p.lam and q.order == -p.order]
            assert len(partners) == 1


def test_eigenfunction_normalization():
    """integral |phi|^2 over the disc = 1 for the signed omega."""
    basis = build_basis(6)
    from numpy.polynomial.legendre import leggauss
    gx, gw = leggauss(200)
    r = 0.5 * (gx + 1)
    w = 0.5 * gw
    for p in basis.pairs:
        rad = p.omega * jv(abs(p.order), math.sqrt(p.lam) * r)
        val = 2 * PI * np.sum(rad**2 * r * w)
        assert val == pytest.approx(1.0, rel=1e-8)


def test_disc_coeff_matches_quadrature():
    basis = build_basis(30)
    shape = ShapeParams(ShapeKind.CIRCLE, [0.5, 0.7, 0.2])
    closed = disc_fourier_coeff(shape.center, 0.2, basis)
    quad = fourier_coeff(shape, basis, method="grid")
    # the indicator-masked tensor rule has an O(h) boundary error
    np.testing.assert_allclose(quad, closed, atol=5e-4)


def test_polar_coeff_area_term():
    # d for the constant eigenfunction part: d_n with m=0 integrates
    # omega J_0(sqrt(lam) r) over D; check against dense reference for
    # the peanut star shape
    basis = build_basis(10)
    shape = ShapeParams(ShapeKind.FOURIER_STAR, [1, 0, 0, 0, 0.3], fourier_order=2)
    d = fourier_coeff(shape, basis, method="polar")
    d2 = fourier_coeff(shape, basis, method="grid")
    np.testing.assert_allclose(d, d2, atol=2e-4)


def test_flux_series_total_is_minus_area():
    """Divergence theorem: total boundary flux -> -b |D| as t grows."""
    basis = build_basis(400)
    shape = ShapeParams(ShapeKind.CIRCLE, [0.5, PI / 3, 0.2])
    d = disc_fourier_coeff(shape.center, 0.2, basis)
    th = np.linspace(0, 2 * PI, 720, endpoint=False)
    flux = flux_series_many(th, np.full(720, 2.0), d, basis, 1.0)
    total = flux.mean() * 2 * PI
    assert total == pytest.approx(-PI * 0.2**2, rel=0.01)
    assert flux.max() < 0  # heat flows outward everywhere


def test_flux_peaks_at_source_angle():
    basis = build_basis(200)
    shape = ShapeParams(ShapeKind.CIRCLE, [0.7, PI / 2, 0.2])
    fwd = SpectralForward(basis, strength=50.0)
    th = np.linspace(0, 2 * PI, 80, endpoint=False)
    flux = fwd.flux(shape, th, np.full(80, 0.2))
    assert th[np.argmin(flux)] == pytest.approx(PI / 2, abs=0.1)


def test_flux_series_rejects_negative_time():
    basis = build_basis(5)
    d = np.zeros(len(basis.pairs), dtype=complex)
    with pytest.raises(ValueError):
        flux_series(0.0, -1.0, d, basis)


def test_flux_series_imaginary_guard():
    basis = build_basis(8)
    # deliberately break the +/-m pairing with asymmetric coefficients
    d = np.zeros(len(basis.pairs), dtype=complex)
    for i, p in enumerate(basis.pairs):
        if p.order == 1:
            d[i] = 1.0  # partner with m=-1 left at 0
    with pytest.raises(SpectralError):
        flux_series(0.3, 1.0, d, basis)


def test_steady_flux_closed_form_vs_quadrature():
    """Circle branch (harmonic mean-value closed form) against direct
    quadrature of the Poisson kernel over the source."""
    shape = ShapeParams(ShapeKind.CIRCLE, [0.7, PI / 2, 0.2])
    th = np.linspace(0, 2 * PI, 16, endpoint=False)
    closed = steady_flux(shape, th)
    from heatsleuth.spectral import _masked_grid_quadrature
    pts, wts = _masked_grid_quadrature(shape)
    z = np.stack([np.cos(th), np.sin(th)], axis=-1)
    num = (1 - (pts**2).sum(-1)) * wts
    quad = np.array([
        -np.sum(num / ((pts - zz) ** 2).sum(-1)) / (2 * PI) for zz in z
    ])
    # the indicator-masked tensor rule has an O(h) boundary error
    np.testing.assert_allclose(quad, closed, atol=5e-4)


def test_steady_flux_total_is_minus_area():
    from heatsleuth.spectral import source_quadrature
    th = np.linspace(0, 2 * PI, 360, endpoint=False)
    # circle: closed form, total exactly -pi a^2
    circ = ShapeParams(ShapeKind.CIRCLE, [0.5, 1.0, 0.2])
    total = steady_flux(circ, th).mean() * 2 * PI
    assert total == pytest.approx(-PI * 0.04, rel=1e-10)
    # star shape: quadrature total matches the polar-rule area
    star = ShapeParams(ShapeKind.FOURIER_STAR, [1, 0, 0, 0, 0.3], fourier_order=2)
    total = steady_flux(star, th).mean() * 2 * PI
    assert total == pytest.approx(-source_quadrature(star)[1].sum(), rel=1e-6)


def test_flux_series_steady_split_reaches_steady_state():
    """With the steady/transient split, flux at large t equals the
    Poisson-kernel steady flux regardless of truncation."""
    basis = build_basis(30)
    shape = ShapeParams(ShapeKind.CIRCLE, [0.7, PI / 2, 0.2])
    d = disc_fourier_coeff(shape.center, 0.2, basis)
    s = float(steady_flux(shape, [PI / 2])[0])
    got = flux_series(PI / 2, 5.0, d, basis, strength=50.0, steady=s)
    assert got == pytest.approx(50.0 * s, rel=1e-10)


def test_spectral_forward_split_beats_plain_truncation():
    """At modest truncation the split form is far closer to a
    high-truncation reference than the plain series."""
    shape = ShapeParams(ShapeKind.CIRCLE, [0.7, PI / 2, 0.2])
    s = float(steady_flux(shape, [PI / 2])[0])
    ref_basis = build_basis(1500)
    d_ref = disc_fourier_coeff(shape.center, 0.2, ref_basis)
    ref = flux_series(PI / 2, 0.2, d_ref, ref_basis, 1.0, s)
    basis = build_basis(60)
    d = disc_fourier_coeff(shape.center, 0.2, basis)
    split = flux_series(PI / 2, 0.2, d, basis, 1.0, s)
    plain = flux_series(PI / 2, 0.2, d, basis, 1.0)
    assert abs(split - ref) < 0.05 * abs(plain - ref)


def test_check_uniqueness_condition():
    assert not check_uniqueness_condition(0.0, PI / 2)  # ratio 1/2, rational
    assert not check_uniqueness_condition(26 * PI / 40, 16 * PI / 40)
    assert check_uniqueness_condition(0.0, 1.0)  # 1/pi irrational


def test_export_basis_csv(tmp_path):
    basis = build_basis(5)
    path = tmp_path / "basis.csv"
    export_basis_csv(basis, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "n,lambda,m,omega"
    assert len(lines) == len(basis.pairs) + 1
