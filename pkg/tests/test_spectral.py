import math

import numpy as np
import pytest

from bfb.spectral import (
    GridError, Parity, SpectralError, SpectralField, build_grid,
    compute_lambda, dealias, divergence, forward_transform, gradient, inner,
    inverse_laplacian_zero_mean, inverse_transform, l2_norm, laplacian,
    leray_project, parity_project, physical_l2_norm, zeros,
)

from conftest import random_field

EVEN, ODD = Parity.EVEN, Parity.ODD


def test_build_grid_dealias_cutoff():
    g = build_grid(8, 8, 8, 1.0)
    assert g.tables["cutoff"] == (2, 2, 2)
    m = g.tables["m"]
    kept = np.abs(m)[g.mask.any(axis=(1, 2))]
    assert kept.max() == 2


def test_build_grid_no_dealias():
    g = build_grid(4, 4, 4, 2.0, 1.0)
    assert g.mask.all()


@pytest.mark.parametrize("dims", [(7, 8, 8), (8, 8, 2), (8, 6, 5)])
def test_build_grid_rejects_bad_dims(dims):
    with pytest.raises(GridError):
        build_grid(*dims, 1.0)


@pytest.mark.parametrize("L,frac", [(0.0, 2 / 3), (-1.0, 2 / 3), (1.0, 0.0), (1.0, 1.5)])
def test_build_grid_rejects_bad_params(L, frac):
    with pytest.raises(GridError):
        build_grid(8, 8, 8, L, frac)


def test_wavevectors(grid8):
    t = grid8.tables
    assert t["kx"][1] == pytest.approx(2 * math.pi)
    assert t["kz"][1] == pytest.approx(math.pi)
    assert t["kz"][-1] == pytest.approx(-math.pi)


def test_forward_sin_pi_z(grid8):
    x, y, z = grid8.mesh()
    f = forward_transform(np.sin(math.pi * z), ODD, grid8)
    c = f.coeffs
    # sin(pi z) = -sin(pi (z + 1)); coefficients refer to exp(i pi q (z + 1))
    assert c[0, 0, 1] == pytest.approx(0.5j, abs=1e-14)
    assert c[0, 0, -1] == pytest.approx(-0.5j, abs=1e-14)
    rest = c.copy()
    rest[0, 0, 1] = rest[0, 0, -1] = 0
    assert np.max(np.abs(rest)) < 1e-13


def test_forward_zero(grid8):
    f = forward_transform(np.zeros(grid8.shape), EVEN, grid8)
    assert not np.any(f.coeffs)


def test_forward_cos_cos_four_entries(grid8):
    x, y, z = grid8.mesh()
    f = forward_transform(np.cos(2 * math.pi * x) * np.cos(math.pi * z), EVEN, grid8)
    nz = np.argwhere(np.abs(f.coeffs) > 1e-13)
    assert len(nz) == 4
    for m, n, q in nz:
        # cos(pi z) = -cos(pi (z + 1))
        assert f.coeffs[m, n, q] == pytest.approx(-0.25, abs=1e-14)
        assert f.coeffs[-m, -n, -q] == pytest.approx(np.conj(f.coeffs[m, n, q]))


def test_forward_rejects_shape_and_complex(grid8):
    with pytest.raises(SpectralError):
        forward_transform(np.zeros((4, 4, 4)), EVEN, grid8)
    with pytest.raises(SpectralError):
        forward_transform(np.zeros(grid8.shape, complex), EVEN, grid8)


def test_inverse_zero_and_single_mode(grid8):
    assert not np.any(inverse_transform(zeros(grid8, EVEN)))
    c = np.zeros(grid8.shape, complex)
    c[1, 0, 0] = c[-1, 0, 0] = 0.5
    vals = inverse_transform(SpectralField(c, EVEN, grid8))
    x, _, _ = grid8.mesh()
    assert np.max(np.abs(vals - np.cos(2 * math.pi * x))) < 1e-14


def test_inverse_detects_broken_hermitian_symmetry(grid8):
    c = np.zeros(grid8.shape, complex)
    c[1, 0, 0] = 1.0
    with pytest.raises(SpectralError):
        inverse_transform(SpectralField(c, EVEN, grid8))


@pytest.mark.parametrize("parity", [EVEN, ODD])
def test_round_trip(grid16, rng, parity):
    f = random_field(grid16, rng, parity)
    vals = inverse_transform(f)
    g = forward_transform(vals, parity, grid16)
    err = np.max(np.abs(inverse_transform(g) - vals)) / np.max(np.abs(vals))
    assert err < 1e-12


def test_parseval(grid16, rng):
    f = random_field(grid16, rng, ODD)
    a = physical_l2_norm(inverse_transform(f), grid16)
    b = l2_norm(f)
    assert abs(a - b) <= 1e-12 * b


def test_parity_project(grid8, rng):
    f = random_field(grid8, rng, ODD)
    assert np.array_equal(parity_project(f, ODD).coeffs, f.coeffs)
    e = random_field(grid8, rng, EVEN)
    assert np.max(np.abs(parity_project(e, ODD).coeffs)) < 1e-16
    g = SpectralField(rng.standard_normal(grid8.shape) + 1j * rng.standard_normal(grid8.shape),
                      EVEN, grid8)
    p = parity_project(g, ODD).coeffs
    for q in range(8):
        assert np.allclose(p[..., q], 0.5 * (g.coeffs[..., q] - g.coeffs[..., (-q) % 8]))


def test_gradient_sin(grid8):
    x, y, z = grid8.mesh()
    f = forward_transform(np.sin(math.pi * z), ODD, grid8)
    gx, gy, gz = gradient(f)
    assert gz.parity is EVEN and gx.parity is ODD
    assert np.max(np.abs(inverse_transform(gz) - math.pi * np.cos(math.pi * z))) < 1e-13
    assert not np.any(gx.coeffs) and not np.any(gy.coeffs)


def test_gradient_constant(grid8):
    f = forward_transform(np.full(grid8.shape, 3.0), EVEN, grid8)
    assert all(not np.any(g.coeffs) for g in gradient(f))


def test_gradient_parseval(grid16, rng):
    f = random_field(grid16, rng, EVEN)
    grads = gradient(f)
    phys = sum(physical_l2_norm(inverse_transform(g), grid16) ** 2 for g in grads)
    coef = grid16.volume * np.sum(grid16.k2 * np.abs(f.coeffs) ** 2)
    assert abs(phys - coef) <= 1e-12 * coef


def test_laplacian_eigenfunction(grid8):
    x, y, z = grid8.mesh()
    f = forward_transform(np.sin(math.pi * z), ODD, grid8)
    lf = inverse_transform(laplacian(f))
    assert np.max(np.abs(lf + math.pi ** 2 * np.sin(math.pi * z))) < 1e-12


def test_inverse_laplacian_round_trip(grid16, rng):
    f = random_field(grid16, rng, EVEN)
    c = f.coeffs.copy()
    c[0, 0, 0] = 0
    f = f.with_coeffs(c)
    back = inverse_laplacian_zero_mean(laplacian(f))
    assert l2_norm(back - f) <= 1e-12 * l2_norm(f)


def test_inverse_laplacian_rejects_mean(grid8):
    f = forward_transform(np.ones(grid8.shape), EVEN, grid8)
    with pytest.raises(SpectralError):
        inverse_laplacian_zero_mean(f)


def _velocity(grid, rng):
    return tuple(random_field(grid, rng, p) for p in (EVEN, EVEN, ODD))


def _rel_div(u):
    d = divergence(*u)
    return l2_norm(d) / max(sum(l2_norm(gi) for c in u for gi in gradient(c)), 1e-300)


def test_leray_projection(grid16, rng):
    u = _velocity(grid16, rng)
    p = leray_project(*u)
    assert _rel_div(p) < 1e-12
    p2 = leray_project(*p)
    for a, b in zip(p, p2):
        assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-14 * np.max(np.abs(a.coeffs))


def test_leray_kills_gradients(grid16, rng):
    phi = random_field(grid16, rng, EVEN)
    g = gradient(phi)
    p = leray_project(*g)
    scale = max(np.max(np.abs(c.coeffs)) for c in g)
    assert max(np.max(np.abs(c.coeffs)) for c in p) < 1e-13 * scale


def test_parity_and_leray_commute(grid16, rng):
    u = tuple(SpectralField(rng.standard_normal(grid16.shape) * grid16.mask + 0j, p, grid16)
              for p in (EVEN, EVEN, ODD))
    a = leray_project(*(parity_project(c, c.parity) for c in u))
    b = tuple(parity_project(c, c.parity) for c in leray_project(*u))
    for x, y in zip(a, b):
        assert np.max(np.abs(x.coeffs - y.coeffs)) < 1e-13


def test_dealias(grid8, rng):
    f = random_field(grid8, rng, EVEN)
    assert np.array_equal(dealias(f).coeffs, f.coeffs)
    outside = SpectralField(rng.standard_normal(grid8.shape) * ~grid8.mask + 0j, EVEN, grid8)
    assert not np.any(dealias(outside).coeffs)


def _convolve(fa, fb, grid):
    """Direct Galerkin product of two band-limited coefficient arrays."""
    t = grid.tables
    m, n, q = t["m"], t["n"], t["q"]
    out = np.zeros(grid.shape, complex)
    idx_a = np.argwhere(fa != 0)
    idx_b = np.argwhere(fb != 0)
    for i, j, k in idx_a:
        for p, r, s in idx_b:
            M, N, Q = m[i] + m[p], n[j] + n[r], q[k] + q[s]
            if max(abs(M), abs(N), abs(Q)) >= 4:
                continue  # outside the retained set on 8^3
            out[M % 8, N % 8, Q % 8] += fa[i, j, k] * fb[p, r, s]
    return out * grid.mask


def test_dealiased_product_matches_convolution(grid8, rng):
    f = random_field(grid8, rng, EVEN)
    g = random_field(grid8, rng, ODD)
    prod = forward_transform(inverse_transform(f) * inverse_transform(g), ODD, grid8)
    exact = _convolve(f.coeffs, g.coeffs, grid8)
    assert np.max(np.abs(prod.coeffs - exact)) < 1e-14


@pytest.mark.parametrize("L,lam", [(1.0, math.pi ** 2), (4.0, (math.pi / 2) ** 2), (2.0, math.pi ** 2)])
def test_compute_lambda(L, lam):
    assert compute_lambda(build_grid(8, 8, 8, L)) == pytest.approx(lam, rel=1e-14)


def test_poincare_and_inverse_gradient_bound(grid16, rng):
    lam = compute_lambda(grid16)
    for _ in range(5):
        f = random_field(grid16, rng, ODD)
        grad = math.sqrt(sum(l2_norm(g) ** 2 for g in gradient(f)))
        assert l2_norm(f) <= grad / math.sqrt(lam) * (1 + 1e-12)
        psi = inverse_laplacian_zero_mean(f)
        gpsi = math.sqrt(sum(l2_norm(g) ** 2 for g in gradient(psi)))
        assert gpsi <= l2_norm(f) / math.sqrt(lam) * (1 + 1e-12)


def test_field_arithmetic(grid8, rng):
    f = random_field(grid8, rng, EVEN)
    g = random_field(grid8, rng, EVEN)
    assert inner(f + g, f) == pytest.approx(inner(f, f) + inner(g, f))
    assert np.allclose((2 * f - f).coeffs, f.coeffs)
    with pytest.raises(SpectralError):
        f + zeros(build_grid(8, 8, 8, 2.0), EVEN)
