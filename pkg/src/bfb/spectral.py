"""Fourier machinery on the parity-extended box [0, L]^2 x [-1, 1).

Fields are stored as full complex coefficient arrays indexed in FFT order
``(m, n, q)``, normalised so that ``f(x) = sum_k c_k exp(i k.(x - x0))``
with ``x0 = (0, 0, -1)``, the first grid point.  Relative to the basis
``exp(i k.x)`` this only multiplies ``c_k`` by ``(-1)^q``, which leaves
parity, derivatives, products and norms unchanged.  The horizontal
wavenumbers are ``2 pi m / L`` and the vertical ones ``pi q``.
Parity in ``z`` is carried as a tag and enforced by explicit projection.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid", "Parity", "SpectralField", "GridError", "SpectralError",
    "build_grid", "forward_transform", "inverse_transform", "parity_project",
    "gradient", "divergence", "laplacian", "inverse_laplacian_zero_mean",
    "leray_project", "dealias", "compute_lambda", "l2_norm", "inner",
    "physical_l2_norm", "zeros",
]

IMAG_TOL = 1e-12
ZERO_MEAN_TOL = 1e-12


class GridError(ValueError):
    pass


class SpectralError(ValueError):
    pass


def _workers():
    env = os.environ.get("BFB_THREADS")
    if not env:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def to_physical(coeffs):
    """Raw inverse transform over the last three axes, real part only."""
    n = np.prod(coeffs.shape[-3:])
    return sfft.ifftn(coeffs, axes=(-3, -2, -1), workers=_workers()).real * n


def to_spectral(values):
    """Raw forward transform over the last three axes."""
    n = np.prod(values.shape[-3:])
    return sfft.fftn(values, axes=(-3, -2, -1), workers=_workers()) / n


class Parity(enum.Enum):
    EVEN = 1
    ODD = -1

    def flipped(self):
        return Parity.ODD if self is Parity.EVEN else Parity.EVEN

    def __mul__(self, other):
        return Parity.EVEN if self is other else Parity.ODD


def _mode_index(n):
    return np.rint(np.fft.fftfreq(n) * n).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid plus precomputed wavevector tables and dealias mask."""

    nx: int
    ny: int
    nz: int
    L: float
    dealias_fraction: float = 2.0 / 3.0
    tables: dict = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise GridError(f"{name}={n}: must be an even integer >= 4")
        if not self.L > 0:
            raise GridError(f"L={self.L}: must be positive")
        if not 0 < self.dealias_fraction <= 1:
            raise GridError(
                f"dealias_fraction={self.dealias_fraction}: must lie in (0, 1]")

        m, n, q = (_mode_index(k) for k in (self.nx, self.ny, self.nz))
        kx = 2 * np.pi * m / self.L
        ky = 2 * np.pi * n / self.L
        kz = np.pi * q.astype(float)

        def deriv(k, idx, npts):
            # the Nyquist mode has no real-valued derivative
            k = k.copy()
            k[idx == -npts // 2] = 0.0
            return k

        cut = [int(np.floor(self.dealias_fraction * npts / 2 + 1e-12))
               for npts in (self.nx, self.ny, self.nz)]
        mask = ((np.abs(m)[:, None, None] <= cut[0])
                & (np.abs(n)[None, :, None] <= cut[1])
                & (np.abs(q)[None, None, :] <= cut[2]))

        dkx, dky, dkz = (deriv(kx, m, self.nx), deriv(ky, n, self.ny),
                         deriv(kz, q, self.nz))
        k2 = (kx[:, None, None] ** 2 + ky[None, :, None] ** 2
              + kz[None, None, :] ** 2)
        dk2 = (dkx[:, None, None] ** 2 + dky[None, :, None] ** 2
               + dkz[None, None, :] ** 2)
        kinf = np.maximum(np.maximum(np.abs(kx)[:, None, None],
                                     np.abs(ky)[None, :, None]),
                          np.abs(kz)[None, None, :])
        with np.errstate(divide="ignore"):
            inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
            inv_dk2 = np.where(dk2 > 0, 1.0 / np.where(dk2 > 0, dk2, 1.0), 0.0)

        object.__setattr__(self, "tables", dict(
            m=m, n=n, q=q, kx=kx, ky=ky, kz=kz,
            dk=(dkx[:, None, None], dky[None, :, None], dkz[None, None, :]),
            k2=k2, dk2=dk2, inv_k2=inv_k2, inv_dk2=inv_dk2, kinf=kinf,
            mask=mask, cutoff=tuple(cut),
            qneg=(-np.arange(self.nz)) % self.nz,
        ))

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def npoints(self):
        return self.nx * self.ny * self.nz

    @property
    def volume(self):
        return 2.0 * self.L ** 2

    @property
    def spacing(self):
        return (self.L / self.nx, self.L / self.ny, 2.0 / self.nz)

    @property
    def dx_min(self):
        return min(self.spacing)

    def coords(self):
        """1D coordinate vectors ``(x, y, z)``; ``z`` runs over [-1, 1)."""
        x = np.arange(self.nx) * self.L / self.nx
        y = np.arange(self.ny) * self.L / self.ny
        z = -1.0 + np.arange(self.nz) * 2.0 / self.nz
        return x, y, z

    def mesh(self):
        return np.meshgrid(*self.coords(), indexing="ij")

    @property
    def mask(self):
        return self.tables["mask"]

    @property
    def k2(self):
        return self.tables["k2"]

    def key(self):
        return (self.nx, self.ny, self.nz, float(self.L),
                float(self.dealias_fraction))

    def compatible(self, other):
        return self is other or self.key() == other.key()


def build_grid(nx, ny, nz, L, dealias_fraction=2.0 / 3.0):
    return Grid(nx, ny, nz, float(L), float(dealias_fraction))


@dataclass(frozen=True, eq=False)
class SpectralField:
    coeffs: np.ndarray
    parity: Parity
    grid: Grid

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape:
            raise SpectralError(
                f"coefficient shape {self.coeffs.shape} does not match grid "
                f"{self.grid.shape}")

    def _check(self, other):
        if not self.grid.compatible(other.grid):
            raise SpectralError("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.coeffs + other.coeffs, self.parity, self.grid)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.coeffs - other.coeffs, self.parity, self.grid)

    def __neg__(self):
        return SpectralField(-self.coeffs, self.parity, self.grid)

    def __mul__(self, scalar):
        return SpectralField(self.coeffs * scalar, self.parity, self.grid)

    __rmul__ = __mul__

    def with_coeffs(self, coeffs):
        return SpectralField(coeffs, self.parity, self.grid)


def zeros(grid, parity):
    return SpectralField(np.zeros(grid.shape, dtype=complex), parity, grid)


def _parity_array(c, sign, grid):
    return 0.5 * (c + sign * c[..., grid.tables["qneg"]])


def forward_transform(physical_values, parity, grid, *, project=True):
    """Real grid values to a SpectralField.

    With ``project`` (the default) the result is parity-projected and
    dealiased so it satisfies the SpectralField invariants.
    """
    values = np.asarray(physical_values)
    if values.shape != grid.shape:
        raise SpectralError(
            f"physical array shape {values.shape} != grid shape {grid.shape}")
    if np.iscomplexobj(values):
        raise SpectralError("physical values must be real")
    coeffs = to_spectral(values.astype(float))
    if project:
        coeffs = _parity_array(coeffs, parity.value, grid) * grid.mask
    return SpectralField(coeffs, parity, grid)


def inverse_transform(fld, *, check=True):
    n = fld.grid.npoints
    values = sfft.ifftn(fld.coeffs, workers=_workers()) * n
    if check:
        scale = np.max(np.abs(values)) if values.size else 0.0
        resid = np.max(np.abs(values.imag)) if values.size else 0.0
        if resid > IMAG_TOL * max(scale, 1e-300) and resid > 1e-300:
            raise SpectralError(
                f"imaginary residue {resid:.3e} exceeds tolerance "
                f"(relative to {scale:.3e}); Hermitian symmetry is broken")
    return values.real.copy()


def parity_project(fld, parity):
    return SpectralField(_parity_array(fld.coeffs, parity.value, fld.grid),
                         parity, fld.grid)


def gradient(fld):
    dkx, dky, dkz = fld.grid.tables["dk"]
    c = fld.coeffs
    return (SpectralField(1j * dkx * c, fld.parity, fld.grid),
            SpectralField(1j * dky * c, fld.parity, fld.grid),
            SpectralField(1j * dkz * c, fld.parity.flipped(), fld.grid))


def divergence(u1, u2, u3):
    dkx, dky, dkz = u1.grid.tables["dk"]
    c = 1j * (dkx * u1.coeffs + dky * u2.coeffs + dkz * u3.coeffs)
    return SpectralField(c, u1.parity, u1.grid)


def laplacian(fld):
    return fld.with_coeffs(-fld.grid.k2 * fld.coeffs)


def inverse_laplacian_zero_mean(fld):
    c0 = abs(fld.coeffs[0, 0, 0]) * np.sqrt(fld.grid.volume)
    if c0 > ZERO_MEAN_TOL * l2_norm(fld) and c0 > 0:
        raise SpectralError(
            f"inverse Laplacian needs a zero-mean field; mean part has "
            f"L2 norm {c0:.3e}")
    return fld.with_coeffs(-fld.grid.tables["inv_k2"] * fld.coeffs)


def _leray_arrays(c1, c2, c3, grid):
    dkx, dky, dkz = grid.tables["dk"]
    kdotu = (dkx * c1 + dky * c2 + dkz * c3) * grid.tables["inv_dk2"]
    return c1 - dkx * kdotu, c2 - dky * kdotu, c3 - dkz * kdotu


def leray_project(u1, u2, u3):
    c1, c2, c3 = _leray_arrays(u1.coeffs, u2.coeffs, u3.coeffs, u1.grid)
    return u1.with_coeffs(c1), u2.with_coeffs(c2), u3.with_coeffs(c3)


def dealias(fld):
    return fld.with_coeffs(fld.coeffs * fld.grid.mask)


def compute_lambda(grid):
    """Smallest nonzero |k|^2 among retained modes."""
    k2 = grid.k2[grid.mask]
    return float(np.min(k2[k2 > 0]))


def l2_norm(fld):
    return float(np.sqrt(fld.grid.volume * np.sum(np.abs(fld.coeffs) ** 2)))


def inner(f, g):
    return float(f.grid.volume * np.sum((f.coeffs * np.conj(g.coeffs)).real))


def physical_l2_norm(values, grid):
    return float(np.sqrt(grid.volume / grid.npoints * np.sum(values ** 2)))
