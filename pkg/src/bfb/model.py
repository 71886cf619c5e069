"""State, conduction change of variables and right-hand sides.

The momentum tendency is::

    du/dt = -nu A0 u - P[(u.grad)u] - a P[|u|^(2 alpha) u] + P[theta e3]
    dtheta/dt = -kappa A1 theta - (u.grad)theta + u3

with every nonlinear product dealiased.  ``explicit_*`` functions return the
tendency without the diffusion terms; the integrator treats diffusion exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    Parity, SpectralField, _leray_arrays, _parity_array,
    forward_transform, inverse_laplacian_zero_mean,
    inverse_transform, to_physical, to_spectral, zeros,
)

U_PARITY = (Parity.EVEN, Parity.EVEN, Parity.ODD)
THETA_PARITY = Parity.ODD
_U_SIGNS = np.array([1.0, 1.0, -1.0])[:, None, None, None]

BOUNDARY_TOL = 1e-8


class ConductionError(ValueError):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    nu: float
    kappa: float
    a: float
    alpha: float
    L: float

    def __post_init__(self):
        bad = [f"{k}={getattr(self, k)} must be > 0"
               for k in ("nu", "kappa", "a", "L") if not getattr(self, k) > 0]
        if not self.alpha >= 0:
            bad.append(f"alpha={self.alpha} must be >= 0")
        if bad:
            raise ValueError("; ".join(bad))

    @property
    def lam(self):
        return min((2 * np.pi / self.L) ** 2, np.pi ** 2)

    @property
    def exploratory(self):
        """No uniqueness theory backs runs with alpha <= 1."""
        return self.alpha <= 1


@dataclass(frozen=True, eq=False)
class State:
    u: tuple
    theta: SpectralField
    time: float = 0.0

    @property
    def grid(self):
        return self.theta.grid

    def u_coeffs(self):
        return np.stack([c.coeffs for c in self.u])

    @classmethod
    def from_arrays(cls, U, TH, grid, time=0.0):
        u = tuple(SpectralField(U[i], U_PARITY[i], grid) for i in range(3))
        return cls(u, SpectralField(TH, THETA_PARITY, grid), float(time))

    @classmethod
    def zero(cls, grid, time=0.0):
        return cls(tuple(zeros(grid, p) for p in U_PARITY),
                   zeros(grid, THETA_PARITY), float(time))

    def at_time(self, time):
        return State(self.u, self.theta, float(time))

    def violations(self, tol=1e-12):
        """Human-readable list of broken State invariants."""
        out = []
        grid = self.grid
        if tuple(f.parity for f in self.u) != U_PARITY:
            out.append("velocity parities are not (even, even, odd)")
        if self.theta.parity is not THETA_PARITY:
            out.append("theta is not odd in z")
        U = self.u_coeffs()
        scale = max(np.max(np.abs(U)), 1e-300)
        P = np.stack(_leray_arrays(U[0], U[1], U[2], grid))
        if np.max(np.abs(P - U)) > tol * scale:
            out.append("velocity is not divergence-free")
        par = _parity_array(U, _U_SIGNS, grid)
        if np.max(np.abs(par - U)) > tol * scale:
            out.append("velocity coefficients violate their parity")
        th = self.theta.coeffs
        tscale = max(np.max(np.abs(th)), 1e-300)
        if np.max(np.abs(_parity_array(th, -1.0, grid) - th)) > tol * tscale:
            out.append("theta coefficients are not odd in q")
        return out


@dataclass(frozen=True, eq=False)
class Tendency:
    du: tuple
    dtheta: SpectralField

    def du_coeffs(self):
        return np.stack([c.coeffs for c in self.du])

    @classmethod
    def from_arrays(cls, dU, dTH, grid):
        du = tuple(SpectralField(dU[i], U_PARITY[i], grid) for i in range(3))
        return cls(du, SpectralField(dTH, THETA_PARITY, grid))

    def __add__(self, other):
        return Tendency(tuple(a + b for a, b in zip(self.du, other.du)),
                        self.dtheta + other.dtheta)


# -- conduction state change of variables ----------------------------------

def half_domain_z(grid):
    """z samples of the physical layer [0, 1] (``nz/2 + 1`` points)."""
    return np.arange(grid.nz // 2 + 1) * 2.0 / grid.nz


def conduction_shift(T_physical, grid):
    """Temperature on the physical layer to the odd-extended fluctuation.

    ``T_physical`` has shape ``(nx, ny, nz/2 + 1)`` sampled at
    ``half_domain_z(grid)``.
    """
    T = np.asarray(T_physical, dtype=float)
    nh = grid.nz // 2
    if T.shape != (grid.nx, grid.ny, nh + 1):
        raise ConductionError(
            f"expected half-domain shape {(grid.nx, grid.ny, nh + 1)}, "
            f"got {T.shape}")
    bottom = np.max(np.abs(T[..., 0] - 1.0))
    top = np.max(np.abs(T[..., -1]))
    if bottom > BOUNDARY_TOL or top > BOUNDARY_TOL:
        raise ConductionError(
            f"boundary values deviate from T(z=0)=1, T(z=1)=0 "
            f"(errors {bottom:.3e}, {top:.3e})")
    z = half_domain_z(grid)
    th = T - (1.0 - z)
    th[..., 0] = 0.0
    th[..., -1] = 0.0
    full = np.empty(grid.shape)
    # index nh is z = 0; index j < nh holds z = -(nh - j) dz
    full[..., nh:] = th[..., :nh]
    full[..., 1:nh] = -th[..., nh - 1:0:-1]
    full[..., 0] = 0.0
    return forward_transform(full, THETA_PARITY, grid)


def conduction_unshift(theta):
    grid = theta.grid
    nh = grid.nz // 2
    vals = inverse_transform(theta)
    # z = 1 is the periodic image of z = -1 (index 0)
    half = np.concatenate([vals[..., nh:], vals[..., :1]], axis=-1)
    return half + (1.0 - half_domain_z(grid))


# -- nonlinear terms ---------------------------------------------------------

def _grad_physical(C, grid):
    """Physical-space gradients of stacked coefficient arrays.

    Returns shape ``(3,) + C.shape``: index 0 is the derivative direction.
    """
    dkx, dky, dkz = grid.tables["dk"]
    D = np.stack([1j * dkx * C, 1j * dky * C, 1j * dkz * C])
    return to_physical(D)


def _forch_physical(u, a, alpha):
    s = u[0] ** 2 + u[1] ** 2 + u[2] ** 2
    if alpha == 0:
        return a * u
    return a * np.power(s, alpha) * u


def _clean_velocity(C, grid, project=True):
    C = _parity_array(C, _U_SIGNS, grid) * grid.mask
    if project:
        C = np.stack(_leray_arrays(C[0], C[1], C[2], grid))
    return C


def _advection_physical(u, gradv):
    # gradv[j, i] = d_j v_i
    return np.einsum("j...,ji...->i...", u, gradv)


def advect_velocity(u, target_u):
    """Projected, dealiased ``(u.grad) v``."""
    grid = u[0].grid
    up = to_physical(np.stack([c.coeffs for c in u]))
    gv = _grad_physical(np.stack([c.coeffs for c in target_u]), grid)
    N = to_spectral(_advection_physical(up, gv))
    N = _clean_velocity(N, grid)
    return tuple(SpectralField(N[i], U_PARITY[i], grid) for i in range(3))


def advect_velocity_unprojected(u, target_u):
    grid = u[0].grid
    up = to_physical(np.stack([c.coeffs for c in u]))
    gv = _grad_physical(np.stack([c.coeffs for c in target_u]), grid)
    N = _clean_velocity(to_spectral(_advection_physical(up, gv)), grid,
                        project=False)
    return tuple(SpectralField(N[i], U_PARITY[i], grid) for i in range(3))


def advect_scalar(u, theta):
    grid = theta.grid
    up = to_physical(np.stack([c.coeffs for c in u]))
    gt = _grad_physical(theta.coeffs, grid)
    c = to_spectral(np.sum(up * gt, axis=0))
    c = _parity_array(c, theta.parity.value, grid) * grid.mask
    return SpectralField(c, theta.parity, grid)


def forchheimer(u, a, alpha):
    """Dealiased ``a |u|^(2 alpha) u``; not Leray-projected."""
    grid = u[0].grid
    up = to_physical(np.stack([c.coeffs for c in u]))
    F = _clean_velocity(to_spectral(_forch_physical(up, a, alpha)), grid,
                        project=False)
    return tuple(SpectralField(F[i], U_PARITY[i], grid) for i in range(3))


# -- tendencies --------------------------------------------------------------

def _explicit_arrays(U, TH, params, grid):
    up = to_physical(U)
    g = _grad_physical(np.concatenate([U, TH[None]]), grid)
    # g[j, i] = d_j of field i; fields 0..2 velocity, 3 theta
    nonlin = _advection_physical(up, g[:, :3]) + _forch_physical(
        up, params.a, params.alpha)
    scal = np.sum(up * g[:, 3], axis=0)
    NU = _parity_array(to_spectral(nonlin), _U_SIGNS, grid) * grid.mask
    NT = _parity_array(to_spectral(scal), -1.0, grid) * grid.mask
    rhs = -NU
    rhs[2] += TH
    dU = np.stack(_leray_arrays(rhs[0], rhs[1], rhs[2], grid))
    dTH = -NT + U[2]
    return dU, dTH


def explicit_reference(state, params):
    """All non-diffusive terms of the reference system."""
    grid = state.grid
    dU, dTH = _explicit_arrays(state.u_coeffs(), state.theta.coeffs, params,
                               grid)
    return Tendency.from_arrays(dU, dTH, grid)


def zero_explicit(state, params):
    """Test hook that switches off every non-diffusive term."""
    grid = state.grid
    return Tendency.from_arrays(np.zeros((3,) + grid.shape, complex),
                                np.zeros(grid.shape, complex), grid)


def diffusion(state, params):
    k2 = state.grid.k2
    return Tendency.from_arrays(-params.nu * k2 * state.u_coeffs(),
                                -params.kappa * k2 * state.theta.coeffs,
                                state.grid)


def tendency_reference(state, params):
    return diffusion(state, params) + explicit_reference(state, params)


def nudging_term(v, observed_u_perp, mu, interpolant):
    """``mu P (I_h(u_perp) - I_h(v_perp), 0)`` as three coefficient arrays."""
    if not mu > 0:
        raise ValueError(f"mu={mu}: nudging parameter must be > 0")
    grid = v[0].grid
    d1 = observed_u_perp[0].coeffs - interpolant(v[0]).coeffs
    d2 = observed_u_perp[1].coeffs - interpolant(v[1]).coeffs
    C = np.stack([d1, d2, np.zeros_like(d1)]) * mu
    return _clean_velocity(C, grid)


def explicit_nudged(state_v, observed_u_perp, params, mu, interpolant):
    grid = state_v.grid
    dU, dTH = _explicit_arrays(state_v.u_coeffs(), state_v.theta.coeffs,
                               params, grid)
    dU = dU + nudging_term(state_v.u, observed_u_perp, mu, interpolant)
    return Tendency.from_arrays(dU, dTH, grid)


def tendency_nudged(state_v, observed_u_perp, params, mu, interpolant):
    return diffusion(state_v, params) + explicit_nudged(
        state_v, observed_u_perp, params, mu, interpolant)


def make_nudged_explicit(observations, mu, interpolant):
    """Integrator-ready explicit tendency reading ``observations(t)``."""
    if not mu > 0:
        raise ValueError(f"mu={mu}: nudging parameter must be > 0")

    def fn(state, params):
        return explicit_nudged(state, observations(state.time), params, mu,
                               interpolant)
    return fn


def recover_pressure(state, params):
    """Zero-mean pressure from ``lap p = div(-N(u,u) - a|u|^2a u + theta e3)``."""
    grid = state.grid
    adv = advect_velocity_unprojected(state.u, state.u)
    F = forchheimer(state.u, params.a, params.alpha)
    rhs = [-(adv[i].coeffs + F[i].coeffs) for i in range(3)]
    rhs[2] = rhs[2] + state.theta.coeffs
    dkx, dky, dkz = grid.tables["dk"]
    div = 1j * (dkx * rhs[0] + dky * rhs[1] + dkz * rhs[2])
    return inverse_laplacian_zero_mean(SpectralField(div, Parity.EVEN, grid))


# -- initial data ------------------------------------------------------------

def random_field_coeffs(grid, rng, parity, k0=None):
    """Random real, parity-consistent, dealiased coefficients.

    Amplitudes follow a Gaussian envelope ``exp(-|k|^2 / (2 k0^2))``.
    """
    if k0 is None:
        k0 = 4 * np.pi
    raw = (rng.standard_normal(grid.shape)
           + 1j * rng.standard_normal(grid.shape))
    raw *= np.exp(-grid.k2 / (2 * k0 ** 2)) * grid.mask
    vals = to_physical(raw)
    c = to_spectral(vals)
    return _parity_array(c, parity.value, grid) * grid.mask


def random_state(grid, rng, energy, k0=None, theta_fraction=0.5):
    """Random divergence-free state with ``|u|^2 + |theta|^2 = energy``."""
    U = np.stack([random_field_coeffs(grid, rng, p, k0) for p in U_PARITY])
    U = np.stack(_leray_arrays(U[0], U[1], U[2], grid))
    TH = random_field_coeffs(grid, rng, THETA_PARITY, k0)
    eu = grid.volume * np.sum(np.abs(U) ** 2)
    et = grid.volume * np.sum(np.abs(TH) ** 2)
    if energy > 0:
        U *= np.sqrt((1 - theta_fraction) * energy / eu)
        TH *= np.sqrt(theta_fraction * energy / et)
    else:
        U[:] = 0
        TH[:] = 0
    return State.from_arrays(U, TH, grid)


def admissible_theta(theta, margin=0.9):
    """Rescale ``theta`` so that ``T = 1 - z + theta`` lies in [0, 1] on Omega_r."""
    grid = theta.grid
    vals = conduction_unshift(theta) - (1.0 - half_domain_z(grid))
    z = np.broadcast_to(half_domain_z(grid), vals.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(vals > 0, z / vals, np.inf)
        down = np.where(vals < 0, (1 - z) / -vals, np.inf)
    s = min(np.min(up), np.min(down), 1.0 / margin)
    return theta * (margin * s)
