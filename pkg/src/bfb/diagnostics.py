"""Norms, closed-form absorbing-ball radii and bound checkers."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .model import conduction_unshift, half_domain_z
from .spectral import to_physical


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class Norms:
    u_H0: float
    theta_H1: float
    u_V0dot: float
    theta_V1: float
    u_L2a2: float
    theta_Hm1: float
    dtu_L2: float | None = None

    @property
    def energy(self):
        return self.u_H0 ** 2 + self.theta_H1 ** 2


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One row of the diagnostics CSV; assimilation columns may be ``None``."""

    time: float
    u_H0: float
    theta_H1: float
    u_V0dot: float
    theta_V1: float
    u_L2a2: float
    theta_Hm1: float
    e_H0: float | None = None
    e_Hm1: float | None = None
    e_V0dot: float | None = None
    dt: float | None = None

    @property
    def energy(self):
        return self.u_H0 ** 2 + self.theta_H1 ** 2

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]


def _sumsq(C, weight=None):
    a = np.abs(C) ** 2
    if weight is not None:
        a = a * weight
    return float(np.sum(a))


def lp_norm_velocity(state, p):
    u = to_physical(state.u_coeffs())
    mag = np.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    grid = state.grid
    return float((grid.volume / grid.npoints * np.sum(mag ** p)) ** (1.0 / p))


def compute_norms(state, params):
    grid = state.grid
    vol = grid.volume
    U = state.u_coeffs()
    TH = state.theta.coeffs
    dk2 = grid.tables["dk2"]
    return Norms(
        u_H0=math.sqrt(vol * _sumsq(U)),
        theta_H1=math.sqrt(vol * _sumsq(TH)),
        u_V0dot=math.sqrt(vol * _sumsq(U, dk2)),
        theta_V1=math.sqrt(vol * _sumsq(TH, dk2)),
        u_L2a2=lp_norm_velocity(state, 2 * params.alpha + 2),
        theta_Hm1=math.sqrt(vol * _sumsq(TH, grid.tables["inv_k2"])),
    )


def sample_record(state, params, dt=None):
    n = compute_norms(state, params)
    return DiagnosticsRecord(state.time, n.u_H0, n.theta_H1, n.u_V0dot,
                             n.theta_V1, n.u_L2a2, n.theta_Hm1, dt=dt)


def time_derivative_norms(states, params):
    """Central-difference estimates of ||d_t u||_2 at interior states.

    Returns ``None`` unless the spacing resolves the slowest diffusion time
    ``1/(nu lambda)`` with at least three states.
    """
    if len(states) < 3:
        return None
    times = np.array([s.time for s in states])
    spacing = np.max(np.diff(times))
    if spacing > 1.0 / (3 * params.nu * params.lam):
        return None
    vol = states[0].grid.volume
    out = []
    for i in range(1, len(states) - 1):
        dU = (states[i + 1].u_coeffs() - states[i - 1].u_coeffs()) / (
            times[i + 1] - times[i - 1])
        out.append((times[i], math.sqrt(vol * _sumsq(dU))))
    return out


# -- closed-form bounds --------------------------------------------------------

@dataclass(frozen=True)
class BoundSet:
    """Absorbing-ball constants.

    ``gamma0``/``gamma1`` are the published constants; ``gamma0_alt`` and
    ``gamma1_alt`` redo the Young-inequality step with |Omega| = 2 L^2, which
    yields the exponent ``-(alpha+1)/alpha`` instead of ``+(alpha+1)/alpha``.
    """

    gamma0: float
    gamma1: float
    gamma2: float | None
    r_weak: float
    r_grad: float | None
    gamma0_alt: float
    gamma1_alt: float
    r_grad_alt: float | None


def _r_grad(g1, g2, a, L, nu):
    return (g2 * ((a + 1) * g1 + 4 * a * L ** 2) + (3 + a) * g1
            + 4 * a * L ** 2) / (2 * nu)


def compute_bounds(params):
    a, k, lam, al, L, nu = (params.a, params.kappa, params.lam, params.alpha,
                            params.L, params.nu)
    if al == 1:
        raise BoundsError("alpha = 1: gamma2 = (a nu^alpha / 2^(2-alpha))^"
                          "(1/(1-alpha)) is undefined")
    if al <= 0:
        raise BoundsError(f"alpha={al}: the bound constants need alpha > 0")
    eps = 2 * a * k * lam / (a * k * lam + 32)
    rate = min(a, k * lam)
    g0 = 2 * eps ** ((al + 1) / al) * a * L ** 2
    g1 = eps ** ((al + 1) / al) * 4 * a * L ** 2 / rate
    g0_alt = 2 * a * L ** 2 * eps ** (-(al + 1) / al)
    g1_alt = 2 * g0_alt / rate
    if al > 1:
        g2 = (a * nu ** al / 2 ** (2 - al)) ** (1 / (1 - al))
        rg = _r_grad(g1, g2, a, L, nu)
        rg_alt = _r_grad(g1_alt, g2, a, L, nu)
    else:
        g2 = rg = rg_alt = None
    return BoundSet(g0, g1, g2, g1, rg, g0_alt, g1_alt, rg_alt)


def uniform_gronwall_bound(a1, a2, a3, s):
    if not s > 0:
        raise ValueError(f"s={s} must be positive")
    if min(a1, a2, a3) < 0:
        raise ValueError("a1, a2, a3 must be non-negative")
    return (a3 / s + a2) * math.exp(a1)


# -- trajectory checks ------------------------------------------------------

@dataclass(frozen=True)
class BallReport:
    window: tuple
    energy_max: float
    gamma1: float
    energy_pass: bool
    energy_margin: float
    grad_max: float
    r_grad: float | None
    grad_pass: bool | None
    grad_margin: float | None
    envelope_pass: bool
    envelope_worst: float
    gamma1_alt: float
    energy_pass_alt: bool

    @property
    def passed(self):
        ok = self.energy_pass and self.envelope_pass
        return ok and (self.grad_pass is not False)


def _as_records(trajectory):
    if hasattr(trajectory, "samples"):
        return trajectory.records
    return list(trajectory)


def check_absorbing_ball(trajectory, bounds, window=None, rel_tol=0.0):
    """Trailing-window checks against gamma1 and r_grad plus the decay envelope.

    ``window`` defaults to the last half of the run.  The envelope check
    compares ``E(t)`` with ``(E(0) exp(-min(a, kappa lambda) t / 2) + gamma1)``
    inflated by ``1 + rel_tol``.  The decay rate is recovered from the bound
    set itself through ``gamma1 min(a, kappa lambda) = 2 gamma0``.
    """
    recs = _as_records(trajectory)
    if len(recs) < 2:
        raise ValueError("trajectory too short: need at least two samples")
    t = np.array([r.time for r in recs])
    span = t[-1] - t[0]
    if window is None:
        window = 0.5 * span
    if span < 2 * window or span <= 0:
        raise ValueError(
            f"trajectory too short: span {span:.4g} < 2 x window {window:.4g}")
    E = np.array([r.energy for r in recs])
    G = np.array([r.u_V0dot ** 2 for r in recs])
    sel = t >= t[-1] - window
    emax = float(np.max(E[sel]))
    gmax = float(np.max(G[sel]))
    rate = 2 * bounds.gamma0 / bounds.gamma1
    env = (E[0] * np.exp(-rate * (t - t[0]) / 2) + bounds.gamma1) * (1 + rel_tol)
    worst = float(np.max(E / env))
    if bounds.r_grad is None:
        gpass = gmargin = None
    else:
        gpass = gmax <= bounds.r_grad
        gmargin = bounds.r_grad - gmax
    return BallReport(
        window=(float(t[-1] - window), float(t[-1])),
        energy_max=emax, gamma1=bounds.gamma1,
        energy_pass=emax <= bounds.gamma1,
        energy_margin=bounds.gamma1 - emax,
        grad_max=gmax, r_grad=bounds.r_grad, grad_pass=gpass,
        grad_margin=gmargin,
        envelope_pass=worst <= 1.0, envelope_worst=worst,
        gamma1_alt=bounds.gamma1_alt, energy_pass_alt=emax <= bounds.gamma1_alt,
    )


@dataclass(frozen=True)
class MaxPrincipleReport:
    times: list
    t_min: list
    t_max: list
    initial_admissible: bool
    in_range: bool
    tol: float

    @property
    def passed(self):
        return self.initial_admissible and self.in_range


def max_principle_check(states, tol=0.02, initial_tol=1e-12):
    """Reconstruct ``T = theta + 1 - z`` on the physical layer and bound it."""
    times, lo, hi = [], [], []
    for s in states:
        T = conduction_unshift(s.theta)
        times.append(s.time)
        lo.append(float(T.min()))
        hi.append(float(T.max()))
    initial = bool(lo and lo[0] >= -initial_tol and hi[0] <= 1 + initial_tol)
    ok = all(a >= -tol and b <= 1 + tol for a, b in zip(lo, hi))
    return MaxPrincipleReport(times, lo, hi, initial, ok, tol)


def monotonicity_ratio(u, v, alpha):
    """Row-wise strong-monotonicity ratio; NaN where ``u == v``."""
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    if alpha == 0:
        fu, fv = u, v
    else:
        fu = (nu ** (2 * alpha))[..., None] * u
        fv = (nv ** (2 * alpha))[..., None] * v
    d = u - v
    num = np.sum((fu - fv) * d, axis=-1)
    d2 = np.sum(d * d, axis=-1)
    den = d2 * (nu + nv) ** (2 * alpha)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(d2 > 0, num / np.where(d2 > 0, den, 1.0), np.nan)


def monotonicity_check(alpha, n_samples=100_000, rng_seed=0):
    """Empirical lower bound of the monotonicity ratio over random pairs.

    Half the pairs are drawn with independent magnitudes spread over four
    decades; the other half with ``|u| = |v|``, the shell on which the ratio
    attains ``2^(-2 alpha)``.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if n_samples < 10_000:
        raise ValueError("n_samples must be >= 1e4")
    rng = np.random.default_rng(rng_seed)
    u = rng.standard_normal((n_samples, 3))
    v = rng.standard_normal((n_samples, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    ru = 10.0 ** rng.uniform(-2, 2, n_samples)
    rv = 10.0 ** rng.uniform(-2, 2, n_samples)
    half = n_samples // 2
    rv[half:] = ru[half:]
    u *= ru[:, None]
    v *= rv[:, None]
    R = monotonicity_ratio(u, v, alpha)
    R = R[~np.isnan(R)]
    if np.any(R < 0):
        return float(R.min()), False
    delta = float(R.min())
    return delta, delta > 0


def _diff_norms(ref, other):
    grid = ref.grid
    if not grid.compatible(other.grid):
        raise ValueError("states live on different grids")
    vol = grid.volume
    dU = ref.u_coeffs() - other.u_coeffs()
    dT = ref.theta.coeffs - other.theta.coeffs
    return (math.sqrt(vol * _sumsq(dU)),
            math.sqrt(vol * _sumsq(dT, grid.tables["inv_k2"])),
            math.sqrt(vol * _sumsq(dU, grid.tables["dk2"])))


def sync_error(state_ref, state_nudged, params=None):
    """``(||u - v||_H0, ||theta - eta||_H^-1, ||u - v||_V0dot)``."""
    return _diff_norms(state_ref, state_nudged)
