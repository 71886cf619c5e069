"""Integrating-factor Heun stepping for the truncated systems.

Diffusion is integrated exactly per mode; everything a ``tendency_fn``
returns (advection, Forchheimer drag, buoyancy, coupling, nudging) is
advanced with the two-stage Heun rule under the integrating factor::

    y*      = E (y_n + dt N(y_n))
    y_{n+1} = E (y_n + dt/2 N(y_n)) + dt/2 N(y*)

with ``E = exp(-diffusivity |k|^2 dt)``.  The rule is self-starting.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import State, _U_SIGNS, _clean_velocity
from .spectral import _parity_array, to_physical

log = logging.getLogger(__name__)

C_DAMP = 0.5


class BlowUpError(RuntimeError):
    """Non-finite values appeared; ``trajectory`` holds the partial run."""

    def __init__(self, time, trajectory=None):
        super().__init__(f"non-finite state detected at t={time:.6g}")
        self.time = time
        self.trajectory = trajectory


@dataclass(frozen=True)
class IntegratorConfig:
    t_end: float
    dt_init: float = 1e-3
    cfl_number: float = 0.5
    max_dt: float = 1e-2
    min_dt: float = 1e-8
    sample_every: int = 10
    keep_states: bool = False

    def __post_init__(self):
        bad = []
        if not 0 < self.cfl_number <= 1:
            bad.append(f"cfl_number={self.cfl_number} must lie in (0, 1]")
        if not 0 < self.min_dt <= self.dt_init <= self.max_dt:
            bad.append("need 0 < min_dt <= dt_init <= max_dt "
                       f"(got {self.min_dt}, {self.dt_init}, {self.max_dt})")
        if not self.t_end >= 0:
            bad.append(f"t_end={self.t_end} must be >= 0")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            bad.append(f"sample_every={self.sample_every} must be an integer >= 1")
        if bad:
            raise ValueError("; ".join(bad))

    @classmethod
    def fixed(cls, dt, t_end, sample_every=10, keep_states=False):
        return cls(t_end=t_end, dt_init=dt, max_dt=dt, min_dt=dt,
                   sample_every=sample_every, keep_states=keep_states)


@dataclass
class Trajectory:
    samples: list = field(default_factory=list)
    final_state: State | None = None
    checkpoints: list | None = None
    steps: int = 0

    @property
    def times(self):
        return np.array([t for t, _ in self.samples])

    @property
    def records(self):
        return [r for _, r in self.samples]


def _factors(grid, params, dt):
    k2 = grid.k2
    return np.exp(-params.nu * dt * k2), np.exp(-params.kappa * dt * k2)


def _finish(U, TH, grid):
    U = _clean_velocity(U, grid)
    TH = _parity_array(TH, -1.0, grid) * grid.mask
    return U, TH


def step_coupled(states, dt, params, tendency_fn):
    """Advance several states together with one shared stage structure.

    ``tendency_fn(stage_states, params)`` returns one explicit tendency per
    state, so a system can read another system's state at the same stage.
    """
    if not dt > 0:
        raise ValueError(f"dt={dt} must be positive")
    grid = states[0].grid
    Eu, Et = _factors(grid, params, dt)
    U0 = [s.u_coeffs() for s in states]
    T0 = [s.theta.coeffs for s in states]
    n0 = tendency_fn(states, params)
    NU0 = [n.du_coeffs() for n in n0]
    NT0 = [n.dtheta.coeffs for n in n0]
    t1 = states[0].time + dt
    stage = [State.from_arrays(Eu * (u + dt * nu), Et * (t + dt * nt), grid, t1)
             for u, t, nu, nt in zip(U0, T0, NU0, NT0)]
    n1 = tendency_fn(stage, params)
    out = []
    for u, t, nu, nt, m in zip(U0, T0, NU0, NT0, n1):
        U1 = Eu * (u + 0.5 * dt * nu) + 0.5 * dt * m.du_coeffs()
        T1 = Et * (t + 0.5 * dt * nt) + 0.5 * dt * m.dtheta.coeffs
        U1, T1 = _finish(U1, T1, grid)
        if not (np.all(np.isfinite(U1)) and np.all(np.isfinite(T1))):
            raise BlowUpError(t1)
        out.append(State.from_arrays(U1, T1, grid, t1))
    return out


def step(state, dt, params, tendency_fn):
    """Advance ``state`` by ``dt``; ``tendency_fn`` gives the explicit part."""
    return step_coupled([state], dt, params,
                        lambda ss, p: [tendency_fn(ss[0], p)])[0]


def max_speed(state):
    u = to_physical(state.u_coeffs())
    return float(np.sqrt(np.max(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)))


def adaptive_dt(state, params, config, umax=None):
    """CFL and explicit-damping limited step, clamped to ``[min_dt, max_dt]``."""
    if umax is None:
        umax = max_speed(state)
    if umax == 0:
        return config.max_dt
    cfl = config.cfl_number * state.grid.dx_min / umax
    damp = C_DAMP / (params.a * umax ** (2 * params.alpha))
    return float(min(max(min(cfl, damp, config.max_dt), config.min_dt),
                     config.max_dt))


def integrate(state0, params, config, tendency_fn, observers=(),
              diagnostics=None):
    """Advance to ``config.t_end`` and collect samples.

    ``observers`` are called as ``obs(state, step_index)`` at step 0 and every
    ``sample_every`` steps (and at the final state).  ``diagnostics`` maps
    ``(state, params, dt)`` to the record stored with each sample; the default
    is :func:`bfb.diagnostics.sample_record`.
    """
    if diagnostics is None:
        from .diagnostics import sample_record as diagnostics
    if abs(state0.grid.L - params.L) > 1e-14 * params.L:
        raise ValueError("state grid and physical parameters disagree on L")
    traj = Trajectory(checkpoints=[] if config.keep_states else None)
    t_end = config.t_end

    def sample(state, n, dt):
        traj.samples.append((state.time, diagnostics(state, params, dt)))
        if traj.checkpoints is not None:
            traj.checkpoints.append(state)
        for obs in observers:
            obs(state, n)

    state = state0
    sample(state, 0, 0.0)
    n = 0
    eps = 1e-12 * max(t_end, 1.0)
    while state.time < t_end - eps:
        dt = adaptive_dt(state, params, config)
        dt = min(dt, t_end - state.time)
        try:
            new = step(state, dt, params, tendency_fn)
        except BlowUpError as err:
            traj.final_state = state
            traj.steps = n
            err.trajectory = traj
            raise
        n += 1
        state = new
        done = state.time >= t_end - eps
        if done:
            state = state.at_time(t_end)
        if n % config.sample_every == 0 or done:
            sample(state, n, dt)
    traj.final_state = state
    traj.steps = n
    return traj
