"""Explicit central-difference time integration and error norms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import AssembledSystem, ProblemData

BLOWUP_FACTOR = 1e6


class InstabilityError(RuntimeError):
    """Raised when the displacement norm exceeds the blow-up guard."""

    def __init__(self, step: int, norm: float, dt: float):
        super().__init__(f"central difference unstable: |u| = {norm:.3e} at step {step} "
                         f"(dt = {dt:.4e})")
        self.step = step
        self.norm = norm
        self.dt = dt


@dataclass(frozen=True)
class TimeIntegrationConfig:
    """Step size, horizon, safety factor and output stride.

    Every ``stride``-th state is kept; the final state always is.

    When ``dt`` is omitted the step is ``T / ceil(T / (safety * dt_crit))``,
    the largest step not above ``safety * dt_crit`` that lands on ``T``.
    """

    T: float
    dt: float | None = None
    safety: float = 0.85
    stride: int = 1

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")

    def step_size(self, dt_crit: float | None = None) -> tuple[float, int]:
        """``(dt, number of steps)``."""
        if self.dt is not None:
            return self.dt, int(math.floor(self.T / self.dt + 1e-9))
        if dt_crit is None:
            raise ValueError("dt_crit is needed when dt is not given")
        n = int(math.ceil(self.T / (self.safety * dt_crit) - 1e-12))
        return self.T / n, n


@dataclass
class TransientSolution:
    times: np.ndarray
    history: np.ndarray
    dt: float
    steps: int
    energy: list = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.history[-1]


def mass_inverse(system: AssembledSystem):
    """Callable applying ``M^{-1}``; entrywise for a diagonal mass, else a
    sparse LU factorization computed once."""
    if system.mass_is_diagonal:
        d = system.lumped.copy()
        return lambda r: r / d
    lu = spla.splu(sp.csc_matrix(system.mass))
    return lu.solve


def project(system: AssembledSystem, basis, quad, func) -> np.ndarray:
    """Coefficients of the mass-weighted projection of ``func(x)``.

    Uses the consistent mass (plus any ghost mass) regardless of lumping.
    """
    if func is None:
        return np.zeros(system.n_dofs)
    n = basis.n_dofs
    rhs = np.zeros(n)
    for e, (pts, wts) in quad.volume.items():
        ev = basis.eval_element(e, pts, 0)
        vals = np.broadcast_to(np.asarray(func(pts), dtype=float), (pts.shape[0],))
        np.add.at(rhs, ev.dofs, system.spec.rho * ev.values().T @ (wts * vals))
    M = system.projection_mass if system.projection_mass is not None else system.mass
    return spla.splu(sp.csc_matrix(M)).solve(rhs[system.active])


def central_difference_solve(system: AssembledSystem, cfg: TimeIntegrationConfig,
                             data: ProblemData | None = None, u0=None, v0=None,
                             dt_crit: float | None = None, energy_log: bool = False
                             ) -> TransientSolution:
    """March ``M u'' + K u = F(t)`` with the explicit central-difference scheme.

    ``u0``/``v0`` are initial coefficients; pass the projections of the
    initial data (see :func:`project`). The start-up value is
    ``u_{-1} = u_0 - dt v_0 + dt^2 a_0 / 2``.
    """
    data = data or ProblemData()
    dt, nsteps = cfg.step_size(dt_crit)
    n = system.n_dofs
    u = np.zeros(n) if u0 is None else np.array(u0, dtype=float)
    v = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
    K, M = system.stiffness, system.mass
    solve = mass_inverse(system)
    has_load = bool(system.load.terms)

    def accel(t, x):
        rhs = -(K @ x)
        if has_load:
            rhs += system.load(t, data)
        return solve(rhs)

    a0 = accel(0.0, u)
    prev = u - dt * v + 0.5 * dt * dt * a0
    ref = max(np.linalg.norm(u), dt * np.linalg.norm(v), 1e-300)
    times, hist, energy = [0.0], [u.copy()], []
    for k in range(nsteps):
        t = k * dt
        a = a0 if k == 0 else accel(t, u)
        nxt = 2.0 * u - prev + dt * dt * a
        if energy_log:
            vel = (nxt - prev) / (2.0 * dt)
            energy.append((k, t, 0.5 * vel @ (M @ vel), 0.5 * u @ (K @ u)))
        prev, u = u, nxt
        norm = np.linalg.norm(u)
        if not np.isfinite(norm) or norm > BLOWUP_FACTOR * ref:
            raise InstabilityError(k + 1, norm, dt)
        if (k + 1) % cfg.stride == 0 or k + 1 == nsteps:
            times.append((k + 1) * dt)
            hist.append(u.copy())
    return TransientSolution(np.array(times), np.array(hist), dt, nsteps, energy)


def discrete_energy(system: AssembledSystem, u, v) -> float:
    """``(v^T M v + u^T K u) / 2``."""
    return 0.5 * float(v @ (system.mass @ v) + u @ (system.stiffness @ u))


def compute_error_norms(coefficients, exact, exact_gradient, basis, quad, active=None):
    """Relative ``L2`` and ``H1_0`` (gradient) errors over the cut domain.

    ``exact(x)`` returns values and ``exact_gradient(x)`` an array
    ``(npts, d)``. ``coefficients`` live on ``active`` when it is given.
    """
    full = np.zeros(basis.n_dofs)
    if active is None:
        full[:] = coefficients
    else:
        full[np.asarray(active)] = coefficients
    e0 = n0 = e1 = n1 = 0.0
    for e, (pts, wts) in quad.volume.items():
        ev = basis.eval_element(e, pts, 1)
        c = full[ev.dofs]
        uh = ev.values() @ c
        gh = np.einsum("qik,i->qk", ev.gradient(), c)
        ue = np.asarray(exact(pts), dtype=float)
        ge = np.asarray(exact_gradient(pts), dtype=float).reshape(gh.shape)
        e0 += float(wts @ (uh - ue) ** 2)
        n0 += float(wts @ ue ** 2)
        e1 += float(wts @ ((gh - ge) ** 2).sum(axis=1))
        n1 += float(wts @ (ge ** 2).sum(axis=1))
    if n0 == 0 or n1 == 0:
        raise ZeroDivisionError("exact field has zero norm")
    return math.sqrt(e0 / n0), math.sqrt(e1 / n1)
