"""Generalized eigenvalues, critical time steps, cut probes and scaling fits.

The dense path reduces ``K x = lambda M x`` to a standard symmetric problem
by a Cholesky congruence and diagonalizes it with cyclic Jacobi rotations.
The iterative path runs power iteration on ``M^{-1} K`` in the mass inner
product. Cut probes are single functions or strips of functions with unit
coefficients whose generalized Rayleigh quotient exposes the dependence of the
largest eigenvalue on the cut size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cutquad import build_cut_quadrature, compute_cut_metrics
from .geometry import (BOUNDARY_TAGS, DIRICHLET, BackgroundMesh, HalfSpace, ImplicitDomain,
                       extract_ghost_faces)
from .splines import build_open_uniform_basis

DENSE_LIMIT = 500
JACOBI_TOL = 1e-10
POWER_TOL = 1e-8
POWER_MAXITER = 10_000
PROBE_KINDS = ("corner1", "corner2", "sliver1", "sliver2")


class NonPositiveMassError(ValueError):
    """The mass matrix failed its positive-definiteness check."""


class ConvergenceError(RuntimeError):
    """An iterative eigensolver did not reach its tolerance."""


@dataclass(frozen=True)
class SpectralResult:
    lambda_max: float
    lambda_min: float
    dt_crit: float
    chi_min: float = 1.0
    tag: str = ""
    seed: int | None = None


# --------------------------------------------------------------------------
# Dense Jacobi path


@numba.njit(cache=True)
def _jacobi_sweeps(A0, tol, max_sweeps):
    """Cyclic Jacobi in round-robin order; returns (eigenvalues, sweeps used).

    Each round applies ``n/2`` disjoint rotations, first to rows and then to
    columns with the row index outermost, so every update walks a contiguous
    row. One sweep visits every index pair once.
    """
    n = A0.shape[0]
    m = n + (n % 2)
    A = A0.copy()
    idx = np.arange(m)
    half = m // 2
    cs = np.empty(half)
    sn = np.empty(half)
    P = np.empty(half, np.int64)
    Q = np.empty(half, np.int64)
    for sweep in range(max_sweeps):
        off = 0.0
        diag = 0.0
        for i in range(n):
            diag += A[i, i] ** 2
            for j in range(i + 1, n):
                off += A[i, j] ** 2
        if np.sqrt(2.0 * off) <= tol * np.sqrt(diag + 2.0 * off):
            return np.diag(A).copy(), sweep
        for _ in range(m - 1):
            npair = 0
            for i in range(half):
                p = min(idx[i], idx[m - 1 - i])
                q = max(idx[i], idx[m - 1 - i])
                if q >= n:
                    continue
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app = A[p, p]
                aqq = A[q, q]
                if abs(apq) <= 1e-18 * np.sqrt(abs(app * aqq)):
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                P[npair] = p
                Q[npair] = q
                cs[npair] = c
                sn[npair] = t * c
                npair += 1
            for j in range(npair):
                p = P[j]
                q = Q[j]
                c = cs[j]
                s = sn[j]
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
            for k in range(n):
                for j in range(npair):
                    p = P[j]
                    q = Q[j]
                    c = cs[j]
                    s = sn[j]
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
            for j in range(npair):
                A[P[j], Q[j]] = 0.0
                A[Q[j], P[j]] = 0.0
            # tournament rotation of positions 1..m-1
            last = idx[m - 1]
            for i in range(m - 1, 1, -1):
                idx[i] = idx[i - 1]
            idx[1] = last
    return np.diag(A).copy(), -1


def jacobi_eigenvalues(A, tol: float = JACOBI_TOL, max_sweeps: int = 60) -> np.ndarray:
    """All eigenvalues of a dense symmetric matrix, ascending."""
    A = np.ascontiguousarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if A.shape[0] == 0:
        return np.zeros(0)
    scale = np.abs(A).max()
    if scale == 0:
        return np.zeros(A.shape[0])
    w, sweeps = _jacobi_sweeps(0.5 * (A + A.T) / scale, tol, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    return np.sort(w) * scale


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def _is_diagonal(M) -> bool:
    if sp.issparse(M):
        M = sp.coo_matrix(M)
        return bool(np.all((M.row == M.col) | (M.data == 0)))
    M = np.asarray(M)
    return not np.any(M - np.diag(np.diag(M)))


def congruent_matrix(K, M) -> np.ndarray:
    """``L^{-1} K L^{-T}`` with ``M = L L^T``; diagonal ``M`` is scaled directly."""
    Kd = _dense(K)
    if _is_diagonal(M):
        d = np.asarray(M.diagonal(), dtype=float)
        if np.any(~(d > 0)):
            raise NonPositiveMassError("mass matrix has non-positive diagonal entries")
        s = 1.0 / np.sqrt(d)
        return Kd * s[:, None] * s[None, :]
    try:
        L = sla.cholesky(_dense(M), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveMassError("mass matrix is not positive definite") from exc
    X = sla.solve_triangular(L, Kd, lower=True)
    return sla.solve_triangular(L, X.T, lower=True).T


def generalized_spectrum(K, M, tol: float = JACOBI_TOL, method: str = "jacobi") -> np.ndarray:
    """All eigenvalues of the pencil by congruence, ascending.

    ``jacobi`` uses the rotations above; ``lapack`` hands the congruent matrix
    to ``numpy.linalg.eigvalsh`` and serves as a fast cross-check.
    """
    A = congruent_matrix(K, M)
    if method == "jacobi":
        return jacobi_eigenvalues(A, tol)
    if method == "lapack":
        return np.linalg.eigvalsh(0.5 * (A + A.T))
    raise ValueError(f"unknown dense method {method!r}")


# --------------------------------------------------------------------------
# Iterative power path


def _mass_solver(M):
    if sp.issparse(M):
        M = sp.csc_matrix(M)
        d = M.diagonal()
        if _is_diagonal(M):
            if np.any(~(d > 0)):
                raise NonPositiveMassError("mass matrix has non-positive diagonal entries")
            return lambda x: x / d
        try:
            lu = spla.splu(M)
        except RuntimeError as exc:
            raise NonPositiveMassError("mass matrix factorization failed") from exc
        return lu.solve
    factor = sla.cho_factor(np.asarray(M, dtype=float))
    return lambda x: sla.cho_solve(factor, x)


def power_iteration(K, M, shift: float | None = None, tol: float = POWER_TOL,
                    maxiter: int = POWER_MAXITER, seed: int = 0) -> float:
    """Extreme eigenvalue of ``K x = lambda M x`` by power iteration.

    Without ``shift`` returns ``lambda_max``. With ``shift = sigma`` iterates on
    ``sigma - M^{-1} K`` and returns ``lambda_min``; ``sigma`` must bound the
    spectrum from above. Convergence is declared when successive Rayleigh
    quotients differ by less than ``tol`` relative.
    """
    solve = _mass_solver(M)
    n = K.shape[0]
    x = np.random.default_rng(seed).standard_normal(n)

    def apply(v):
        y = solve(K @ v)
        return y if shift is None else shift * v - y

    prev = None
    for _ in range(maxiter):
        y = apply(x)
        lam = float((x @ (K @ x)) / (x @ (M @ x)))
        x = y / max(np.sqrt(abs(y @ (M @ y))), 1e-300)
        scale = max(abs(lam), abs(shift or 0.0), 1e-300)
        if prev is not None and abs(lam - prev) <= tol * scale:
            return lam
        prev = lam
    raise ConvergenceError(f"power iteration stagnated after {maxiter} iterations "
                           f"(last estimate {prev:.6e})")


def max_generalized_eigenvalue(K, M, method: str = "auto") -> float:
    """``lambda_max`` of the pencil; ``method`` is ``auto``, ``jacobi`` or ``power``."""
    if method == "auto":
        method = "jacobi" if K.shape[0] <= DENSE_LIMIT else "power"
    if method == "jacobi":
        return float(generalized_spectrum(K, M)[-1])
    if method == "power":
        return power_iteration(K, M)
    raise ValueError(f"unknown eigen method {method!r}")


def min_generalized_eigenvalue(K, M, method: str = "auto",
                               lambda_max: float | None = None) -> float:
    """``lambda_min`` of the pencil via the shifted pencil on the power path."""
    if method == "auto":
        method = "jacobi" if K.shape[0] <= DENSE_LIMIT else "power"
    if method == "jacobi":
        return float(generalized_spectrum(K, M)[0])
    if method == "power":
        top = power_iteration(K, M) if lambda_max is None else lambda_max
        return power_iteration(K, M, shift=1.01 * abs(top))
    raise ValueError(f"unknown eigen method {method!r}")


def critical_timestep(lambda_max: float) -> float:
    """``2 / sqrt(lambda_max)`` for the central-difference method."""
    if not lambda_max > 0:
        raise ValueError("lambda_max must be positive")
    return 2.0 / np.sqrt(lambda_max)


def analyze_pencil(K, M, method: str = "auto", need_min: bool = True, chi_min: float = 1.0,
                   tag: str = "", seed: int | None = None) -> SpectralResult:
    """Extreme eigenvalues and critical step of one assembled system.

    ``auto`` uses Jacobi up to :data:`DENSE_LIMIT` unknowns and power iteration
    beyond; ``lapack`` is the dense path through LAPACK. Without ``need_min`` the power path skips ``lambda_min`` (NaN).
    """
    if method == "auto":
        method = "jacobi" if K.shape[0] <= DENSE_LIMIT else "power"
    if method in ("jacobi", "lapack"):
        w = generalized_spectrum(K, M, method=method)
        lmax, lmin = float(w[-1]), float(w[0])
    elif method == "power":
        lmax = power_iteration(K, M)
        lmin = min_generalized_eigenvalue(K, M, "power", lmax) if need_min else float("nan")
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    return SpectralResult(lmax, lmin, critical_timestep(lmax), chi_min, tag, seed)


# --------------------------------------------------------------------------
# Cut probes


@dataclass(frozen=True)
class CutProbe:
    """Unit-coefficient probe targeting one cut element.

    ``coefficients`` live on the active functions of the system it was built
    for; ``functions`` are the global tensor indices set to one.
    """

    kind: str
    coefficients: np.ndarray
    functions: np.ndarray
    element: int
    chi: float


@dataclass
class ProbeSetup:
    """Mesh, domain, quadrature and probe for one cut-size sample."""

    basis: object
    domain: ImplicitDomain
    quad: object
    ghost_faces: object
    probe: CutProbe
    offset: float


def probe_mesh_size(p: int) -> int:
    """Elements per axis leaving ``p + 2`` elements on both sides of the cut."""
    return 2 * (p + 1) + 2


def probe_geometry(kind: str, d: int, p: int, chi: float, tag: str = DIRICHLET):
    """Basis and half-space domain whose cut element has cut size ``chi``.

    Slivers cut ``{x < x_e + chi h}``. Two-dimensional corners cut the
    diagonal half-plane ``x + y < x_e + y_e + c`` with ``c = 2 sqrt(2) chi h``,
    which leaves a right triangle of legs ``c`` and cut size ``chi``.
    """
    if kind not in PROBE_KINDS:
        raise ValueError(f"kind must be one of {PROBE_KINDS}")
    n = probe_mesh_size(p)
    basis = build_open_uniform_basis([n] * d, p, [[0.0, 1.0]] * d)
    h = basis.h
    e = p + 2
    xe = e * h
    corner = d == 2 and kind.startswith("corner")
    if corner:
        c = 2.0 * np.sqrt(2.0) * chi * h
        if not 0 < c < h:
            raise ValueError(f"chi={chi} unreachable for a corner cut (needs chi < {1 / np.sqrt(8):.3f})")
        shape = HalfSpace(tag=tag, normal=(1.0, 1.0), offset=2 * xe + c)
    else:
        if not 0 < chi < 1:
            raise ValueError(f"chi={chi} unreachable for a sliver cut")
        c = chi * h
        shape = HalfSpace(tag=tag, normal=(1.0,) + (0.0,) * (d - 1), offset=xe + c)
    return basis, ImplicitDomain(shape, basis.box), e, c


def build_cut_probe(kind: str, basis, domain, quad, active, element_axis_index: int,
                    chi: float | None = None) -> CutProbe:
    """Probe coefficients for the cut element at axis index ``element_axis_index``.

    ``corner1``/``sliver1`` use the function(s) whose support starts at the
    cut element, ``corner2``/``sliver2`` those whose support ends there.
    Sliver probes take every function along the remaining axis.
    """
    p, d = basis.degree, basis.dim
    e = element_axis_index
    first = e + p if kind in ("corner1", "sliver1") else e
    if kind.startswith("corner") or d == 1:
        multis = [(first,) * d]
    else:
        multis = [(first, j) for j in range(basis.shape[1])]
    funcs = np.array(sorted(np.ravel_multi_index(m, basis.shape) for m in multis))
    pos = np.searchsorted(active, funcs)
    if np.any(pos >= active.size) or np.any(active[np.minimum(pos, active.size - 1)] != funcs):
        raise ValueError("probe functions are not all active")
    coef = np.zeros(active.size)
    coef[pos] = 1.0
    target = basis.element_index((e,) * d)
    if chi is None:
        chi = compute_cut_metrics(quad, dirichlet_tags=BOUNDARY_TAGS)[target].chi
    return CutProbe(kind, coef, funcs, int(target), float(chi))


def probe_setup(kind: str, d: int, p: int, chi: float, rho_max: int = 3,
                tag: str = DIRICHLET) -> ProbeSetup:
    """Build the purpose-made geometry, quadrature and probe for one sample.

    The half-space boundary is affine, so the marching-squares tessellation is
    exact at any bisection depth and ``rho_max`` only affects speed.
    """
    from .forms import active_functions

    basis, domain, e, c = probe_geometry(kind, d, p, chi, tag)
    mesh = BackgroundMesh.from_basis(basis)
    quad = build_cut_quadrature(domain, mesh, p, rho_max=rho_max)
    faces = extract_ghost_faces(quad.mesh)
    active = active_functions(basis, quad)
    probe = build_cut_probe(kind, basis, domain, quad, active, e)
    return ProbeSetup(basis, domain, quad, faces, probe, c)


def rayleigh_quotient(K, M, probe) -> float:
    """``x^T K x / x^T M x`` for a probe or plain coefficient vector."""
    x = probe.coefficients if isinstance(probe, CutProbe) else np.asarray(probe, dtype=float)
    if x.shape[0] != K.shape[0]:
        raise ValueError("probe dimension does not match the system")
    den = float(x @ (M @ x))
    if den == 0:
        raise ZeroDivisionError("probe has zero mass")
    return float(x @ (K @ x)) / den


# --------------------------------------------------------------------------
# Scaling fits


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    intercept: float
    r2: float
    chi_range: tuple


def fit_scaling_exponent(samples, min_samples: int = 5, min_decades: float = 4.0) -> ScalingFit:
    """Least-squares slope of ``log value`` against ``log chi``."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("samples must be (chi, value) pairs")
    chi, val = arr[:, 0], arr[:, 1]
    if np.any(~(val > 0)) or np.any(~(chi > 0)):
        raise ValueError("chi and values must be positive")
    if arr.shape[0] < min_samples:
        raise ValueError(f"need at least {min_samples} samples")
    x, y = np.log10(chi), np.log10(val)
    if x.max() - x.min() < min_decades - 1e-9:
        raise ValueError(f"chi must span at least {min_decades} decades")
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, icpt])
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else 1.0
    return ScalingFit(float(slope), float(icpt), r2, (float(chi.min()), float(chi.max())))
