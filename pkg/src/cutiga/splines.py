"""Maximum-regularity B-spline bases on uniform tensor-product meshes.

Univariate bases use open uniform knot vectors: the end breakpoints are
repeated ``p + 1`` times and interior breakpoints appear once, so every
function is ``C^{p-1}`` across interior element faces.  Tensor-product bases
in one or two dimensions are built from one univariate basis per axis.

Global function indices are lexicographic in the per-axis indices with the
last axis running fastest (``numpy.ravel_multi_index`` ordering).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np


def _basis_derivatives(knots, degree, span, x, nderiv):
    """Values and derivatives of the ``degree + 1`` functions active on a span.

    Vectorised version of the classical derivative recurrence for B-splines;
    all points in ``x`` must lie in the same knot span.

    Returns
    -------
    ders : ndarray, shape (nderiv + 1, degree + 1, npts)
        ``ders[k, j]`` is the k-th derivative of function ``span - degree + j``.
    """
    p = degree
    x = np.atleast_1d(np.asarray(x, dtype=float))
    npts = x.size
    ndu = np.zeros((p + 1, p + 1, npts))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nderiv + 1, p + 1, npts))
    ders[0] = ndu[:, p]
    top = min(nderiv, p)
    for r in range(p + 1):
        a = np.zeros((2, p + 1, npts))
        a[0, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, top + 1):
            d = np.zeros(npts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    factor = float(p)
    for k in range(1, top + 1):
        ders[k] *= factor
        factor *= p - k
    return ders


@dataclass(frozen=True)
class KnotVector:
    """Open uniform knot vector of maximum regularity.

    Parameters
    ----------
    breakpoints : array_like
        Strictly increasing, uniformly spaced element boundaries.
    degree : int
        Polynomial degree ``p >= 1``.
    """

    breakpoints: np.ndarray
    degree: int

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        spacing = np.diff(b)
        if not np.allclose(spacing, spacing[0], rtol=1e-10, atol=0.0):
            raise ValueError("breakpoints must be uniformly spaced")
        b.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    @property
    def h(self) -> float:
        return float(self.breakpoints[1] - self.breakpoints[0])

    @property
    def n_functions(self) -> int:
        return self.n_elements + self.degree

    @property
    def multiplicities(self) -> list[int]:
        inner = [1] * (self.n_elements - 1)
        return [self.degree + 1] + inner + [self.degree + 1]

    @cached_property
    def knots(self) -> np.ndarray:
        p = self.degree
        b = self.breakpoints
        return np.concatenate([np.full(p, b[0]), b, np.full(p, b[-1])])

    def element_of(self, x):
        """Index of the element containing ``x`` (right end maps to last element)."""
        b = self.breakpoints
        e = np.floor((np.asarray(x, dtype=float) - b[0]) / self.h).astype(int)
        return np.clip(e, 0, self.n_elements - 1)

    def eval_element(self, element: int, x, nderiv: int = 0) -> np.ndarray:
        """Derivatives of the functions active on ``element`` at points ``x``.

        Points on a breakpoint take the one-sided limit from ``element``.

        Returns
        -------
        ndarray, shape (nderiv + 1, degree + 1, npts)
            Local function ``j`` is global function ``element + j``.
        """
        if not 0 <= element < self.n_elements:
            raise IndexError("element index out of range")
        return _basis_derivatives(self.knots, self.degree, element + self.degree,
                                  x, nderiv)

    def support(self, i: int) -> tuple[int, int]:
        """Half-open element range ``[first, last)`` of function ``i``."""
        return max(i - self.degree, 0), min(i + 1, self.n_elements)


def uniform_knot_vector(lo: float, hi: float, n_elements: int, degree: int) -> KnotVector:
    if degree < 1:
        raise ValueError("degree must be at least 1")
    if n_elements < degree:
        raise ValueError("need at least `degree` elements per axis")
    return KnotVector(np.linspace(lo, hi, n_elements + 1), degree)


@dataclass(frozen=True)
class TensorBsplineBasis:
    """Tensor product of univariate maximum-regularity B-spline bases.

    The optional ``active`` mask flags functions with support in the physical
    domain; it is set by :func:`with_active` and defaults to all functions.
    """

    axes: tuple[KnotVector, ...]
    active: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise ValueError("only one- and two-dimensional bases are supported")
        if len({kv.degree for kv in self.axes}) != 1:
            raise ValueError("all axes must share the same degree")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def degree(self) -> int:
        return self.axes[0].degree

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(kv.n_functions for kv in self.axes)

    @property
    def element_shape(self) -> tuple[int, ...]:
        return tuple(kv.n_elements for kv in self.axes)

    @property
    def n_dofs(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.element_shape))

    @property
    def h(self) -> float:
        """Element size; the mesh is assumed to have square elements."""
        return self.axes[0].h

    @property
    def box(self) -> np.ndarray:
        return np.array([[kv.breakpoints[0], kv.breakpoints[-1]] for kv in self.axes])

    @property
    def max_derivative(self) -> int:
        return max(self.degree, 3)

    def element_index(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.element_shape))

    def element_multi(self, e: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(e, self.element_shape))

    def element_box(self, e: int) -> np.ndarray:
        multi = self.element_multi(e)
        return np.array([[kv.breakpoints[i], kv.breakpoints[i + 1]]
                         for kv, i in zip(self.axes, multi)])

    def element_dofs(self, e: int) -> np.ndarray:
        """Global indices of the ``(p+1)^d`` functions active on element ``e``."""
        multi = self.element_multi(e)
        ranges = [np.arange(i, i + self.degree + 1) for i in multi]
        grids = np.meshgrid(*ranges, indexing="ij")
        return np.ravel_multi_index(tuple(g.ravel() for g in grids), self.shape)

    def eval_element(self, e: int, points, max_order: int) -> "ElementEvaluation":
        """Evaluate all derivatives up to ``max_order`` per axis at ``points``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValueError("point dimension does not match basis")
        multi = self.element_multi(e)
        factors = [kv.eval_element(i, points[:, a], max_order)
                   for a, (kv, i) in enumerate(zip(self.axes, multi))]
        return ElementEvaluation(factors, self.element_dofs(e))

    def with_active(self, mask) -> "TensorBsplineBasis":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n_dofs,):
            raise ValueError("active mask has wrong length")
        return TensorBsplineBasis(self.axes, mask)

    @property
    def active_dofs(self) -> np.ndarray:
        if self.active is None:
            return np.arange(self.n_dofs)
        return np.flatnonzero(self.active)

    def contains(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        box = self.box
        tol = 1e-12 * max(1.0, float(np.abs(box).max()))
        return bool(np.all(point >= box[:, 0] - tol) and np.all(point <= box[:, 1] + tol))

    def locate(self, point) -> int:
        multi = [int(kv.element_of(x)) for kv, x in zip(self.axes, point)]
        return self.element_index(multi)


class ElementEvaluation:
    """Per-axis derivative tables for one element, combined on demand."""

    def __init__(self, factors, dofs):
        self.factors = factors
        self.dofs = dofs

    @property
    def dim(self) -> int:
        return len(self.factors)

    def __call__(self, alpha) -> np.ndarray:
        """Derivative ``alpha`` (per-axis orders) as an array (npts, nloc)."""
        alpha = tuple(alpha)
        if len(alpha) != self.dim:
            raise ValueError("derivative multi-index has wrong length")
        f0 = self.factors[0][alpha[0]]
        if self.dim == 1:
            return f0.T.copy()
        f1 = self.factors[1][alpha[1]]
        return np.einsum("ip,jp->pij", f0, f1).reshape(f0.shape[1], -1)

    def values(self) -> np.ndarray:
        return self((0,) * self.dim)

    def gradient(self) -> np.ndarray:
        """Array (npts, nloc, d)."""
        d = self.dim
        return np.stack([self(tuple(int(a == k) for a in range(d))) for k in range(d)],
                        axis=-1)

    def laplacian(self) -> np.ndarray:
        d = self.dim
        return sum(self(tuple(2 * int(a == k) for a in range(d))) for k in range(d))

    def grad_laplacian(self) -> np.ndarray:
        """Gradient of the Laplacian, array (npts, nloc, d)."""
        d = self.dim
        comps = []
        for k in range(d):
            total = 0.0
            for m in range(d):
                alpha = [2 * int(a == m) for a in range(d)]
                alpha[k] += 1
                total = total + self(tuple(alpha))
            comps.append(total)
        return np.stack(comps, axis=-1)


def build_open_uniform_basis(n_elements_per_axis, degree: int, domain_box) -> TensorBsplineBasis:
    """Tensor-product basis with ``n_elements + degree`` functions per axis.

    Parameters
    ----------
    n_elements_per_axis : sequence of int
    degree : int
    domain_box : array_like, shape (d, 2)
        Rows ``[lo, hi]`` per axis.
    """
    box = np.atleast_2d(np.asarray(domain_box, dtype=float))
    n_elements_per_axis = list(np.atleast_1d(n_elements_per_axis))
    if box.shape != (len(n_elements_per_axis), 2):
        raise ValueError("domain_box must have one [lo, hi] row per axis")
    axes = tuple(uniform_knot_vector(lo, hi, int(n), degree)
                 for (lo, hi), n in zip(box, n_elements_per_axis))
    return TensorBsplineBasis(axes)


def eval_basis(basis: TensorBsplineBasis, point, deriv_multi_index=None):
    """Nonzero functions at ``point`` as a list of ``(global index, value)``.

    Returns exactly ``(p+1)^d`` entries, those active on the containing element.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape != (basis.dim,):
        raise ValueError("point dimension does not match basis")
    if not basis.contains(point):
        raise ValueError("point lies outside the ambient box")
    alpha = (0,) * basis.dim if deriv_multi_index is None else tuple(deriv_multi_index)
    if any(a < 0 or a > basis.max_derivative for a in alpha):
        raise ValueError(f"derivative order must be in [0, {basis.max_derivative}]")
    e = basis.locate(point)
    ev = basis.eval_element(e, point[None, :], max(alpha))
    vals = ev(alpha)[0]
    return [(int(i), float(v)) for i, v in zip(ev.dofs, vals)]


def face_normal_jump_local(basis: TensorBsplineBasis, axis: int, face: int,
                           tangential_element, points, order: int):
    """Jumps of the ``order``-th normal derivative across an interior face.

    Parameters
    ----------
    axis : int
        Axis normal to the face.
    face : int
        Breakpoint index along ``axis``; must be interior.
    tangential_element : int or None
        Element index along the other axis (2D only).
    points : array_like, shape (npts, d)
        Points on the face.

    Returns
    -------
    dofs : ndarray
        Global indices of the functions touching either side.
    jumps : ndarray, shape (npts, ndofs)
        ``(+ side limit) - (- side limit)``, plus side at larger coordinate.
    """
    kv = basis.axes[axis]
    if not 0 < face < kv.n_elements:
        raise ValueError("face lies on the ambient boundary")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = basis.degree
    x = points[:, axis]
    minus = kv.eval_element(face - 1, x, order)[order]
    plus = kv.eval_element(face, x, order)[order]
    normal = np.zeros((p + 2, x.size))
    normal[:p + 1] -= minus
    normal[1:] += plus
    normal_idx = np.arange(face - 1, face + p + 1)
    if basis.dim == 1:
        return normal_idx, normal.T.copy()
    other = 1 - axis
    tk = basis.axes[other]
    tvals = tk.eval_element(int(tangential_element), points[:, other], 0)[0]
    tidx = np.arange(tangential_element, tangential_element + p + 1)
    if axis == 0:
        jumps = np.einsum("ip,jp->pij", normal, tvals).reshape(x.size, -1)
        grid = np.meshgrid(normal_idx, tidx, indexing="ij")
    else:
        jumps = np.einsum("ip,jp->pij", tvals, normal).reshape(x.size, -1)
        grid = np.meshgrid(tidx, normal_idx, indexing="ij")
    dofs = np.ravel_multi_index((grid[0].ravel(), grid[1].ravel()), basis.shape)
    return dofs, jumps


def face_normal_jump(basis: TensorBsplineBasis, face, order: int, point_on_face):
    """Per-function jump of the ``order``-th normal derivative at one face point.

    Parameters
    ----------
    face : tuple (axis, breakpoint index)
        Interior axis-aligned face.
    point_on_face : array_like, shape (d,)

    Returns
    -------
    list of (global index, jump value)
    """
    axis, k = face
    point = np.atleast_1d(np.asarray(point_on_face, dtype=float))
    if order < 0 or order > basis.max_derivative:
        raise ValueError(f"order must be in [0, {basis.max_derivative}]")
    telem = None
    if basis.dim == 2:
        other = 1 - axis
        telem = int(basis.axes[other].element_of(point[other]))
    dofs, jumps = face_normal_jump_local(basis, axis, k, telem, point[None, :], order)
    return [(int(i), float(v)) for i, v in zip(dofs, jumps[0])]


def greville_abscissae(kv: KnotVector) -> np.ndarray:
    """Knot averages; used to build interpolants for reproduction checks."""
    t = kv.knots
    p = kv.degree
    return np.array([t[i + 1:i + p + 1].mean() for i in range(kv.n_functions)])


def interpolate(basis: TensorBsplineBasis, func) -> np.ndarray:
    """Coefficients of the tensor Greville interpolant of ``func``."""
    grev = [greville_abscissae(kv) for kv in basis.axes]
    pts = np.array(list(product(*grev)))
    rows = np.zeros((len(pts), basis.n_dofs))
    for r, x in enumerate(pts):
        for i, v in eval_basis(basis, x):
            rows[r, i] = v
    return np.linalg.solve(rows, np.array([func(x) for x in pts]))
