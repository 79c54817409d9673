"""Implicit CSG domains, element classification and ghost faces.

A domain is described by a signed scalar field that is negative inside.
Fields are composed from primitives with ``min`` (union) and ``max``
(intersection); every primitive carries a boundary tag, and a boundary point
takes the tag of the primitive whose zero level is closest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERIOR, EXTERIOR, CUT = 0, 1, 2
CLASS_NAMES = {INTERIOR: "interior", EXTERIOR: "exterior", CUT: "cut"}

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
ROTATION = "rotation"
CLAMPED = "clamped"
BOUNDARY_TAGS = (DIRICHLET, NEUMANN, ROTATION, CLAMPED)


# --------------------------------------------------------------------------
# CSG primitives


class Shape:
    """Base class for signed fields; subclasses implement :meth:`phi`."""

    def phi(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def leaves(self) -> list["Primitive"]:
        raise NotImplementedError

    def __or__(self, other):
        return Union(self, other)

    def __and__(self, other):
        return Intersection(self, other)

    def __sub__(self, other):
        return Intersection(self, Complement(other))

    def __invert__(self):
        return Complement(self)


@dataclass(frozen=True)
class Primitive(Shape):
    tag: str = NEUMANN

    def leaves(self):
        return [self]


@dataclass(frozen=True)
class HalfSpace(Primitive):
    """``normal . x < offset``; the field is the signed distance."""

    normal: tuple = (1.0, 0.0)
    offset: float = 0.0

    def phi(self, x):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        return np.atleast_2d(x)[:, :n.size] @ n - self.offset / np.linalg.norm(self.normal)


@dataclass(frozen=True)
class AxisBox(Primitive):
    """Axis-aligned box with exact signed distance."""

    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)

    def phi(self, x):
        x = np.atleast_2d(x)
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        c = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        q = np.abs(x[:, :lo.size] - c) - r
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Disk(Primitive):
    center: tuple = (0.5, 0.5)
    radius: float = 0.25

    def phi(self, x):
        x = np.atleast_2d(x)
        c = np.asarray(self.center, dtype=float)
        return np.linalg.norm(x[:, :c.size] - c, axis=1) - self.radius


@dataclass(frozen=True)
class Union(Shape):
    a: Shape
    b: Shape

    def phi(self, x):
        return np.minimum(self.a.phi(x), self.b.phi(x))

    def leaves(self):
        return self.a.leaves() + self.b.leaves()


@dataclass(frozen=True)
class Intersection(Shape):
    a: Shape
    b: Shape

    def phi(self, x):
        return np.maximum(self.a.phi(x), self.b.phi(x))

    def leaves(self):
        return self.a.leaves() + self.b.leaves()


@dataclass(frozen=True)
class Complement(Shape):
    a: Shape

    def phi(self, x):
        return -self.a.phi(x)

    def leaves(self):
        return self.a.leaves()


@dataclass(frozen=True)
class Everything(Shape):
    """The whole space; used for uncut reference domains."""

    def phi(self, x):
        return np.full(np.atleast_2d(x).shape[0], -1.0)

    def leaves(self):
        return []


# --------------------------------------------------------------------------
# Domains


@dataclass(frozen=True)
class ImplicitDomain:
    """Physical domain ``{x in box : phi(x - translation) < 0}``.

    Parameters
    ----------
    shape : Shape
        CSG field; leaves carry the boundary tags of the immersed boundary.
    box : ndarray, shape (d, 2)
        Ambient box.
    translation : ndarray, shape (d,)
        Rigid offset applied to the shape.
    outer_tag : str or None
        Tag of the boundary-fitted ambient-box edges.  ``None`` means they
        carry homogeneous natural conditions and need no surface quadrature.
    """

    shape: Shape
    box: np.ndarray
    translation: np.ndarray = None
    outer_tag: str | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        box = np.atleast_2d(np.asarray(self.box, dtype=float))
        object.__setattr__(self, "box", box)
        t = np.zeros(box.shape[0]) if self.translation is None else self.translation
        object.__setattr__(self, "translation", np.asarray(t, dtype=float).reshape(box.shape[0]))
        if self.outer_tag is not None and self.outer_tag not in BOUNDARY_TAGS:
            raise ValueError(f"unknown boundary tag {self.outer_tag!r}")

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    def phi(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.shape.phi(x - self.translation)

    def tag(self, x) -> np.ndarray:
        """Tag of the nearest primitive zero level for each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        leaves = self.shape.leaves()
        if not leaves:
            return np.full(x.shape[0], NEUMANN, dtype=object)
        dist = np.stack([np.abs(leaf.phi(x - self.translation)) for leaf in leaves])
        tags = np.array([leaf.tag for leaf in leaves], dtype=object)
        return tags[np.argmin(dist, axis=0)]

    def translated(self, translation) -> "ImplicitDomain":
        return ImplicitDomain(self.shape, self.box, translation, self.outer_tag, self.params)


REFERENCE_CUTOUT = {
    "length": 0.45,
    "width": 0.3,
    "notch": 0.12,
    "notch_center": 0.4,
    "center": (0.5, 0.5),
    "margin": 0.05,
}


def reference_cutout_shape(tag: str = NEUMANN, params: dict | None = None) -> Shape:
    """Signed field of the reference cut-out (negative outside the hole).

    The hole is a rectangle whose right short edge is replaced by a
    semicircle, with a square notch bitten out of its lower long edge.
    """
    q = dict(REFERENCE_CUTOUT)
    q.update(params or {})
    cx, cy = q["center"]
    half_w = 0.5 * q["width"]
    radius = half_w
    x0 = cx - 0.5 * q["length"]
    x_arc = cx + 0.5 * q["length"] - radius
    body = AxisBox(tag=tag, lo=(x0, cy - half_w), hi=(x_arc, cy + half_w))
    cap = Disk(tag=tag, center=(x_arc, cy), radius=radius)
    nx = q["notch_center"]
    notch = AxisBox(tag=tag, lo=(nx - 0.5 * q["notch"], cy - half_w - 1.0),
                    hi=(nx + 0.5 * q["notch"], cy - half_w + q["notch"]))
    hole = (body | cap) - notch
    return ~hole


def reference_cutout_bbox(params: dict | None = None) -> np.ndarray:
    q = dict(REFERENCE_CUTOUT)
    q.update(params or {})
    cx, cy = q["center"]
    return np.array([[cx - 0.5 * q["length"], cx + 0.5 * q["length"]],
                     [cy - 0.5 * q["width"], cy + 0.5 * q["width"]]])


def reference_cutout_area(params: dict | None = None) -> float:
    """Exact area of the hole: body rectangle plus half disk minus the notch bite."""
    q = dict(REFERENCE_CUTOUT)
    q.update(params or {})
    cx, cy = q["center"]
    r = 0.5 * q["width"]
    x0 = cx - 0.5 * q["length"]
    x_arc = cx + 0.5 * q["length"] - r
    lo, hi = q["notch_center"] - 0.5 * q["notch"], q["notch_center"] + 0.5 * q["notch"]
    if lo < x0 or hi > x_arc:
        raise ValueError("notch must lie under the straight part of the hole")
    return (x_arc - x0) * q["width"] + 0.5 * np.pi * r * r - q["notch"] * min(q["notch"], q["width"])


def make_reference_cutout_domain(translation=(0.0, 0.0), tag: str = NEUMANN,
                                 h: float | None = None, params: dict | None = None,
                                 outer_tag: str | None = None) -> ImplicitDomain:
    """Unit square minus the reference cut-out, rigidly translated.

    Parameters
    ----------
    translation : 2-vector
    tag : str
        Boundary tag of the whole cut-out boundary.
    h : float, optional
        Element size; when given, each translation component must satisfy
        ``|t| <= h``.
    """
    t = np.asarray(translation, dtype=float).reshape(2)
    q = dict(REFERENCE_CUTOUT)
    q.update(params or {})
    if h is not None and np.any(np.abs(t) > h * (1 + 1e-12)):
        raise ValueError("translation components must not exceed the element size")
    bbox = reference_cutout_bbox(q) + t[:, None]
    m = q["margin"]
    if np.any(bbox[:, 0] < m) or np.any(bbox[:, 1] > 1.0 - m):
        raise ValueError("translation pushes the cut-out outside the safe margin")
    return ImplicitDomain(reference_cutout_shape(tag, q), np.array([[0.0, 1.0], [0.0, 1.0]]),
                          t, outer_tag, q)


def full_box_domain(box, outer_tag: str | None = None) -> ImplicitDomain:
    return ImplicitDomain(Everything(), box, None, outer_tag)


# --------------------------------------------------------------------------
# Background mesh and classification


@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform element grid on the ambient box with element classes."""

    box: np.ndarray
    shape: tuple
    classification: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "box", np.atleast_2d(np.asarray(self.box, dtype=float)))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))

    @classmethod
    def from_basis(cls, basis) -> "BackgroundMesh":
        return cls(basis.box, basis.element_shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> float:
        return float((self.box[0, 1] - self.box[0, 0]) / self.shape[0])

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.shape))

    def element_multi(self, e):
        return np.unravel_index(e, self.shape)

    def element_lower(self, e) -> np.ndarray:
        """Lower corner(s) of element(s) ``e``."""
        multi = np.stack(np.unravel_index(np.atleast_1d(e), self.shape), axis=1)
        lo = self.box[:, 0] + self.h * multi
        return lo if np.ndim(e) else lo[0]

    def element_box(self, e: int) -> np.ndarray:
        lo = self.element_lower(e)
        return np.stack([lo, lo + self.h], axis=1)

    def with_classification(self, cls_) -> "BackgroundMesh":
        return BackgroundMesh(self.box, self.shape, np.asarray(cls_, dtype=int))

    @property
    def members(self) -> np.ndarray:
        """Mask of elements in the background mesh (intersecting the domain)."""
        return self.classification != EXTERIOR


def _reference_grid(n: int, d: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n)
    grids = np.meshgrid(*([s] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _probe_subcells(domain, lo, size, depth, ref):
    """Octree search for a sign change below a nearly-touching element."""
    if depth == 0:
        return False
    half = 0.5 * size
    d = lo.size
    for corner in _reference_grid(2, d):
        sub_lo = lo + corner * half
        vals = domain.phi(sub_lo + ref * half)
        if vals.min() < 0.0 < vals.max() or np.any(vals == 0.0):
            return True
        if np.abs(vals).min() < 0.1 * half and _probe_subcells(domain, sub_lo, half, depth - 1, ref):
            return True
    return False


def classify_elements(domain: ImplicitDomain, mesh: BackgroundMesh, degree: int = 1,
                      rho_max: int = 3) -> np.ndarray:
    """Label each element interior, exterior or cut by sampling the field.

    The field is sampled on a ``(p+3)^d`` grid including element corners.
    Elements whose samples share a sign but come within ``0.1 h`` of the zero
    level are probed by recursive bisection up to ``rho_max`` levels.
    """
    d = mesh.dim
    h = mesh.h
    ref = _reference_grid(degree + 3, d)
    lows = mesh.element_lower(np.arange(mesh.n_elements))
    pts = lows[:, None, :] + h * ref[None, :, :]
    vals = domain.phi(pts.reshape(-1, d)).reshape(mesh.n_elements, -1)
    out = np.full(mesh.n_elements, CUT, dtype=int)
    out[np.all(vals < 0.0, axis=1)] = INTERIOR
    out[np.all(vals > 0.0, axis=1)] = EXTERIOR
    close = (out != CUT) & (np.abs(vals).min(axis=1) < 0.1 * h)
    for e in np.flatnonzero(close):
        if _probe_subcells(domain, lows[e], h, rho_max, ref):
            out[e] = CUT
    return out


# --------------------------------------------------------------------------
# Ghost faces


@dataclass(frozen=True)
class GhostFaceSet:
    """Interior faces touching a cut element, both neighbours in the mesh.

    ``faces`` has one row per face: ``(minus element, plus element, axis,
    breakpoint index along axis, element index along the tangential axis)``;
    the last column is ``-1`` in one dimension.
    """

    faces: np.ndarray

    def __len__(self):
        return int(self.faces.shape[0])

    def __iter__(self):
        return iter(self.faces)


def extract_ghost_faces(mesh: BackgroundMesh, classification=None) -> GhostFaceSet:
    """Faces shared by a cut element and any other background-mesh element."""
    cls_ = mesh.classification if classification is None else np.asarray(classification)
    grid = cls_.reshape(mesh.shape)
    ids = np.arange(mesh.n_elements).reshape(mesh.shape)
    rows = []
    for axis in range(mesh.dim):
        lo = [slice(None)] * mesh.dim
        hi = [slice(None)] * mesh.dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a, b = grid[tuple(lo)], grid[tuple(hi)]
        keep = (a != EXTERIOR) & (b != EXTERIOR) & ((a == CUT) | (b == CUT))
        ea, eb = ids[tuple(lo)][keep], ids[tuple(hi)][keep]
        multi = np.array(np.unravel_index(eb, mesh.shape))
        k = multi[axis]
        tang = multi[1 - axis] if mesh.dim == 2 else np.full(k.size, -1)
        rows.append(np.stack([ea, eb, np.full(k.size, axis), k, tang], axis=1))
    faces = np.concatenate(rows, axis=0) if rows else np.zeros((0, 5), dtype=int)
    return GhostFaceSet(faces.astype(int))


# --------------------------------------------------------------------------
# Seeded perturbations

_MASK64 = (1 << 64) - 1


def splitmix64(state: int):
    """One splitmix64 step: returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def random_translations(n: int, h: float, seed: int) -> np.ndarray:
    """``n`` translations uniform in ``[-h, h]^2`` from a splitmix64 stream."""
    state = seed & _MASK64
    out = np.empty((n, 2))
    for i in range(n):
        for j in range(2):
            state, z = splitmix64(state)
            u = (z >> 11) * (1.0 / (1 << 53))
            out[i, j] = h * (2.0 * u - 1.0)
    return out
