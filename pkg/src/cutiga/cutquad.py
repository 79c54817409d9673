"""Cut-element quadrature by recursive bisection with a final tessellation.

Each cut element is bisected into ``2^d`` sub-cells up to ``rho_max`` levels.
Sub-cells that the field proves to be entirely inside receive a tensor Gauss
rule, entirely outside ones are dropped, and the sub-cells that remain at the
finest level are split along a linear reconstruction of the zero level set
(root finding in 1D, marching squares in 2D).  The inside polygons are
triangulated and the reconstructed boundary segments carry Gauss rules with
outward normals.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (CUT, EXTERIOR, INTERIOR, BackgroundMesh, ImplicitDomain,
                       classify_elements)

ZERO_MEASURE = 1e-14

log = logging.getLogger(__name__)


def gauss_legendre(n: int, lo: float = 0.0, hi: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    return lo + 0.5 * (hi - lo) * (x + 1.0), 0.5 * (hi - lo) * w


def tensor_gauss(lo, size: float, n: int):
    """Tensor Gauss rule on the cube ``lo + [0, size]^d``."""
    lo = np.atleast_1d(lo)
    d = lo.size
    x, w = gauss_legendre(n, 0.0, size)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    wgrid = np.meshgrid(*([w] * d), indexing="ij")
    pts = lo + np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    return pts, wts


def _duffy_reference(n: int):
    """Collapsed Gauss rule on the unit triangle, exact to total degree 2n-2."""
    u, wu = gauss_legendre(n)
    v, wv = gauss_legendre(n)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(wu, wv)
    bary_1 = uu.ravel()
    bary_2 = ((1.0 - uu) * vv).ravel()
    weights = ((1.0 - uu) * ww).ravel()
    return bary_1, bary_2, weights


def triangle_rule(tri: np.ndarray, n: int):
    """Gauss rule on triangles ``tri`` of shape (ntri, 3, 2)."""
    b1, b2, w = _duffy_reference(n)
    a = tri[:, 0, :]
    e1 = tri[:, 1, :] - a
    e2 = tri[:, 2, :] - a
    area2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = a[:, None, :] + b1[None, :, None] * e1[:, None, :] + b2[None, :, None] * e2[:, None, :]
    wts = area2[:, None] * w[None, :]
    return pts.reshape(-1, 2), wts.ravel()


@dataclass
class SurfaceRule:
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    tags: np.ndarray
    fitted: np.ndarray

    @classmethod
    def empty(cls, d: int) -> "SurfaceRule":
        return cls(np.zeros((0, d)), np.zeros(0), np.zeros((0, d)),
                   np.zeros(0, dtype=object), np.zeros(0, dtype=bool))

    def select(self, tags) -> "SurfaceRule":
        keep = np.isin(self.tags, list(tags))
        return SurfaceRule(self.points[keep], self.weights[keep], self.normals[keep],
                           self.tags[keep], self.fitted[keep])

    def measure(self, tags=None) -> float:
        if tags is None:
            return float(self.weights.sum())
        return float(self.weights[np.isin(self.tags, list(tags))].sum())

    def __len__(self):
        return int(self.weights.size)


@dataclass(frozen=True)
class CutMetrics:
    volume: float
    surface_dirichlet: float
    h_c: float
    chi: float
    eta: float


@dataclass
class CutQuadrature:
    """Volumetric and surface rules for every background-mesh element.

    ``mesh.classification`` holds the final element classes after
    zero-measure cut elements have been demoted to exterior.
    """

    mesh: BackgroundMesh
    volume: dict
    surface: dict
    gauss_order: int
    rho_max: int
    warnings: list = field(default_factory=list)

    @property
    def elements(self) -> np.ndarray:
        return np.array(sorted(self.volume), dtype=int)

    @property
    def cut_elements(self) -> np.ndarray:
        return np.flatnonzero(self.mesh.classification == CUT)

    def element_volume(self, e: int) -> float:
        return float(self.volume[e][1].sum())

    def total_volume(self) -> float:
        return float(sum(w.sum() for _, w in self.volume.values()))

    def surface_rule(self, e: int) -> SurfaceRule:
        return self.surface.get(e) or SurfaceRule.empty(self.mesh.dim)

    def all_surface(self) -> SurfaceRule:
        rules = [self.surface[e] for e in sorted(self.surface)]
        if not rules:
            return SurfaceRule.empty(self.mesh.dim)
        return SurfaceRule(np.concatenate([r.points for r in rules]),
                           np.concatenate([r.weights for r in rules]),
                           np.concatenate([r.normals for r in rules]),
                           np.concatenate([r.tags for r in rules]),
                           np.concatenate([r.fitted for r in rules]))


# --------------------------------------------------------------------------
# Sub-cell recursion


def _corner_offsets(d: int) -> np.ndarray:
    if d == 1:
        return np.array([[0.0], [1.0]])
    # counter-clockwise order for marching squares
    return np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def _octree(domain: ImplicitDomain, lo: np.ndarray, size: float, rho_max: int):
    """Split one element into inside sub-cells and finest-level cut sub-cells.

    Returns
    -------
    full : list of (lower corner, size)
    cut : list of (lower corner, size)
    """
    d = lo.size
    lows = lo[None, :]
    s = size
    full, cut = [], []
    children = np.array(np.meshgrid(*([[0.0, 1.0]] * d), indexing="ij")).reshape(d, -1).T
    for level in range(rho_max + 1):
        centers = lows + 0.5 * s
        radius = 0.5 * s * np.sqrt(d)
        phic = domain.phi(centers)
        inside = phic < -radius
        outside = phic > radius
        for c in lows[inside]:
            full.append((c, s))
        rest = lows[~inside & ~outside]
        if level == rho_max:
            for c in rest:
                cut.append((c, s))
            break
        if rest.size == 0:
            break
        s = 0.5 * s
        lows = (rest[:, None, :] + s * children[None, :, :]).reshape(-1, d)
    return full, cut


def _snap(f, size):
    """Push near-zero field values outside so shared faces split consistently."""
    tol = 1e-12 * size
    return np.where(np.abs(f) <= tol, tol, f)


def _crossing(a, b, fa, fb):
    t = fa / (fa - fb)
    return a + t * (b - a)


def _tessellate_square(domain, lo, s):
    """Marching-squares split of one finest sub-cell.

    Returns the inside polygons (lists of vertices, counter-clockwise) and the
    boundary segments (start, end) oriented with the inside on the left.
    """
    corners = lo + s * _corner_offsets(2)
    f = _snap(domain.phi(corners), s)
    inside = f < 0.0
    if inside.all():
        return [list(corners)], []
    if not inside.any():
        return [], []
    n_in = int(inside.sum())
    saddle = n_in == 2 and inside[0] == inside[2]
    if saddle and domain.phi(lo + 0.5 * s)[0] >= 0.0:
        # two separate inside corners
        polys, segs = [], []
        for k in np.flatnonzero(inside):
            prev, nxt = (k - 1) % 4, (k + 1) % 4
            a = _crossing(corners[prev], corners[k], f[prev], f[k])
            b = _crossing(corners[k], corners[nxt], f[k], f[nxt])
            polys.append([a, corners[k], b])
            segs.append((b, a))
        return polys, segs
    poly = []
    segs = []
    enter = None
    for k in range(4):
        nxt = (k + 1) % 4
        if inside[k]:
            poly.append(corners[k])
        if inside[k] != inside[nxt]:
            x = _crossing(corners[k], corners[nxt], f[k], f[nxt])
            poly.append(x)
            if inside[k]:
                enter = x
            elif enter is not None:
                segs.append((enter, x))
                enter = None
            else:
                segs.append(("pending", x))
    # close a segment that wraps past corner 0
    fixed = []
    for a, b in segs:
        if isinstance(a, str):
            fixed.append((enter, b))
        else:
            fixed.append((a, b))
    return [poly], fixed


def _polygon_triangles(poly):
    poly = np.asarray(poly)
    c = poly.mean(axis=0)
    tris = [np.array([c, poly[i], poly[(i + 1) % len(poly)]]) for i in range(len(poly))]
    return tris


def _element_rule_2d(domain, lo, h, rho_max, n):
    full, cut = _octree(domain, lo, h, rho_max)
    pts, wts = [], []
    for c, s in full:
        p, w = tensor_gauss(c, s, n)
        pts.append(p)
        wts.append(w)
    tris, segs = [], []
    for c, s in cut:
        polys, sg = _tessellate_square(domain, c, s)
        for poly in polys:
            tris.extend(_polygon_triangles(poly))
        segs.extend(sg)
    if tris:
        p, w = triangle_rule(np.array(tris), n)
        keep = w > 0.0
        pts.append(p[keep])
        wts.append(w[keep])
    vol_pts = np.concatenate(pts) if pts else np.zeros((0, 2))
    vol_wts = np.concatenate(wts) if wts else np.zeros(0)
    sp, sw, sn = [], [], []
    g, gw = gauss_legendre(n)
    for a, b in segs:
        a = np.asarray(a)
        b = np.asarray(b)
        t = b - a
        length = np.hypot(*t)
        if length <= 0.0:
            continue
        sp.append(a + g[:, None] * t)
        sw.append(gw * length)
        sn.append(np.tile(np.array([t[1], -t[0]]) / length, (n, 1)))
    if sp:
        surf = (np.concatenate(sp), np.concatenate(sw), np.concatenate(sn))
    else:
        surf = (np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))
    return vol_pts, vol_wts, surf


def _element_rule_1d(domain, lo, h, rho_max, n):
    full, cut = _octree(domain, lo, h, rho_max)
    pts, wts = [], []
    for c, s in full:
        p, w = tensor_gauss(c, s, n)
        pts.append(p)
        wts.append(w)
    sp, sn = [], []
    for c, s in cut:
        a, b = c[0], c[0] + s
        fa, fb = _snap(domain.phi(np.array([[a], [b]])), s)
        if fa < 0.0 and fb < 0.0:
            seg = (a, b)
        elif fa >= 0.0 and fb >= 0.0:
            continue
        else:
            x = a + fa / (fa - fb) * (b - a)
            seg = (a, x) if fa < 0.0 else (x, b)
            sp.append([x])
            sn.append([1.0 if fa < 0.0 else -1.0])
        if seg[1] > seg[0]:
            p, w = tensor_gauss(np.array([seg[0]]), seg[1] - seg[0], n)
            pts.append(p)
            wts.append(w)
    vol_pts = np.concatenate(pts) if pts else np.zeros((0, 1))
    vol_wts = np.concatenate(wts) if wts else np.zeros(0)
    surf = (np.array(sp, dtype=float).reshape(-1, 1), np.ones(len(sp)),
            np.array(sn, dtype=float).reshape(-1, 1))
    return vol_pts, vol_wts, surf


def _outer_faces(domain, mesh, e, n):
    """Gauss points on the ambient-box faces of element ``e`` inside the domain."""
    d = mesh.dim
    multi = mesh.element_multi(e)
    lo = mesh.element_lower(e)
    h = mesh.h
    pts, wts, nrm = [], [], []
    for axis in range(d):
        for side, idx in ((-1.0, 0), (1.0, mesh.shape[axis] - 1)):
            if multi[axis] != idx:
                continue
            normal = np.zeros(d)
            normal[axis] = side
            if d == 1:
                p = np.array([[lo[0] + (h if side > 0 else 0.0)]])
                w = np.ones(1)
            else:
                g, gw = gauss_legendre(n, 0.0, h)
                p = np.tile(lo, (n, 1))
                p[:, 1 - axis] += g
                p[:, axis] += h if side > 0 else 0.0
                w = gw
            keep = domain.phi(p) < 0.0
            pts.append(p[keep])
            wts.append(w[keep])
            nrm.append(np.tile(normal, (int(keep.sum()), 1)))
    if not pts:
        return None
    return np.concatenate(pts), np.concatenate(wts), np.concatenate(nrm)


def build_cut_quadrature(domain: ImplicitDomain, mesh: BackgroundMesh, degree: int,
                         rho_max: int = 3, gauss_order: int | None = None,
                         classification=None) -> CutQuadrature:
    """Quadrature on every element intersecting the domain.

    Parameters
    ----------
    domain : ImplicitDomain
    mesh : BackgroundMesh
    degree : int
        Spline degree ``p``; sets the default Gauss order ``p + 1``.
    rho_max : int
        Bisection depth for cut elements.
    gauss_order : int, optional
        Points per axis on sub-cells; also the triangle and segment order.
    classification : array_like, optional
        Precomputed element classes; computed when omitted.
    """
    if rho_max < 1:
        raise ValueError("rho_max must be at least 1")
    n = degree + 1 if gauss_order is None else int(gauss_order)
    if n < degree + 1:
        raise ValueError("gauss_order must be at least p + 1")
    if classification is None:
        classification = classify_elements(domain, mesh, degree, rho_max)
    cls_ = np.array(classification, dtype=int)
    d = mesh.dim
    h = mesh.h
    volume, surface, notes = {}, {}, []
    ref_pts, ref_wts = tensor_gauss(np.zeros(d), h, n)
    builder = _element_rule_2d if d == 2 else _element_rule_1d
    for e in np.flatnonzero(cls_ != EXTERIOR):
        lo = mesh.element_lower(e)
        if cls_[e] == INTERIOR:
            volume[e] = (lo + ref_pts, ref_wts.copy())
            surf = None
        else:
            vp, vw, surf = builder(domain, lo, h, rho_max, n)
            if vw.sum() < ZERO_MEASURE * h ** d:
                cls_[e] = EXTERIOR
                notes.append({"element": int(e), "reason": "zero-measure cut demoted"})
                continue
            volume[e] = (vp, vw)
        rules = []
        if surf is not None and surf[1].size:
            tags = domain.tag(surf[0])
            rules.append(SurfaceRule(surf[0], surf[1], surf[2], tags,
                                     np.zeros(surf[1].size, dtype=bool)))
        if domain.outer_tag is not None:
            outer = _outer_faces(domain, mesh, e, n)
            if outer is not None and outer[1].size:
                rules.append(SurfaceRule(outer[0], outer[1], outer[2],
                                         np.full(outer[1].size, domain.outer_tag, dtype=object),
                                         np.ones(outer[1].size, dtype=bool)))
        if rules:
            surface[e] = SurfaceRule(*(np.concatenate([getattr(r, k) for r in rules])
                                       for k in ("points", "weights", "normals", "tags", "fitted")))
    if notes:
        log.debug("%d zero-measure cut element(s) demoted to exterior", len(notes))
    return CutQuadrature(mesh.with_classification(cls_), volume, surface, n, rho_max, notes)


def compute_cut_metrics(quad: CutQuadrature, mesh: BackgroundMesh | None = None,
                        dirichlet_tags=("dirichlet",)) -> dict:
    """Cut-size metrics per background-mesh element.

    ``h_c = min(vol / surf, vol^(1/d))`` with ``surf`` the measure of the
    boundary carrying one of ``dirichlet_tags`` inside the element, and
    ``h_c = vol^(1/d)`` when that measure vanishes.
    """
    mesh = quad.mesh if mesh is None else mesh
    d = mesh.dim
    h = mesh.h
    out = {}
    for e in quad.volume:
        vol = quad.element_volume(e)
        surf = quad.surface_rule(e).measure(dirichlet_tags)
        hc = vol ** (1.0 / d)
        if surf > 0.0:
            hc = min(vol / surf, hc)
        out[int(e)] = CutMetrics(vol, surf, hc, min(hc / h, 1.0), vol / h ** d)
    return out


def min_cut_chi(metrics: dict, quad: CutQuadrature):
    """Smallest ``chi`` over cut elements, or ``1.0`` without cut elements."""
    cut = [metrics[int(e)].chi for e in quad.cut_elements if int(e) in metrics]
    return min(cut) if cut else 1.0


def quadrature_rows(quad: CutQuadrature):
    """Rows ``(x, y, weight, kind, tag)`` for a debug dump."""
    for e in sorted(quad.volume):
        pts, wts = quad.volume[e]
        for x, w in zip(pts, wts):
            y = x[1] if x.size > 1 else 0.0
            yield (float(x[0]), float(y), float(w), "volume", "")
    for e in sorted(quad.surface):
        r = quad.surface[e]
        for x, w, t in zip(r.points, r.weights, r.tags):
            y = x[1] if x.size > 1 else 0.0
            yield (float(x[0]), float(y), float(w), "surface", str(t))


def retag_quadrature(quad: CutQuadrature, tag: str, fitted: bool = False) -> CutQuadrature:
    """Copy of ``quad`` with every immersed surface point tagged ``tag``.

    Boundary-fitted points keep their tag unless ``fitted`` is set.
    """
    surface = {}
    for e, r in quad.surface.items():
        tags = r.tags.copy()
        tags[fitted | ~r.fitted] = tag
        surface[e] = SurfaceRule(r.points, r.weights, r.normals, tags, r.fitted)
    return replace(quad, surface=surface)
