"""Mass, stiffness and load assembly for immersed spline discretizations.

Second-order (membrane) problems use ``-div(kappa grad phi)``; fourth-order
problems use ``Delta(kappa Delta phi)``. Boundary conditions are weakly
imposed by penalty or Nitsche terms; ghost faces carry optional stiffness and
mass stabilization on the highest nonvanishing normal-derivative jump.

All matrices are assembled over the full tensor space and then restricted to
the active functions, those with support in the physical domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre

from .cutquad import CutQuadrature, SurfaceRule, gauss_legendre
from .geometry import CLAMPED, DIRICHLET, ROTATION, GhostFaceSet
from .splines import ElementEvaluation, TensorBsplineBasis, face_normal_jump_local

log = logging.getLogger(__name__)

BOUNDARY_METHODS = ("neumann", "penalty", "nitsche_local", "nitsche_ghost")
MASS_TREATMENTS = ("consistent", "lumped")
NULL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class FormulationSpec:
    """Equation order, boundary treatment, mass treatment and constants.

    ``gamma_k`` is only used by ``nitsche_ghost``; ``beta`` applies to
    second-order problems and ``beta_phi``/``beta_g`` to fourth-order ones.
    ``beta_cap`` is the fallback constant of the local inverse estimate.
    """

    order: int = 2
    boundary: str = "neumann"
    mass: str = "lumped"
    ghost_mass: bool = False
    rho: float = 1.0
    kappa: float = 1.0
    beta: float = 10.0
    beta_phi: float = 100.0
    beta_g: float = 100.0
    gamma_k: float = 0.1
    gamma_m: float = 0.1
    beta_cap: float = 10.0
    T: float = float(np.sqrt(2.0))

    def __post_init__(self):
        if self.order not in (2, 4):
            raise ValueError("order must be 2 or 4")
        if self.boundary not in BOUNDARY_METHODS:
            raise ValueError(f"boundary must be one of {BOUNDARY_METHODS}")
        if self.mass not in MASS_TREATMENTS:
            raise ValueError(f"mass must be one of {MASS_TREATMENTS}")
        for name in ("rho", "kappa", "T", "beta_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.boundary in ("penalty", "nitsche_ghost"):
            names = ("beta",) if self.order == 2 else ("beta_phi", "beta_g")
            for name in names:
                if not getattr(self, name) > 0:
                    raise ValueError(f"{name} must be positive for {self.boundary}")
        if self.boundary == "nitsche_ghost" and not self.gamma_k > 0:
            raise ValueError("nitsche_ghost requires gamma_k > 0")
        if self.ghost_mass and not self.gamma_m > 0:
            raise ValueError("ghost mass requires gamma_m > 0")

    def with_(self, **changes) -> "FormulationSpec":
        return replace(self, **changes)

    @property
    def tag(self) -> str:
        gm = "+gm" if self.ghost_mass else ""
        return f"s{self.order}-{self.boundary}-{self.mass}{gm}"


@dataclass
class ProblemData:
    """Source and boundary data.

    Volume data are called as ``f(t, x)`` and boundary data as
    ``g(t, x, n)`` with points ``x`` and outward normals ``n`` of shape
    ``(npts, d)``. ``g`` is the second-order flux ``-kappa dphi/dn``; ``q``,
    ``m`` are the fourth-order natural data and ``rotation`` the prescribed
    normal slope. ``phi0``/``phidot0`` take points only. ``None`` means zero.
    """

    f: object = None
    g: object = None
    phi_D: object = None
    q: object = None
    m: object = None
    rotation: object = None
    phi0: object = None
    phidot0: object = None

    def __post_init__(self):
        for name in ("f", "g", "phi_D", "q", "m", "rotation", "phi0", "phidot0"):
            value = getattr(self, name)
            if value is not None and not callable(value):
                raise TypeError(f"problem data {name!r} must be callable or None")


def boundary_roles(spec: FormulationSpec) -> dict:
    """Tags on which the value and the normal slope are weakly constrained."""
    if spec.boundary == "neumann":
        return {"value": (), "slope": ()}
    if spec.order == 2:
        return {"value": (DIRICHLET,), "slope": ()}
    return {"value": (DIRICHLET, CLAMPED), "slope": (ROTATION, CLAMPED)}


# --------------------------------------------------------------------------
# Sparse accumulation


class _Triplets:
    def __init__(self, n: int):
        self.n = n
        self.rows, self.cols, self.vals = [], [], []

    def add(self, dofs_r, dofs_c, block):
        r, c = np.meshgrid(dofs_r, dofs_c, indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.asarray(block).ravel())

    def matrix(self) -> sp.csr_matrix:
        if not self.vals:
            return sp.csr_matrix((self.n, self.n))
        coo = sp.coo_matrix((np.concatenate(self.vals),
                             (np.concatenate(self.rows), np.concatenate(self.cols))),
                            shape=(self.n, self.n))
        out = coo.tocsr()
        out.sum_duplicates()
        return out


def active_functions(basis: TensorBsplineBasis, quad: CutQuadrature) -> np.ndarray:
    """Sorted global indices of functions touching an element with volume."""
    if not quad.volume:
        return np.zeros(0, dtype=int)
    return np.unique(np.concatenate([basis.element_dofs(e) for e in quad.volume]))


def restrict(matrix: sp.spmatrix, active: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix(matrix)[active][:, active]


def _normal_derivative(ev: ElementEvaluation, normals):
    return np.einsum("qik,qk->qi", ev.gradient(), normals)


# --------------------------------------------------------------------------
# Volume forms


def assemble_mass_consistent(basis: TensorBsplineBasis, quad: CutQuadrature,
                             rho: float = 1.0) -> sp.csr_matrix:
    """``int_Omega rho N_i N_j`` over the full tensor space."""
    acc = _Triplets(basis.n_dofs)
    for e, (pts, wts) in quad.volume.items():
        ev = basis.eval_element(e, pts, 0)
        N = ev.values()
        acc.add(ev.dofs, ev.dofs, rho * np.einsum("q,qi,qj->ij", wts, N, N))
    return acc.matrix()


def lump_rowsum(mass: sp.spmatrix) -> np.ndarray:
    """Row sums of ``mass``; raises if any is not positive."""
    diag = np.asarray(mass.sum(axis=1)).ravel()
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        raise ValueError(f"lumped mass has {bad.size} non-positive diagonal entries "
                         f"(first at row {bad[0]}: {diag[bad[0]]:.3e})")
    return diag


def assemble_stiffness_core(basis: TensorBsplineBasis, quad: CutQuadrature,
                            kappa: float = 1.0, order: int = 2) -> sp.csr_matrix:
    """``int kappa grad N_i . grad N_j`` or ``int kappa Lap N_i Lap N_j``."""
    if order == 4 and basis.degree < 2:
        raise ValueError("fourth-order problems need degree p >= 2")
    acc = _Triplets(basis.n_dofs)
    for e, (pts, wts) in quad.volume.items():
        if order == 2:
            G = basis.eval_element(e, pts, 1).gradient()
            block = np.einsum("q,qik,qjk->ij", wts, G, G)
        else:
            L = basis.eval_element(e, pts, 2).laplacian()
            block = np.einsum("q,qi,qj->ij", wts, L, L)
        acc.add(basis.element_dofs(e), basis.element_dofs(e), kappa * block)
    return acc.matrix()


# --------------------------------------------------------------------------
# Ghost faces


def _face_rule(basis: TensorBsplineBasis, face, n: int):
    """Points and weights on one ghost face."""
    _, _, axis, k, tang = (int(v) for v in face)
    coord = basis.axes[axis].breakpoints[k]
    if basis.dim == 1:
        return np.array([[coord]]), np.ones(1)
    other = 1 - axis
    bp = basis.axes[other].breakpoints
    t, w = gauss_legendre(n, bp[tang], bp[tang + 1])
    pts = np.empty((n, 2))
    pts[:, axis] = coord
    pts[:, other] = t
    return pts, w


def assemble_ghost_jump(basis: TensorBsplineBasis, ghost_faces: GhostFaceSet,
                        order: int | None = None) -> sp.csr_matrix:
    """Unscaled ``int_faces [d^k_n N_i][d^k_n N_j]`` with ``k = p`` by default."""
    k = basis.degree if order is None else order
    acc = _Triplets(basis.n_dofs)
    n = basis.degree + 1
    for face in ghost_faces:
        pts, w = _face_rule(basis, face, n)
        tang = None if basis.dim == 1 else int(face[4])
        dofs, J = face_normal_jump_local(basis, int(face[2]), int(face[3]), tang, pts, k)
        acc.add(dofs, dofs, np.einsum("q,qi,qj->ij", w, J, J))
    return acc.matrix()


def ghost_stiffness_scale(spec: FormulationSpec, p: int, h: float) -> float:
    """``kappa gamma_K`` with ``gamma_K = gamma_k h^(2p-1)`` or ``h^(2p-3)``."""
    exponent = 2 * p - 1 if spec.order == 2 else 2 * p - 3
    return spec.kappa * spec.gamma_k * h ** exponent


def ghost_mass_scale(spec: FormulationSpec, p: int, h: float) -> float:
    """``rho gamma_M`` with ``gamma_M = gamma_m h^(2p+1)``."""
    return spec.rho * spec.gamma_m * h ** (2 * p + 1)


def assemble_ghost_mass(basis: TensorBsplineBasis, ghost_faces: GhostFaceSet,
                        rho: float, gamma_m: float, p: int | None = None) -> sp.csr_matrix:
    """Ghost mass ``rho gamma_m h^(2p+1)`` times the order-``p`` jump form."""
    p = basis.degree if p is None else p
    return rho * gamma_m * basis.h ** (2 * p + 1) * assemble_ghost_jump(basis, ghost_faces, p)


# --------------------------------------------------------------------------
# Local inverse estimates

INVERSE_KINDS = {"grad": 2.0, "third": 3.0, "laplace": 3.0}


def _legendre_evaluation(points, box, p: int, max_order: int) -> ElementEvaluation:
    """Tensor Legendre polynomials of degree <= p per axis on ``box``."""
    factors = []
    for a, (lo, hi) in enumerate(box):
        size = hi - lo
        xi = 2.0 * (points[:, a] - lo) / size - 1.0
        tab = np.zeros((max_order + 1, p + 1, xi.size))
        for j in range(p + 1):
            coef = np.zeros(p + 1)
            coef[j] = 1.0
            for k in range(max_order + 1):
                tab[k, j] = legendre.legval(xi, legendre.legder(coef, k)) * (2.0 / size) ** k
        factors.append(tab)
    return ElementEvaluation(factors, None)


def _inverse_forms(ev_vol, wv, ev_srf, ws, normals, kind):
    if kind == "grad":
        G = ev_vol.gradient()
        V = np.einsum("q,qik,qjk->ij", wv, G, G)
        S = _normal_derivative(ev_srf, normals)
    elif kind == "third":
        L = ev_vol.laplacian()
        V = np.einsum("q,qi,qj->ij", wv, L, L)
        S = np.einsum("qik,qk->qi", ev_srf.grad_laplacian(), normals)
    else:
        L = ev_vol.laplacian()
        V = np.einsum("q,qi,qj->ij", wv, L, L)
        S = ev_srf.laplacian()
    B = np.einsum("q,qi,qj->ij", ws, S, S)
    return B, V


def local_inverse_estimate(basis: TensorBsplineBasis, quad: CutQuadrature, element: int,
                           kind: str = "grad", tags=(DIRICHLET,), beta_cap: float = 10.0,
                           chi: float | None = None, notes: list | None = None) -> float:
    """Element constant ``c sup ||B v|| / ||V v||`` of a boundary trace inequality.

    ``grad`` bounds the normal flux by the gradient (``c = 2``), ``third`` the
    normal derivative of the Laplacian by the Laplacian and ``laplace`` the
    Laplacian trace by the Laplacian (``c = 3``). The supremum runs over the
    degree-``p`` tensor polynomials, evaluated in a Legendre basis on the
    bounding box of the cut region; directions in the null space of the volume
    form are removed before the pencil is solved.
    """
    if kind not in INVERSE_KINDS:
        raise ValueError(f"kind must be one of {tuple(INVERSE_KINDS)}")
    e = int(element)
    srf = quad.surface_rule(e).select(tags)
    if len(srf) == 0:
        return 0.0
    pts, wts = quad.volume[e]
    allpts = np.concatenate([pts, srf.points])
    box = np.stack([allpts.min(axis=0), allpts.max(axis=0)], axis=1)
    ebox = basis.element_box(e)
    flat = box[:, 1] - box[:, 0] <= 1e-12 * basis.h
    box[flat] = ebox[flat]
    p = basis.degree
    order = 1 if kind == "grad" else 3
    B, V = _inverse_forms(_legendre_evaluation(pts, box, p, order), wts,
                          _legendre_evaluation(srf.points, box, p, order), srf.weights,
                          srf.normals, kind)
    # unit-diagonal scaling keeps thin cuts from hiding directions below the
    # null tolerance; Legendre derivatives of too low degree vanish exactly,
    # so those functions have an exactly zero diagonal and drop out
    dv = np.diag(V).copy()
    live = dv > 0.0
    lam, Q, keep = np.zeros(0), np.zeros((0, 0)), np.zeros(0, dtype=bool)
    if live.any():
        s = 1.0 / np.sqrt(dv[live])
        V = V[np.ix_(live, live)] * s[:, None] * s[None, :]
        B = B[np.ix_(live, live)] * s[:, None] * s[None, :]
        lam, Q = np.linalg.eigh(V)
        keep = lam > NULL_TOLERANCE * np.trace(V)
    if not keep.any():
        chi = quad.element_volume(e) / basis.h ** basis.dim if chi is None else chi
        beta = beta_cap / (max(chi, 1e-300) * basis.h)
        if notes is not None:
            notes.append({"element": e, "reason": f"{kind} estimate fallback"})
        log.debug("inverse estimate fallback on element %d", e)
        return float(beta)
    T = Q[:, keep] / np.sqrt(lam[keep])
    top = np.linalg.eigvalsh(T.T @ B @ T)[-1]
    return float(INVERSE_KINDS[kind] * max(top, 0.0))


# --------------------------------------------------------------------------
# Boundary forms


class _SurfaceSweep:
    """Iterate per element over the surface points carrying given tags."""

    def __init__(self, basis, quad, tags, order):
        self.basis, self.quad, self.tags, self.order = basis, quad, tuple(tags), order

    def __iter__(self):
        if not self.tags:
            return
        for e in sorted(self.quad.surface):
            rule: SurfaceRule = self.quad.surface[e].select(self.tags)
            if len(rule):
                yield e, rule, self.basis.eval_element(e, rule.points, self.order)


def penalty_coefficients(basis, quad, spec: FormulationSpec, notes=None) -> dict:
    """Per-element penalty factors ``{"value": {e: beta}, "slope": {e: beta}}``.

    Uniform scalings apply to ``penalty`` and ``nitsche_ghost``; ``nitsche_local``
    uses the local inverse estimates.
    """
    roles = boundary_roles(spec)
    h = basis.h
    out = {"value": {}, "slope": {}}
    kinds = {"value": "grad" if spec.order == 2 else "third", "slope": "laplace"}
    for role in ("value", "slope"):
        tags = roles[role]
        if not tags:
            continue
        for e in sorted(quad.surface):
            if quad.surface[e].measure(tags) <= 0:
                continue
            if spec.boundary == "nitsche_local":
                beta = local_inverse_estimate(basis, quad, e, kinds[role], tags,
                                              spec.beta_cap, notes=notes)
            elif spec.order == 2:
                beta = spec.beta / h
            elif role == "value":
                beta = spec.beta_phi / h ** 3
            else:
                beta = spec.beta_g / h
            out[role][int(e)] = beta
    return out


def assemble_penalty(basis, quad, spec: FormulationSpec, betas: dict) -> sp.csr_matrix:
    """``int kappa beta N_i N_j`` on value tags plus the slope analogue."""
    roles = boundary_roles(spec)
    acc = _Triplets(basis.n_dofs)
    for e, rule, ev in _SurfaceSweep(basis, quad, roles["value"], 0):
        N = ev.values()
        acc.add(ev.dofs, ev.dofs, spec.kappa * betas["value"][e]
                * np.einsum("q,qi,qj->ij", rule.weights, N, N))
    for e, rule, ev in _SurfaceSweep(basis, quad, roles["slope"], 1):
        S = _normal_derivative(ev, rule.normals)
        acc.add(ev.dofs, ev.dofs, spec.kappa * betas["slope"][e]
                * np.einsum("q,qi,qj->ij", rule.weights, S, S))
    return acc.matrix()


def assemble_nitsche_consistency(basis, quad, spec: FormulationSpec) -> sp.csr_matrix:
    """Symmetrized consistency terms of the Nitsche formulation.

    Second order: ``-int kappa (dN_i/dn N_j + dN_j/dn N_i)``. Fourth order:
    ``+int kappa (d(Lap N_i)/dn N_j + sym)`` on value tags and
    ``-int kappa (Lap N_i dN_j/dn + sym)`` on slope tags.
    """
    roles = boundary_roles(spec)
    acc = _Triplets(basis.n_dofs)
    if spec.order == 2:
        for e, rule, ev in _SurfaceSweep(basis, quad, roles["value"], 1):
            A = -spec.kappa * np.einsum("q,qi,qj->ij", rule.weights,
                                        _normal_derivative(ev, rule.normals), ev.values())
            acc.add(ev.dofs, ev.dofs, A + A.T)
        return acc.matrix()
    for e, rule, ev in _SurfaceSweep(basis, quad, roles["value"], 3):
        dL = np.einsum("qik,qk->qi", ev.grad_laplacian(), rule.normals)
        A = spec.kappa * np.einsum("q,qi,qj->ij", rule.weights, dL, ev.values())
        acc.add(ev.dofs, ev.dofs, A + A.T)
    for e, rule, ev in _SurfaceSweep(basis, quad, roles["slope"], 2):
        A = -spec.kappa * np.einsum("q,qi,qj->ij", rule.weights, ev.laplacian(),
                                    _normal_derivative(ev, rule.normals))
        acc.add(ev.dofs, ev.dofs, A + A.T)
    return acc.matrix()


# --------------------------------------------------------------------------
# Loads


@dataclass
class LoadTerm:
    """``F += scale * matrix @ data(t, points[, normals])``."""

    data: str
    matrix: sp.csr_matrix
    points: np.ndarray
    normals: np.ndarray | None


@dataclass
class LoadOperator:
    """Load vector as a sum of sampled data terms, precomputed once."""

    n: int
    terms: list = field(default_factory=list)

    def __call__(self, t: float, data: ProblemData) -> np.ndarray:
        out = np.zeros(self.n)
        for term in self.terms:
            fn = getattr(data, term.data)
            if fn is None:
                continue
            if term.normals is None:
                vals = fn(t, term.points)
            else:
                vals = fn(t, term.points, term.normals)
            out += term.matrix @ np.broadcast_to(np.asarray(vals, dtype=float),
                                                 (term.points.shape[0],))
        return out

    def restricted(self, active) -> "LoadOperator":
        terms = [LoadTerm(t.data, sp.csr_matrix(t.matrix)[active], t.points, t.normals)
                 for t in self.terms]
        return LoadOperator(len(active), terms)


class _Sampler:
    """Collect columns ``(dof values) * weight`` for one data field."""

    def __init__(self, n):
        self.n = n
        self.rows, self.cols, self.vals, self.points, self.normals = [], [], [], [], []
        self.count = 0

    def add(self, dofs, columns, points, normals=None):
        npts = columns.shape[0]
        r, c = np.meshgrid(dofs, np.arange(self.count, self.count + npts), indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(columns.T.ravel())
        self.points.append(points)
        if normals is not None:
            self.normals.append(normals)
        self.count += npts

    def term(self, data: str) -> LoadTerm | None:
        if not self.count:
            return None
        mat = sp.csr_matrix((np.concatenate(self.vals),
                             (np.concatenate(self.rows), np.concatenate(self.cols))),
                            shape=(self.n, self.count))
        normals = np.concatenate(self.normals) if self.normals else None
        return LoadTerm(data, mat, np.concatenate(self.points), normals)


def build_load_operator(basis, quad, spec: FormulationSpec, betas: dict | None = None,
                        with_body: bool = True) -> LoadOperator:
    """Load terms paired with the stiffness variant of ``spec``.

    Natural boundaries collect ``-int g v`` (second order) or
    ``-int q v - int m dv/dn`` (fourth order). Constrained boundaries collect
    the penalty data terms and, for Nitsche methods, the symmetric data terms.
    """
    n = basis.n_dofs
    roles = boundary_roles(spec)
    betas = betas or {"value": {}, "slope": {}}
    nitsche = spec.boundary in ("nitsche_local", "nitsche_ghost")
    kap = spec.kappa
    all_tags = set()
    for rule in quad.surface.values():
        all_tags.update(str(t) for t in rule.tags)
    value_tags, slope_tags = roles["value"], roles["slope"]
    sample = {k: _Sampler(n) for k in ("f", "g", "q", "m", "phi_D", "rotation")}
    if with_body:
        for e, (pts, wts) in quad.volume.items():
            ev = basis.eval_element(e, pts, 0)
            sample["f"].add(ev.dofs, ev.values() * wts[:, None], pts)
    if spec.order == 2:
        natural = sorted(all_tags - set(value_tags))
        for e, rule, ev in _SurfaceSweep(basis, quad, natural, 0):
            w = rule.weights[:, None]
            sample["g"].add(ev.dofs, -ev.values() * w, rule.points, rule.normals)
        for e, rule, ev in _SurfaceSweep(basis, quad, value_tags, 1):
            w = rule.weights[:, None]
            col = kap * betas["value"][e] * ev.values()
            if nitsche:
                col = col - kap * _normal_derivative(ev, rule.normals)
            sample["phi_D"].add(ev.dofs, col * w, rule.points, rule.normals)
    else:
        for e, rule, ev in _SurfaceSweep(basis, quad, sorted(all_tags - set(value_tags)), 0):
            sample["q"].add(ev.dofs, -ev.values() * rule.weights[:, None],
                            rule.points, rule.normals)
        for e, rule, ev in _SurfaceSweep(basis, quad, sorted(all_tags - set(slope_tags)), 1):
            sample["m"].add(ev.dofs, -_normal_derivative(ev, rule.normals)
                            * rule.weights[:, None], rule.points, rule.normals)
        for e, rule, ev in _SurfaceSweep(basis, quad, value_tags, 3):
            col = kap * betas["value"][e] * ev.values()
            if nitsche:
                col = col + kap * np.einsum("qik,qk->qi", ev.grad_laplacian(), rule.normals)
            sample["phi_D"].add(ev.dofs, col * rule.weights[:, None], rule.points, rule.normals)
        for e, rule, ev in _SurfaceSweep(basis, quad, slope_tags, 2):
            col = kap * betas["slope"][e] * _normal_derivative(ev, rule.normals)
            if nitsche:
                col = col - kap * ev.laplacian()
            sample["rotation"].add(ev.dofs, col * rule.weights[:, None],
                                   rule.points, rule.normals)
    terms = [t for k, s in sample.items() if (t := s.term(k)) is not None]
    return LoadOperator(n, terms)


def assemble_load(basis, quad, spec: FormulationSpec, data: ProblemData, t: float,
                  active=None) -> np.ndarray:
    """Load vector at time ``t``, restricted to ``active`` when given."""
    betas = penalty_coefficients(basis, quad, spec)
    op = build_load_operator(basis, quad, spec, betas)
    if active is not None:
        op = op.restricted(active)
    return op(t, data)


# --------------------------------------------------------------------------
# Systems


@dataclass
class AssembledSystem:
    """Semi-discrete system ``M u'' + K u = F(t)`` on the active functions.

    ``lumped`` holds the diagonal when the mass is lumped; ``mass`` then is
    ``diag(lumped)`` plus any ghost-mass block.
    """

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    load: LoadOperator
    active: np.ndarray
    spec: FormulationSpec
    terms: tuple
    lumped: np.ndarray | None = None
    notes: list = field(default_factory=list)
    projection_mass: sp.csr_matrix | None = None

    @property
    def n_dofs(self) -> int:
        return int(self.active.size)

    @property
    def mass_is_diagonal(self) -> bool:
        return self.lumped is not None and "ghost_mass" not in self.terms

    def load_vector(self, t: float, data: ProblemData) -> np.ndarray:
        return self.load(t, data)


@dataclass
class TermSet:
    """Every matrix contribution of one discretization, unscaled where shared.

    Attributes hold full-space matrices: ``mass`` (consistent), ``stiffness``
    (core), ``ghost_jump`` (unit-coefficient order-``p`` jump form) and, per
    penalty variant, the penalty and consistency blocks.
    """

    basis: TensorBsplineBasis
    quad: CutQuadrature
    ghost_faces: GhostFaceSet
    active: np.ndarray
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    ghost_jump: sp.csr_matrix
    cache: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def boundary_blocks(self, spec: FormulationSpec):
        """Penalty and consistency matrices plus the penalty factors for ``spec``."""
        key = (spec.order, spec.boundary, spec.kappa,
               spec.beta if spec.order == 2 else (spec.beta_phi, spec.beta_g), spec.beta_cap)
        if key not in self.cache:
            betas = penalty_coefficients(self.basis, self.quad, spec, self.notes)
            pen = assemble_penalty(self.basis, self.quad, spec, betas)
            cons = None
            if spec.boundary in ("nitsche_local", "nitsche_ghost"):
                cons = assemble_nitsche_consistency(self.basis, self.quad, spec)
            self.cache[key] = (pen, cons, betas)
        return self.cache[key]


def assemble_terms(basis: TensorBsplineBasis, quad: CutQuadrature, ghost_faces: GhostFaceSet,
                   order: int = 2) -> TermSet:
    """Assemble the formulation-independent pieces with ``rho = kappa = 1``."""
    return TermSet(basis, quad, ghost_faces, active_functions(basis, quad),
                   assemble_mass_consistent(basis, quad, 1.0),
                   assemble_stiffness_core(basis, quad, 1.0, order),
                   assemble_ghost_jump(basis, ghost_faces))


def combine(terms: TermSet, spec: FormulationSpec, with_load: bool = True) -> AssembledSystem:
    """Scale and sum the pieces of ``terms`` selected by ``spec``."""
    basis, quad = terms.basis, terms.quad
    p, h = basis.degree, basis.h
    act = terms.active
    included = ["mass_consistent" if spec.mass == "consistent" else "mass_lumped",
                "stiffness"]
    Mc = restrict(spec.rho * terms.mass, act)
    lumped = None
    if spec.mass == "lumped":
        lumped = lump_rowsum(Mc)
        Mr = sp.diags(lumped).tocsr()
    else:
        Mr = Mc
    if spec.ghost_mass:
        Mg = restrict(ghost_mass_scale(spec, p, h) * terms.ghost_jump, act)
        Mr = Mr + Mg
        Mc = Mc + Mg
        included.append("ghost_mass")
    K = spec.kappa * terms.stiffness
    betas = None
    if spec.boundary != "neumann":
        pen, cons, betas = terms.boundary_blocks(spec)
        K = K + pen
        included.append("penalty")
        if cons is not None:
            K = K + cons
            included.append("nitsche_consistency")
    if spec.boundary == "nitsche_ghost":
        K = K + ghost_stiffness_scale(spec, p, h) * terms.ghost_jump
        included.append("ghost_stiffness")
    if with_load:
        load = build_load_operator(basis, quad, spec, betas).restricted(act)
    else:
        load = LoadOperator(act.size)
    return AssembledSystem(sp.csr_matrix(Mr), restrict(K, act), load, act, spec,
                           tuple(included), lumped, list(terms.notes), sp.csr_matrix(Mc))


def assemble_system(basis: TensorBsplineBasis, quad: CutQuadrature, ghost_faces: GhostFaceSet,
                    spec: FormulationSpec, with_load: bool = True) -> AssembledSystem:
    """Assemble mass, stiffness and load operator for one formulation."""
    return combine(assemble_terms(basis, quad, ghost_faces, spec.order), spec, with_load)


def assemble_stiffness_2nd(basis, quad, ghost_faces, spec: FormulationSpec,
                           data: ProblemData | None = None, t: float = 0.0):
    """Second-order stiffness and load on the active functions."""
    if spec.order != 2:
        raise ValueError("spec.order must be 2")
    system = assemble_system(basis, quad, ghost_faces, spec)
    return system.stiffness, system.load(t, data or ProblemData())


def assemble_stiffness_4th(basis, quad, ghost_faces, spec: FormulationSpec,
                           data: ProblemData | None = None, t: float = 0.0):
    """Fourth-order stiffness and load on the active functions."""
    if spec.order != 4:
        raise ValueError("spec.order must be 4")
    if basis.degree < 2:
        raise ValueError("fourth-order problems need degree p >= 2")
    system = assemble_system(basis, quad, ghost_faces, spec)
    return system.stiffness, system.load(t, data or ProblemData())


def symmetry_defect(matrix: sp.spmatrix) -> float:
    """``max|A - A^T| / max|A|``, zero for an empty matrix."""
    A = sp.csr_matrix(matrix)
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0:
        return 0.0
    diff = A - A.T
    return float(abs(diff).max() / scale) if diff.nnz else 0.0


def coo_rows(matrix: sp.spmatrix):
    """Rows ``(row, col, value)`` of the upper triangle for a debug dump."""
    U = sp.triu(sp.coo_matrix(matrix)).tocoo()
    order = np.lexsort((U.col, U.row))
    for r, c, v in zip(U.row[order], U.col[order], U.data[order]):
        yield int(r), int(c), float(v)
