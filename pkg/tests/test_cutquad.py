import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutiga.cutquad import (build_cut_quadrature, compute_cut_metrics, gauss_legendre,
                            retag_quadrature, triangle_rule)
from cutiga.geometry import (AxisBox, BackgroundMesh, Disk, ImplicitDomain,
                             make_reference_cutout_domain, reference_cutout_area)
from cutiga.splines import build_open_uniform_basis

from conftest import half_plane_domain

BOX = np.array([[0.0, 1.0], [0.0, 1.0]])


def mesh(n, p=2, d=2):
    basis = build_open_uniform_basis([n] * d, p, [[0.0, 1.0]] * d)
    return basis, BackgroundMesh.from_basis(basis)


def polygon_area(poly):
    x, y = np.asarray(poly).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_unit_square(normal, offset):
    """Vertices of {n.x < c} inside the unit square (Sutherland-Hodgman)."""
    square = [(0, 0), (1, 0), (1, 1), (0, 1)]
    n = np.asarray(normal, float)
    out = []
    for a, b in zip(square, square[1:] + square[:1]):
        fa, fb = n @ a - offset, n @ b - offset
        if fa <= 0:
            out.append(a)
        if fa * fb < 0:
            out.append(tuple(np.asarray(a) + fa / (fa - fb) * (np.asarray(b) - a)))
    return out


def test_gauss_legendre_integrates_degree_2n_minus_1():
    x, w = gauss_legendre(3, 0.0, 2.0)
    assert w @ x ** 5 == pytest.approx(2.0 ** 6 / 6, rel=1e-14)


def test_triangle_rule_integrates_monomials():
    tri = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    x, w = triangle_rule(tri, 3)
    assert w.sum() == pytest.approx(0.5)
    # int x^2 y over the unit triangle = 1/60
    assert w @ (x[:, 0] ** 2 * x[:, 1]) == pytest.approx(1.0 / 60.0, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(angle=st.floats(0.05, 1.5), offset=st.floats(0.2, 0.9))
def test_half_plane_area_and_boundary_exact(angle, offset):
    normal = (np.cos(angle), np.sin(angle))
    _, m = mesh(7)
    quad = build_cut_quadrature(half_plane_domain(normal, offset), m, 2)
    poly = clip_unit_square(normal, offset)
    assert quad.total_volume() == pytest.approx(polygon_area(poly), abs=1e-12)
    srf = quad.all_surface()
    edges = [(a, b) for a, b in zip(poly, poly[1:] + poly[:1])
             if abs(np.dot(normal, a) - offset) < 1e-12 and abs(np.dot(normal, b) - offset) < 1e-12]
    length = sum(np.linalg.norm(np.subtract(b, a)) for a, b in edges)
    assert srf.measure() == pytest.approx(length, abs=1e-12)
    assert np.allclose(srf.normals, normal)


def test_half_plane_first_moment_exact():
    _, m = mesh(6)
    quad = build_cut_quadrature(half_plane_domain((1.0, 1.0), 1.1), m, 2)
    moment = sum(w @ x[:, 0] for x, w in quad.volume.values())
    # region x + y < 1.1 in the unit square: 1 - (0.9^2)/2, moment by symmetry of the complement
    area_c = 0.5 * 0.9 ** 2
    moment_c = area_c * (1.0 - 0.9 / 3.0)
    assert moment == pytest.approx(0.5 - moment_c, abs=1e-12)


def test_disk_area_converges_at_second_order():
    _, m = mesh(10)
    dom = ImplicitDomain(Disk(tag="dirichlet", center=(0.52, 0.47), radius=0.31), BOX)
    errs = [abs(build_cut_quadrature(dom, m, 2, rho_max=r).total_volume() - np.pi * 0.31 ** 2)
            for r in range(2, 6)]
    rate = -np.polyfit(np.arange(2, 6), np.log2(errs), 1)[0]
    assert rate >= 1.9


def test_reference_cutout_area_and_closure():
    _, m = mesh(20)
    quad = build_cut_quadrature(make_reference_cutout_domain((0.013, -0.021), h=0.05), m, 2,
                                rho_max=5)
    assert quad.total_volume() == pytest.approx(1.0 - reference_cutout_area(), abs=2e-5)
    srf = quad.all_surface()
    assert np.linalg.norm(srf.weights @ srf.normals) < 1e-10


@pytest.mark.parametrize("eps", [0.3, 1e-2, 1e-4])
def test_sliver_chi_equals_thickness(eps):
    n = 6
    _, m = mesh(n)
    h = 1.0 / n
    quad = build_cut_quadrature(half_plane_domain((1.0, 0.0), 3 * h + eps * h), m, 2)
    metrics = compute_cut_metrics(quad)
    for e in quad.cut_elements:
        assert metrics[int(e)].chi == pytest.approx(eps, rel=1e-10)
        assert metrics[int(e)].eta == pytest.approx(eps, rel=1e-10)


@pytest.mark.parametrize("eps", [0.3, 1e-2, 1e-3])
def test_corner_chi_formula_is_half_the_side(eps):
    # exact corner rule: square of side eps h, Dirichlet along two sides
    from cutiga.cutquad import CutQuadrature, SurfaceRule
    from cutiga.geometry import CUT
    h = 0.25
    m = BackgroundMesh(BOX, (4, 4)).with_classification(np.full(16, CUT))
    pts = np.array([[0.5 * eps * h, 0.5 * eps * h]])
    srf = SurfaceRule(np.array([[eps * h, 0.5 * eps * h], [0.5 * eps * h, eps * h]]),
                      np.array([eps * h, eps * h]), np.array([[1.0, 0.0], [0.0, 1.0]]),
                      np.array(["dirichlet", "dirichlet"], dtype=object), np.zeros(2, bool))
    quad = CutQuadrature(m, {0: (pts, np.array([(eps * h) ** 2]))}, {0: srf}, 3, 3)
    assert compute_cut_metrics(quad)[0].chi == pytest.approx(eps / 2, rel=1e-14)


def test_corner_chi_from_tessellation_converges():
    n = 6
    _, m = mesh(n)
    h = 1.0 / n
    eps = 0.4
    corner = 3 * h + eps * h
    dom = ImplicitDomain(AxisBox(tag="dirichlet", lo=(-1.0, -1.0), hi=(corner, corner)), BOX)
    e = int(np.ravel_multi_index((3, 3), m.shape))
    errs = [abs(compute_cut_metrics(build_cut_quadrature(dom, m, 2, rho_max=r))[e].chi - eps / 2)
            for r in (3, 5, 7)]
    assert errs[-1] < 2e-3 and errs[0] > errs[1] > errs[2]


def test_uncut_element_chi_is_one():
    _, m = mesh(4)
    quad = build_cut_quadrature(half_plane_domain((1.0, 0.0), 0.6), m, 2)
    metrics = compute_cut_metrics(quad)
    assert metrics[0].chi == 1.0


def test_vanishing_cut_is_demoted():
    n = 4
    _, m = mesh(n, p=1)
    quad = build_cut_quadrature(half_plane_domain((1.0, 0.0), 0.5 + 1e-16), m, 1)
    assert all(m_.volume > 0 for m_ in compute_cut_metrics(quad).values())
    assert quad.total_volume() == pytest.approx(0.5, abs=1e-14)


def test_one_dimensional_rule():
    _, m = mesh(4, p=2, d=1)
    dom = ImplicitDomain(__import__("cutiga.geometry", fromlist=["HalfSpace"]).HalfSpace(
        tag="dirichlet", normal=(1.0,), offset=0.6), np.array([[0.0, 1.0]]))
    quad = build_cut_quadrature(dom, m, 2)
    assert quad.total_volume() == pytest.approx(0.6, abs=1e-14)
    srf = quad.all_surface()
    assert srf.points[:, 0] == pytest.approx([0.6])
    assert srf.normals[:, 0] == pytest.approx([1.0])


def test_retag_keeps_fitted_tags():
    basis, m = mesh(8)
    dom = make_reference_cutout_domain(tag="neumann", outer_tag="neumann")
    quad = build_cut_quadrature(dom, m, 2)
    re = retag_quadrature(quad, "clamped")
    srf = re.all_surface()
    assert set(srf.tags[~srf.fitted]) == {"clamped"}
    assert set(srf.tags[srf.fitted]) == {"neumann"}
    assert set(quad.all_surface().tags) == {"neumann"}


def test_bad_parameters_rejected():
    _, m = mesh(4)
    dom = half_plane_domain((1.0, 0.0), 0.5)
    with pytest.raises(ValueError):
        build_cut_quadrature(dom, m, 2, rho_max=0)
    with pytest.raises(ValueError):
        build_cut_quadrature(dom, m, 2, gauss_order=2)
