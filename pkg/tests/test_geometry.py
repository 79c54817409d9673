import numpy as np
import pytest

from cutiga.cutquad import build_cut_quadrature, compute_cut_metrics, min_cut_chi
from cutiga.geometry import (BOUNDARY_TAGS, CUT, EXTERIOR, INTERIOR, BackgroundMesh, Disk,
                             ImplicitDomain, classify_elements, extract_ghost_faces,
                             make_reference_cutout_domain, random_translations,
                             reference_cutout_area, splitmix64)
from cutiga.splines import build_open_uniform_basis


def grid(n, p=1):
    basis = build_open_uniform_basis([n, n], p, [[0.0, 1.0], [0.0, 1.0]])
    return basis, BackgroundMesh.from_basis(basis)


def test_centred_cutout_has_all_three_classes():
    _, mesh = grid(20)
    cls_ = classify_elements(make_reference_cutout_domain(), mesh)
    assert {INTERIOR, EXTERIOR, CUT} <= set(cls_.tolist())


def test_cut_count_matches_dense_sampling_oracle():
    n, s = 30, 64
    _, mesh = grid(n)
    domain = make_reference_cutout_domain((0.011, -0.007), h=1.0 / n)
    cls_ = classify_elements(domain, mesh, degree=1, rho_max=6)
    ref = np.linspace(0.0, 1.0, s)
    cell = np.stack(np.meshgrid(ref, ref, indexing="ij"), axis=-1).reshape(-1, 2) / n
    lows = mesh.element_lower(np.arange(mesh.n_elements))
    phi = domain.phi((lows[:, None, :] + cell[None]).reshape(-1, 2)).reshape(mesh.n_elements, -1)
    oracle = (phi.min(axis=1) < 0) & (phi.max(axis=1) > 0)
    assert int((cls_ == CUT).sum()) == int(oracle.sum())


def test_ghost_faces_match_pairwise_scan():
    n = 12
    _, mesh = grid(n)
    cls_ = classify_elements(make_reference_cutout_domain((0.02, 0.03), h=1.0 / n), mesh)
    faces = extract_ghost_faces(mesh.with_classification(cls_))
    got = {tuple(sorted(f[:2])) for f in faces.faces.tolist()}
    want = set()
    for a in range(mesh.n_elements):
        for b in range(a + 1, mesh.n_elements):
            ia, ib = np.array(np.unravel_index([a, b], mesh.shape)).T
            adjacent = np.abs(ia - ib).sum() == 1
            members = cls_[a] != EXTERIOR and cls_[b] != EXTERIOR
            if adjacent and members and CUT in (cls_[a], cls_[b]):
                want.add((a, b))
    assert got == want


def test_translation_outside_element_size_rejected():
    with pytest.raises(ValueError):
        make_reference_cutout_domain((0.2, 0.0), h=0.05)


def test_translation_outside_margin_rejected():
    with pytest.raises(ValueError):
        make_reference_cutout_domain((0.0, 0.4))


def test_splitmix64_reference_stream():
    # first outputs for seed 0 of the published reference implementation
    state, a = splitmix64(0)
    state, b = splitmix64(state)
    assert a == 0xE220A8397B1DCDAF
    assert b == 0x6E789E6AA1B965F4


def test_translations_are_seeded_and_bounded():
    h = 0.05
    a = random_translations(100, h, 7)
    assert np.array_equal(a, random_translations(100, h, 7))
    assert not np.array_equal(a, random_translations(100, h, 8))
    assert np.all(np.abs(a) <= h)
    assert abs(a.mean()) < 0.2 * h


def test_hundred_translations_give_distinct_chi_over_three_decades():
    n = 20
    basis, mesh = grid(n)
    chis = []
    for t in random_translations(100, basis.h, 20240601):
        quad = build_cut_quadrature(make_reference_cutout_domain(tuple(t), h=basis.h), mesh, 1)
        chis.append(min_cut_chi(compute_cut_metrics(quad, dirichlet_tags=BOUNDARY_TAGS), quad))
    assert len(set(chis)) == 100
    assert np.log10(max(chis) / min(chis)) >= 3.0


def test_domain_tags_follow_nearest_primitive():
    box = np.array([[0.0, 1.0], [0.0, 1.0]])
    shape = Disk(tag="dirichlet", center=(0.3, 0.5), radius=0.2) | \
        Disk(tag="neumann", center=(0.7, 0.5), radius=0.2)
    dom = ImplicitDomain(shape, box)
    tags = dom.tag(np.array([[0.1, 0.5], [0.9, 0.5]]))
    assert list(tags) == ["dirichlet", "neumann"]


def test_reference_area_oracle():
    # rectangle 0.3 x 0.3, half disk of radius 0.15, notch 0.12 x 0.12
    assert reference_cutout_area() == pytest.approx(0.09 + 0.5 * np.pi * 0.15 ** 2 - 0.0144)
