import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutiga.splines import (build_open_uniform_basis, eval_basis, face_normal_jump,
                            interpolate, uniform_knot_vector)


def test_rod_has_six_functions():
    basis = build_open_uniform_basis([4], 2, [[0.0, 1.0]])
    assert basis.n_dofs == 6


def test_biquadratic_three_by_three_has_twenty_five_functions():
    basis = build_open_uniform_basis([3, 3], 2, [[0.0, 1.0], [0.0, 1.0]])
    assert basis.n_dofs == 25


def test_knot_vector_is_open_and_uniform():
    kv = uniform_knot_vector(0.0, 1.0, 4, 2)
    assert np.allclose(kv.knots, [0, 0, 0, 0.25, 0.5, 0.75, 1, 1, 1])


@settings(max_examples=60, deadline=None)
@given(p=st.integers(1, 4), n=st.integers(4, 6),
       x=st.floats(0.0, 1.0), y=st.floats(0.0, 1.0))
def test_partition_of_unity_and_zero_derivative_sum(p, n, x, y):
    basis = build_open_uniform_basis([n, n], p, [[0.0, 1.0], [0.0, 1.0]])
    vals = eval_basis(basis, [x, y])
    assert len(vals) == (p + 1) ** 2
    assert abs(sum(v for _, v in vals) - 1.0) < 1e-12
    assert all(v >= -1e-14 for _, v in vals)
    for alpha in ((1, 0), (0, 1)):
        assert abs(sum(v for _, v in eval_basis(basis, [x, y], alpha))) < 1e-9


def test_hat_function_slope_jump_is_two_over_h():
    h = 0.25
    basis = build_open_uniform_basis([4], 1, [[0.0, 1.0]])
    jumps = dict(face_normal_jump(basis, (0, 2), 1, [0.5]))
    # the hat centred at x = 0.5 goes from slope +1/h to -1/h
    assert jumps[2] == pytest.approx(-2.0 / h)
    assert jumps[1] == pytest.approx(1.0 / h)
    assert jumps[3] == pytest.approx(1.0 / h)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_maximum_regularity_jump_only_in_order_p(p):
    basis = build_open_uniform_basis([5], p, [[0.0, 1.0]])
    for order in range(p):
        assert max(abs(v) for _, v in face_normal_jump(basis, (0, 2), order, [0.4])) < 1e-9
    assert max(abs(v) for _, v in face_normal_jump(basis, (0, 2), p, [0.4])) > 1.0


@pytest.mark.parametrize("p", [1, 2, 3])
def test_polynomial_reproduction(p):
    basis = build_open_uniform_basis([3, 4], p, [[0.0, 1.0], [0.0, 2.0]])
    f = lambda x: (x[0] ** p) - 0.5 * x[1] + 0.25 * x[0] * x[1]
    c = interpolate(basis, f)
    rng = np.random.default_rng(0)
    for x in rng.random((20, 2)) * [1.0, 2.0]:
        value = sum(c[i] * v for i, v in eval_basis(basis, x))
        assert value == pytest.approx(f(x), abs=1e-10)


def test_point_outside_box_rejected():
    basis = build_open_uniform_basis([2], 1, [[0.0, 1.0]])
    with pytest.raises(ValueError):
        eval_basis(basis, [1.5])


def test_fewer_elements_than_degree_rejected():
    with pytest.raises(ValueError):
        build_open_uniform_basis([2], 3, [[0.0, 1.0]])
