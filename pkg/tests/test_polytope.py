"""Set-calculus tests: hand geometry, an independent support-sweep oracle for
the reach-set truncation index, and robust-invariance sampling."""

import numpy as np
import pytest

from smpckit import polytope
from smpckit.polytope import HPolytope

A_DI = np.array([[1.0, 1.0], [0.0, 1.0]])
B_DI = np.array([[0.5], [1.0]])
K_DI = np.array([-0.43448324327595506, -1.0284659329503831])
ACL_DI = A_DI + B_DI @ K_DI.reshape(1, 2)

# Pinned by an independent support-function sweep (box supports in closed
# form) for Acl = A + B K above, D = I, W = [-0.1, 0.1]^2, eps = 0.01.
MRPI_S_ORACLE = 6
MRPI_ALPHA_ORACLE = 0.007358898163092225

unit_box = HPolytope.box([-1.0, -1.0], [1.0, 1.0])


def test_support_box():
    assert polytope.support(unit_box, [1.0, 1.0]) == pytest.approx(2.0, abs=1e-8)
    assert polytope.support(unit_box, [0.0, -1.0]) == pytest.approx(1.0, abs=1e-8)


def test_support_triangle():
    tri = HPolytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
    assert polytope.support(tri, [1.0, 0.0]) == pytest.approx(1.0, abs=1e-8)


def test_support_unbounded_direction():
    half = HPolytope([[1.0, 0.0]], [1.0])
    with pytest.raises(polytope.UnboundedSetError):
        polytope.support(half, [-1.0, 0.0])


def test_support_empty_set():
    empty = HPolytope([[1.0], [-1.0]], [-1.0, 0.0])
    with pytest.raises(polytope.EmptySetError):
        polytope.support(empty, [1.0])


def test_contains():
    assert unit_box.contains([0.0, 0.0])
    assert not unit_box.contains([1.5, 0.0])
    assert unit_box.contains([1.0 + 1e-12, 0.0])


def test_contains_dimension_mismatch():
    with pytest.raises(ValueError):
        unit_box.contains([0.0])


def test_pontryagin_box_shrinkage():
    big = HPolytope.box([-2.0, -2.0], [2.0, 2.0])
    diff = polytope.pontryagin_diff(big, unit_box)
    np.testing.assert_allclose(diff.h, np.ones(4), atol=1e-8)
    assert not diff.is_empty()


def test_pontryagin_to_point():
    diff = polytope.pontryagin_diff(unit_box, unit_box)
    np.testing.assert_allclose(diff.h, np.zeros(4), atol=1e-8)
    assert diff.contains([0.0, 0.0])
    assert not diff.is_empty()


def test_pontryagin_empty_flagged():
    big = HPolytope.box([-2.0, -2.0], [2.0, 2.0])
    diff = polytope.pontryagin_diff(unit_box, big)
    assert np.all(diff.h < 0)
    assert diff.is_empty()


def test_pontryagin_box_vertices_exact():
    # On boxes the difference is exact: check the vertices of the result.
    big = HPolytope.box([-2.0, -1.0], [2.0, 1.0])
    small = HPolytope.box([-0.5, -0.25], [0.5, 0.25])
    diff = polytope.pontryagin_diff(big, small)
    for vx in (-1.5, 1.5):
        for vy in (-0.75, 0.75):
            assert diff.contains([vx, vy])
            assert not diff.contains([vx * 1.01, vy * 1.01])


@pytest.mark.parametrize("seed", range(10))
def test_support_subadditive(seed):
    rng = np.random.default_rng(seed)
    P = HPolytope(np.vstack([np.eye(2), -np.eye(2), rng.standard_normal((3, 2))]),
                  np.concatenate([np.ones(4), np.abs(rng.standard_normal(3)) + 0.2]))
    d1, d2 = rng.standard_normal(2), rng.standard_normal(2)
    lhs = polytope.support(P, d1 + d2)
    assert lhs <= polytope.support(P, d1) + polytope.support(P, d2) + 1e-7


def test_member_truncated_sum_origin():
    W = HPolytope.box([-1.0], [1.0])
    assert polytope.member_truncated_sum([0.0], [[0.5]], [[1.0]], W, 3)


def test_member_truncated_sum_scalar_boundary():
    W = HPolytope.box([-1.0], [1.0])
    # 1 + 0.5 + 0.25 = 1.75 is the extreme point of the 3-term sum.
    assert polytope.member_truncated_sum([1.75], [[0.5]], [[1.0]], W, 3)
    assert not polytope.member_truncated_sum([1.76], [[0.5]], [[1.0]], W, 3)


def test_mrpi_scalar_forced_index():
    W = HPolytope.box([-1.0], [1.0])
    out = polytope.mrpi_outer([[0.5]], [[1.0]], W, eps=0.5, s_force=4)
    assert out.alpha == pytest.approx(0.0625, abs=1e-12)
    assert out.s == 4
    # Geometric series: scaled truncation is exactly [-2, 2].
    assert out.support([1.0]) == pytest.approx(2.0, abs=1e-9)
    assert out.support([-1.0]) == pytest.approx(2.0, abs=1e-9)
    assert out.member([2.0 - 1e-9])
    assert not out.member([2.0 + 1e-6])
    assert out.member([0.0])


def test_mrpi_zero_dynamics():
    W = HPolytope.box([-0.3, -0.3], [0.3, 0.3])
    out = polytope.mrpi_outer(np.zeros((2, 2)), np.eye(2), W, eps=0.01)
    assert out.s == 1
    assert out.alpha == pytest.approx(0.0, abs=1e-12)
    assert out.scale == pytest.approx(1.0)


def test_mrpi_double_integrator_matches_sweep_oracle():
    W = HPolytope.box([-0.1, -0.1], [0.1, 0.1])
    out = polytope.mrpi_outer(ACL_DI, np.eye(2), W, eps=0.01)
    assert out.s == MRPI_S_ORACLE
    assert out.alpha == pytest.approx(MRPI_ALPHA_ORACLE, abs=1e-9)


def test_mrpi_rejects_unstable():
    W = HPolytope.box([-1.0], [1.0])
    with pytest.raises(ValueError):
        polytope.mrpi_outer([[1.0]], [[1.0]], W, eps=0.1)


def test_mrpi_contains_truncated_members():
    rng = np.random.default_rng(11)
    W = HPolytope.box([-0.1, -0.1], [0.1, 0.1])
    out = polytope.mrpi_outer(ACL_DI, np.eye(2), W, eps=0.01)
    for _ in range(1000):
        sp = int(rng.integers(1, out.s + 1))
        ws = rng.uniform(-0.1, 0.1, size=(sp, 2))
        x = sum(np.linalg.matrix_power(ACL_DI, k) @ ws[k] for k in range(sp))
        assert out.member(x)


def test_mrpi_outer_set_is_robustly_invariant_on_samples():
    rng = np.random.default_rng(12)
    W = HPolytope.box([-0.1, -0.1], [0.1, 0.1])
    out = polytope.mrpi_outer(ACL_DI, np.eye(2), W, eps=0.01)
    x = np.zeros(2)
    for _ in range(10_000):
        x = ACL_DI @ x + rng.uniform(-0.1, 0.1, size=2)
        assert out.member(x)


def test_max_rpi_scalar_already_invariant():
    # 0.5 * 1 + 0.1 = 0.6 <= 1, so [-1, 1] is robustly invariant as is.
    W = HPolytope.box([-0.1], [0.1])
    Xc = HPolytope.box([-1.0], [1.0])
    omega = polytope.max_rpi([[0.5]], [[1.0]], W, Xc)
    assert omega.support([1.0]) == pytest.approx(1.0, abs=1e-9)
    assert omega.support([-1.0]) == pytest.approx(1.0, abs=1e-9)


def test_max_rpi_zero_disturbance():
    W = HPolytope([[1.0], [-1.0]], [0.0, 0.0])  # the singleton {0}
    Xc = HPolytope.box([-1.0], [1.0])
    omega = polytope.max_rpi([[0.5]], [[1.0]], W, Xc)
    assert omega.support([1.0]) == pytest.approx(1.0, abs=1e-9)


def test_max_rpi_empty_when_disturbance_dominates():
    W = HPolytope.box([-5.0], [5.0])
    Xc = HPolytope.box([-1.0], [1.0])
    omega = polytope.max_rpi([[0.5]], [[1.0]], W, Xc)
    assert omega.is_empty()


def test_max_rpi_double_integrator_invariance_property():
    W = HPolytope.box([-0.1, -0.1], [0.1, 0.1])
    Xc = HPolytope.box([-2.0, -2.0], [2.0, 2.0])
    omega = polytope.max_rpi(ACL_DI, np.eye(2), W, Xc)
    assert not omega.is_empty()
    assert omega.contains(np.zeros(2))
    # Facetwise robust-invariance margin.
    for i in range(omega.nrows):
        f = omega.H[i]
        lhs = polytope.support(omega, ACL_DI.T @ f) + polytope.support(W, f)
        assert lhs <= omega.h[i] + 1e-8


def test_hpolytope_json_round_trip():
    obj = unit_box.to_json()
    back = HPolytope.from_json(obj)
    np.testing.assert_array_equal(back.H, unit_box.H)
    np.testing.assert_array_equal(back.h, unit_box.h)


def test_reach_set_json_round_trip():
    W = HPolytope.box([-1.0], [1.0])
    out = polytope.mrpi_outer([[0.5]], [[1.0]], W, eps=0.5, s_force=4)
    back = polytope.TruncatedReachSet.from_json(out.to_json())
    assert back.s == out.s and back.scale == out.scale
    assert back.member([1.9]) and not back.member([2.1])


def test_rejects_zero_row():
    with pytest.raises(ValueError):
        HPolytope([[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0])


def test_boundedness_probe():
    assert unit_box.is_bounded()
    assert not HPolytope([[1.0, 0.0]], [1.0]).is_bounded()
