import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm as scipy_expm

from manifool.errors import HorizonPoint, LogUndefined
from manifool.transforms import (
    TangentVector,
    Transform,
    TransformGroup,
    apply_to_point,
    compose,
    exp_map,
    expm,
    generators,
    log_map,
    logm,
)

GROUPS = list(TransformGroup)
AFFINE_GROUPS = [g for g in GROUPS if not g.is_projective]


def random_coeffs(group, rng, radius):
    u = rng.standard_normal(group.dim)
    return u * (radius * rng.uniform() / np.linalg.norm(u))


class TestGenerators:
    @pytest.mark.parametrize("group,dim", [
        (TransformGroup.TRANSLATION, 2), (TransformGroup.ROTATION_TRANSLATION, 3),
        (TransformGroup.SCALE_TRANSLATION, 3), (TransformGroup.SIMILARITY, 4),
        (TransformGroup.AFFINE, 6), (TransformGroup.PROJECTIVE, 8),
    ])
    def test_dimensions(self, group, dim):
        gens = generators(group)
        assert group.dim == dim and len(gens) == dim
        assert all(g.shape == (3, 3) for g in gens)
        assert np.linalg.matrix_rank(np.stack([g.ravel() for g in gens])) == dim

    def test_translation_and_rotation(self):
        tx, ty, rot = generators(TransformGroup.ROTATION_TRANSLATION)
        expected_tx = np.zeros((3, 3))
        expected_tx[0, 2] = 1
        expected_ty = np.zeros((3, 3))
        expected_ty[1, 2] = 1
        expected_rot = np.zeros((3, 3))
        expected_rot[0, 1], expected_rot[1, 0] = -1, 1
        np.testing.assert_array_equal(tx, expected_tx)
        np.testing.assert_array_equal(ty, expected_ty)
        np.testing.assert_array_equal(rot, expected_rot)

    def test_deterministic_and_copied(self):
        a = generators(TransformGroup.AFFINE)
        a[0][0, 0] = 99
        b = generators(TransformGroup.AFFINE)
        assert b[0][0, 0] == 0

    @pytest.mark.parametrize("name,group", [
        ("T", TransformGroup.TRANSLATION), ("R+T", TransformGroup.ROTATION_TRANSLATION),
        ("S+T", TransformGroup.SCALE_TRANSLATION), ("T+R+S", TransformGroup.SIMILARITY),
        ("affine", TransformGroup.AFFINE), ("projective", TransformGroup.PROJECTIVE),
    ])
    def test_parse(self, name, group):
        assert TransformGroup.parse(name) is group

    def test_parse_unknown(self):
        with pytest.raises(ValueError):
            TransformGroup.parse("shear")


class TestTransform:
    def test_rejects_singular(self):
        with pytest.raises(ValueError):
            Transform(np.zeros((3, 3)))

    def test_rejects_non_finite(self):
        m = np.eye(3)
        m[0, 0] = np.nan
        with pytest.raises(ValueError):
            Transform(m)

    def test_line_round_trip(self, rng):
        t = exp_map(TangentVector(rng.standard_normal(8) * 0.3, TransformGroup.PROJECTIVE))
        line = t.to_line()
        assert len(line.split()) == 9
        assert Transform.from_line(line) == t

    def test_inverse_integer_translation_exact(self):
        t = Transform.translation(3.0, -7.0)
        assert t.inverse() == Transform.translation(-3.0, 7.0)

    def test_tangent_vector_length_checked(self):
        with pytest.raises(ValueError):
            TangentVector(np.zeros(3), TransformGroup.TRANSLATION)
        with pytest.raises(ValueError):
            TangentVector(np.array([np.inf, 0.0]), TransformGroup.TRANSLATION)


class TestExpMap:
    @pytest.mark.parametrize("group", GROUPS)
    def test_zero_is_identity_exactly(self, group):
        assert exp_map(TangentVector.zero(group)) == Transform.identity()

    def test_translation_closed_form(self):
        t = exp_map(TangentVector(np.array([2.5, -1.25]), TransformGroup.TRANSLATION))
        assert t == Transform.translation(2.5, -1.25)

    @pytest.mark.parametrize("theta", [0.1, -0.7, 1.3, math.pi / 2, 3.0])
    def test_rotation_closed_form(self, theta):
        t = exp_map(TangentVector(np.array([0.0, 0.0, theta]), TransformGroup.ROTATION_TRANSLATION))
        np.testing.assert_allclose(t.matrix, Transform.rotation(theta).matrix, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("group", GROUPS)
    def test_matches_scipy(self, group, rng):
        for _ in range(50):
            a = TangentVector(rng.standard_normal(group.dim) * 2.0, group).algebra_element()
            np.testing.assert_allclose(expm(a), scipy_expm(a), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("group", GROUPS)
    def test_inverse_pair(self, group, rng):
        for _ in range(50):
            u = TangentVector(random_coeffs(group, rng, 1.0), group)
            prod = exp_map(u).matrix @ exp_map(-u).matrix
            np.testing.assert_allclose(prod, np.eye(3), atol=1e-10, rtol=0)

    @pytest.mark.parametrize("group", AFFINE_GROUPS)
    def test_bottom_row_exact(self, group, rng):
        for _ in range(20):
            t = exp_map(TangentVector(rng.standard_normal(group.dim), group))
            assert t.matrix[2].tolist() == [0.0, 0.0, 1.0]

    def test_similarity_block_is_scaled_rotation(self, rng):
        for _ in range(20):
            t = exp_map(TangentVector(rng.standard_normal(4), TransformGroup.SIMILARITY))
            a = t.matrix[:2, :2]
            assert abs(a[0, 0] - a[1, 1]) <= 1e-10 and abs(a[0, 1] + a[1, 0]) <= 1e-10

    def test_translations_commute_exactly(self):
        u = TangentVector(np.array([1.5, -2.0]), TransformGroup.TRANSLATION)
        v = TangentVector(np.array([0.25, 3.0]), TransformGroup.TRANSLATION)
        assert exp_map(u + v) == compose(exp_map(u), exp_map(v))


class TestLogMap:
    @pytest.mark.parametrize("group", GROUPS)
    def test_identity(self, group):
        np.testing.assert_array_equal(log_map(Transform.identity(), group).coeffs,
                                      np.zeros(group.dim))

    def test_translation(self):
        u = log_map(Transform.translation(4.0, -3.0), TransformGroup.TRANSLATION)
        np.testing.assert_allclose(u.coeffs, [4.0, -3.0], atol=1e-12)

    @pytest.mark.parametrize("group", GROUPS)
    def test_round_trip_100_draws(self, group):
        rng = np.random.default_rng(7)
        for _ in range(100):
            u = random_coeffs(group, rng, 0.5)
            back = log_map(exp_map(TangentVector(u, group)), group).coeffs
            np.testing.assert_allclose(back, u, atol=1e-9, rtol=0)

    def test_negative_eigenvalue(self):
        with pytest.raises(LogUndefined):
            log_map(Transform(np.diag([-1.0, 1.0, 1.0])), TransformGroup.AFFINE)

    def test_outside_group(self):
        with pytest.raises(LogUndefined):
            log_map(Transform.rotation(0.3), TransformGroup.TRANSLATION)

    def test_logm_inverts_expm(self, rng):
        for _ in range(20):
            a = rng.standard_normal((3, 3)) * 0.4
            np.testing.assert_allclose(logm(expm(a)), a, atol=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4))
    def test_similarity_round_trip_property(self, coeffs):
        u = np.array(coeffs)
        back = log_map(exp_map(TangentVector(u, TransformGroup.SIMILARITY)),
                       TransformGroup.SIMILARITY).coeffs
        np.testing.assert_allclose(back, u, atol=1e-9)


class TestCompose:
    def test_identity_is_neutral(self, rng):
        t = exp_map(TangentVector(rng.standard_normal(6), TransformGroup.AFFINE))
        assert compose(t, Transform.identity()) == t
        assert compose(Transform.identity(), t) == t

    def test_translations_add(self):
        assert compose(Transform.translation(1, 2), Transform.translation(3, 4)) == \
            Transform.translation(4, 6)

    def test_rotation_inverse_pair(self):
        prod = compose(Transform.rotation(0.7), Transform.rotation(-0.7))
        np.testing.assert_allclose(prod.matrix, np.eye(3), atol=1e-12)

    def test_second_argument_acts_first(self):
        t = compose(Transform.rotation(math.pi / 2), Transform.translation(1, 0))
        x, y = apply_to_point(t, (0, 0))
        assert abs(x) < 1e-12 and abs(y - 1) < 1e-12


class TestApplyToPoint:
    def test_identity(self):
        assert apply_to_point(Transform.identity(), (3, -2)) == (3.0, -2.0)

    def test_translation(self):
        assert apply_to_point(Transform.translation(1, 2), (0, 0)) == (1.0, 2.0)

    def test_quarter_turn(self):
        x, y = apply_to_point(Transform.rotation(math.pi / 2), (1, 0))
        assert abs(x) < 1e-12 and abs(y - 1) < 1e-12

    def test_projective_division(self):
        m = np.eye(3)
        m[2, 0] = 0.5
        assert apply_to_point(Transform(m), (2, 4)) == (1.0, 2.0)

    def test_horizon(self):
        m = np.eye(3)
        m[2, 0] = -1.0
        with pytest.raises(HorizonPoint):
            apply_to_point(Transform(m), (1, 0))
