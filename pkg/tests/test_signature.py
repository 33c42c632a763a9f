import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dropsample.signature import (
    SignatureOrderError,
    chen_concatenate,
    channel_count,
    channel_names,
    flatten,
    path_signature,
    path_signature_segment,
    zero_signature,
)

from oracles import ode_signature


def test_ode_oracle_word_layout():
    # level 1 of a straight segment is its displacement
    np.testing.assert_allclose(ode_signature([[0, 0], [2, 3]], 1), [2, 3], atol=1e-12)
    assert len(ode_signature([[0, 0], [1, 1]], 3)) == 14


class TestSegment:
    def test_x_unit_order2(self):
        s1, s2 = path_signature_segment((1, 0), 2)
        np.testing.assert_array_equal(s1, [1, 0])
        np.testing.assert_array_equal(s2, [[0.5, 0], [0, 0]])
        np.testing.assert_allclose(flatten((s1, s2)), ode_signature([[0, 0], [1, 0]], 2), atol=1e-9)

    def test_zero_displacement(self):
        for order in (1, 2, 3):
            assert all(not lvl.any() for lvl in path_signature_segment((0, 0), order))

    def test_y_order3(self):
        s3 = path_signature_segment((0, 2), 3)[2]
        assert s3[1, 1, 1] == pytest.approx(8 / 6, abs=1e-15)
        mask = np.ones((2, 2, 2), bool)
        mask[1, 1, 1] = False
        assert not s3[mask].any()
        np.testing.assert_allclose(flatten(path_signature_segment((0, 2), 3)),
                                   ode_signature([[0, 0], [0, 2]]), atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_matches_ode_oracle(self, dx, dy):
        got = flatten(path_signature_segment((dx, dy), 3))
        np.testing.assert_allclose(got, ode_signature([[0, 0], [dx, dy]]), atol=1e-8, rtol=1e-10)

    def test_bad_order(self):
        with pytest.raises(SignatureOrderError):
            path_signature_segment((1, 0), 4)


class TestChen:
    def test_two_unit_steps(self):
        a = path_signature_segment((1, 0), 2)
        got = chen_concatenate(a, a, 2)
        np.testing.assert_allclose(got[0], [2, 0])
        np.testing.assert_allclose(got[1], [[2, 0], [0, 0]])
        np.testing.assert_allclose(flatten(got), flatten(path_signature_segment((2, 0), 2)))

    def test_identity_element(self):
        s = path_signature_segment((0.3, -1.2), 3)
        for got in (chen_concatenate(s, zero_signature(3), 3), chen_concatenate(zero_signature(3), s, 3)):
            np.testing.assert_array_equal(flatten(got), flatten(s))

    def test_l_shaped_area(self):
        s = chen_concatenate(path_signature_segment((1, 0), 2), path_signature_segment((0, 1), 2), 2)
        assert s[1][0, 1] == pytest.approx(1.0)
        assert s[1][1, 0] == pytest.approx(0.0)
        assert (s[1][0, 1] - s[1][1, 0]) / 2 == pytest.approx(0.5)
        np.testing.assert_allclose(flatten(s), ode_signature([[0, 0], [1, 0], [1, 1]], 2), atol=1e-9)

    def test_order_mismatch(self):
        with pytest.raises(SignatureOrderError):
            chen_concatenate(zero_signature(2), zero_signature(3))
        with pytest.raises(SignatureOrderError):
            chen_concatenate(zero_signature(2), zero_signature(2), 3)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=4, max_size=4))
    def test_three_segment_paths(self, pts):
        got = flatten(path_signature(pts, 3))
        np.testing.assert_allclose(got, ode_signature(pts), atol=1e-8, rtol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.lists(st.floats(0, 2), min_size=1, max_size=6))
    def test_collinear_area_vanishes(self, ux, uy, steps):
        pts = np.concatenate([[[0.0, 0.0]], np.cumsum(np.outer(steps, [ux, uy]), axis=0)])
        s2 = path_signature(pts, 2)[1]
        assert abs(s2[0, 1] - s2[1, 0]) < 1e-9

    def test_associative(self):
        rng = np.random.default_rng(0)
        a, b, c = (path_signature(rng.normal(size=(3, 2)), 3) for _ in range(3))
        left = chen_concatenate(chen_concatenate(a, b), c)
        right = chen_concatenate(a, chen_concatenate(b, c))
        np.testing.assert_allclose(flatten(left), flatten(right), atol=1e-12)


def test_channel_counts():
    assert [channel_count(o) for o in range(4)] == [1, 3, 7, 15]
    assert channel_names(2) == ["sig0", "sig_x", "sig_y", "sig_xx", "sig_xy", "sig_yx", "sig_yy"]
    assert len(channel_names(3)) == 15
