import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dropsample.features import (
    GRID,
    OFFSET,
    DeformationError,
    DeformationParams,
    FeatureConfig,
    FeatureConfigError,
    FeatureDomainError,
    build_feature_stack,
    deform,
    direction_weights,
    directional_maps,
    read_tensor,
    render_bitmap,
    signature_maps,
    write_tensor,
)
from dropsample.strokes import StrokeSample, generate_synthetic, normalize_sample


def sample(*strokes, label=0):
    return StrokeSample(0, label, tuple(np.asarray(s, dtype=float) for s in strokes))


def random_sample(seed, n_strokes=3):
    rng = np.random.default_rng(seed)
    strokes = [np.cumsum(rng.normal(size=(rng.integers(1, 15), 2)), axis=0) for _ in range(n_strokes)]
    strokes[0] = np.vstack([strokes[0], strokes[0][-1] + [1.0, 0.5]])
    return normalize_sample(StrokeSample(0, 0, tuple(strokes)))


class TestBitmap:
    def test_single_point(self, backend):
        img = render_bitmap(sample([[24, 24]])).data[0]
        assert img[48, 48] == 1.0
        img[48, 48] = 0
        assert not img.any()

    def test_imaginary_channel(self, backend):
        s = sample([[5, 2], [10, 10]], [[30, 30], [40, 35]])
        t = render_bitmap(s, include_imaginary=True)
        assert t.channels == 2
        ref = render_bitmap(sample([[10, 10], [30, 30]])).data[0]
        np.testing.assert_array_equal(t.data[1], ref)
        assert t.data[1].sum() == pytest.approx(math.hypot(20, 20), rel=1e-9)

    def test_no_imaginary_for_single_stroke(self, backend):
        t = render_bitmap(sample([[0, 0], [48, 48]]), include_imaginary=True)
        assert not t.data[1].any()

    def test_mass_scales_with_length(self, backend):
        short = render_bitmap(sample([[3.3, 7.1], [13.3, 11.1]])).data[0].sum()
        long = render_bitmap(sample([[3.3, 7.1], [23.3, 15.1]])).data[0].sum()
        assert long / short == pytest.approx(2.0, rel=0.05)

    def test_unnormalized_rejected(self):
        with pytest.raises(FeatureDomainError):
            render_bitmap(sample([[0, 0], [60, 10]]))

    def test_content_in_centre_box(self, backend):
        s = sample([[0, 0], [48, 0], [48, 48], [0, 48], [0, 0]])
        t = build_feature_stack(s, FeatureConfig(imaginary=True, signature_order=3, directional=True))
        mask = np.zeros((GRID, GRID), bool)
        mask[OFFSET:OFFSET + 49, OFFSET:OFFSET + 49] = True
        assert not t.data[:, ~mask].any()
        assert t.data[0, OFFSET, OFFSET:OFFSET + 49].min() > 0


class TestSignatureMaps:
    def test_straight_x_stroke(self, backend):
        t = signature_maps(sample([[4, 20], [40, 20]]), 1)
        assert t.channels == 3
        on = t.data[0] > 0
        assert (t.data[1][on] > 0).all()
        assert not t.data[2].any()

    def test_straight_stroke_area_zero(self, backend):
        t = signature_maps(sample([[1, 3], [45, 30]]), 2)
        assert np.abs(t.data[4] - t.data[5]).max() < 1e-9

    @pytest.mark.parametrize("order,count", [(0, 1), (1, 3), (2, 7), (3, 15)])
    def test_channel_counts(self, order, count):
        assert signature_maps(random_sample(0), order).channels == count

    def test_translation_invariant(self, backend):
        raw = StrokeSample(0, 0, ([[0, 0], [3, 4], [7, 1]], [[2, 2], [5, 6]]))
        moved = StrokeSample(0, 0, tuple(s + [120.5, -37.25] for s in raw.strokes))
        a = signature_maps(normalize_sample(raw), 3).data
        b = signature_maps(normalize_sample(moved), 3).data
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_window_too_small(self):
        with pytest.raises(FeatureDomainError):
            signature_maps(random_sample(1), 2, window=1)


class TestDirectional:
    def test_axis_segment(self, backend):
        t = directional_maps(sample([[2, 10], [30, 10]]))
        assert t.data[0].sum() == pytest.approx(28.0)
        assert not t.data[1:].any()

    def test_midpoint_direction_splits_evenly(self, backend):
        a = math.radians(22.5)
        t = directional_maps(sample([[5, 5], [5 + 30 * math.cos(a), 5 + 30 * math.sin(a)]]))
        m = t.data.sum(axis=(1, 2))
        assert m[0] == pytest.approx(m[1], rel=1e-9)
        assert not m[2:].any()

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 2 * math.pi, exclude_max=True))
    def test_weights_are_parallelogram(self, theta):
        d = np.array([math.cos(theta), math.sin(theta)])
        k, wa, wb = direction_weights(d)
        assert wa >= 0 and wb >= 0 and wa + wb == pytest.approx(1.0)
        e0 = np.array([math.cos(k * math.pi / 4), math.sin(k * math.pi / 4)])
        e1 = np.array([math.cos((k + 1) * math.pi / 4), math.sin((k + 1) * math.pi / 4)])
        # the unnormalized coefficients reproduce d
        coef = np.linalg.solve(np.column_stack([e0, e1]), d)
        np.testing.assert_allclose(coef / coef.sum(), [wa, wb], atol=1e-9)

    def test_total_mass_is_length(self, backend):
        s = random_sample(2)
        length = sum(np.hypot(*np.diff(st_, axis=0).T).sum() for st_ in s.strokes)
        assert directional_maps(s).data.sum() == pytest.approx(length, rel=0.02)

    def test_rotation_equivariance(self, backend):
        s = random_sample(3)
        c = math.sqrt(0.5)
        rot = StrokeSample(0, 0, tuple((st_ - 24) @ np.array([[c, c], [-c, c]]) for st_ in s.strokes))
        m0 = directional_maps(s).data.sum(axis=(1, 2))
        m1 = directional_maps(normalize_sample(rot)).data.sum(axis=(1, 2))
        f0, f1 = m0 / m0.sum(), m1 / m1.sum()
        np.testing.assert_allclose(np.roll(f0, 1), f1, atol=0.02)


class TestDeform:
    def test_identity(self):
        s = random_sample(4)
        raw = StrokeSample(0, 0, tuple(st_ * 3 + 10 for st_ in s.strokes))
        np.testing.assert_allclose(deform(raw, DeformationParams()).points, normalize_sample(raw).points, atol=1e-9)

    def test_rotation_pi_on_symmetric_glyph(self):
        glyph = sample([[0, 0], [48, 48]], [[0, 48], [48, 0]], [[10, 24], [38, 24]])
        out = deform(glyph, DeformationParams(rotation=math.pi))
        ref = normalize_sample(StrokeSample(0, 0, tuple(48 - st_ for st_ in glyph.strokes)))
        np.testing.assert_allclose(out.points, ref.points, atol=1e-6)

    def test_seeded(self):
        p = DeformationParams(scale_x=1.1, rotation=0.1, local_amplitude=0.5, local_frequency=1.5, seed=9)
        s = random_sample(5)
        assert deform(s, p) == deform(s, p)
        assert deform(s, p) != deform(s, DeformationParams(**{**p.__dict__, "seed": 10}))

    def test_stability_bound(self):
        with pytest.raises(DeformationError):
            DeformationParams(local_amplitude=0.5, local_frequency=2.0)
        with pytest.raises(DeformationError):
            DeformationParams(scale_x=0)


class TestStack:
    @pytest.mark.parametrize("spec,count", [("bitmap", 1), ("bitmap,sign2", 8), ("bitmap,is,sign2,8dir,dt", 17),
                                            ("bitmap,sign1", 4), ("bitmap,sign3", 16), ("bitmap,8dir", 9)])
    def test_counts(self, spec, count):
        cfg = FeatureConfig.parse(spec)
        assert cfg.channels == count
        assert build_feature_stack(random_sample(6), cfg).channels == count

    def test_group_order(self):
        t = build_feature_stack(random_sample(7), FeatureConfig.parse("8dir,sign1,is,bitmap"))
        assert [g for g, _ in t.groups] == ["bitmap", "imaginary", "sign1", "8dir"]

    def test_empty_selection(self):
        with pytest.raises(FeatureConfigError):
            FeatureConfig.parse("")
        with pytest.raises(FeatureConfigError):
            FeatureConfig(bitmap=False)
        with pytest.raises(FeatureConfigError):
            build_feature_stack(random_sample(0), None)
        with pytest.raises(FeatureConfigError):
            FeatureConfig.parse("bitmap,sign1,sign2")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_finite_and_bounded(self, seed):
        t = build_feature_stack(random_sample(seed), FeatureConfig(imaginary=True, signature_order=3, directional=True))
        assert np.isfinite(t.data).all()
        assert t.data[:2].min() >= 0 and t.data[:2].max() <= 1


class TestTensorFile:
    def test_round_trip(self, tmp_path):
        t = build_feature_stack(random_sample(8), FeatureConfig.parse("bitmap,sign2,8dir,is"))
        p = tmp_path / "x.dsft"
        write_tensor(t, p)
        raw = p.read_bytes()
        assert raw[:4] == b"DSFT" and len(raw) == 16 + 4 * 17 * GRID * GRID
        back = read_tensor(p)
        np.testing.assert_array_equal(back.data, t.data.astype(np.float32))
        assert back.groups == t.groups and back.names == t.names

    def test_corrupt(self, tmp_path):
        p = tmp_path / "x.dsft"
        p.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ValueError, match="magic"):
            read_tensor(p)
        write_tensor(render_bitmap(random_sample(9)), p)
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(ValueError, match="expected"):
            read_tensor(p)


def test_synthetic_glyphs_render():
    ds = generate_synthetic(4, 2, seed=0, jitter=0.02)
    for s in ds:
        t = build_feature_stack(s, FeatureConfig.parse("bitmap,sign2,8dir,is"))
        assert t.data[0].sum() > 10
