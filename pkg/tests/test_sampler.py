import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dropsample import sampler as S
from dropsample.sampler import (
    GroupThresholds,
    QuotaTable,
    SampleGroup,
    UpdaterConfig,
    classify_group,
    classify_groups,
    draw_minibatch,
    equivalent_set_size,
    update_factor_ds1,
    update_factor_ds2,
)

from oracles import ds1_factor_mp, ds2_factor_ref, linear_scan_draw

TH10 = GroupThresholds.for_classes(10)
DS1 = UpdaterConfig("ds1")
DS2 = UpdaterConfig("ds2")


class TestGroups:
    def test_examples(self):
        assert classify_group(0.05, TH10) is SampleGroup.NOISY
        assert classify_group(0.995, TH10) is SampleGroup.WELL_RECOGNIZED
        assert classify_group(0.1, TH10) is SampleGroup.CONFUSING
        assert classify_group(0.99, TH10) is SampleGroup.CONFUSING

    @given(st.floats(0, 1))
    def test_partition(self, p):
        g = classify_group(p, TH10)
        assert (g is SampleGroup.NOISY) == (p < TH10.t1)
        assert (g is SampleGroup.WELL_RECOGNIZED) == (p > TH10.t2)
        assert classify_groups([p], TH10)[0] == int(g)

    def test_threshold_validation(self):
        for t1, t2 in ((0.0, 0.5), (0.6, 0.5), (0.1, 1.0)):
            with pytest.raises(ValueError):
                GroupThresholds(t1, t2)


class TestFactors:
    def test_ds1_examples(self):
        assert update_factor_ds1(1.0, 1.0, DS1, TH10) == 0.0
        assert update_factor_ds1(0.995, 1.0, DS1, TH10) == pytest.approx(0.8646647167633873, abs=1e-15)
        assert float(ds1_factor_mp(0.995, 10)) == pytest.approx(0.864665, abs=1e-6)
        assert update_factor_ds1(0.5, 0.3, DS1, TH10) == pytest.approx(1 / 0.3)

    def test_ds1_tail_continuity(self):
        f = update_factor_ds1(math.nextafter(0.1, 0), 1.0, DS1, TH10)
        assert 1 - f < 1e-20

    @settings(max_examples=300)
    @given(st.floats(0, 1), st.integers(2, 100))
    def test_ds1_against_mpmath(self, p, k):
        th = GroupThresholds.for_classes(k)
        ref = ds1_factor_mp(p, k)
        got = update_factor_ds1(p, 0.5, DS1, th)
        if ref is None:
            assert got == 2.0
        else:
            assert abs(got - float(ref)) < 1e-12

    def test_ds2_examples(self):
        assert update_factor_ds2(0.01, 1.0, DS2, TH10) == 0.9
        assert update_factor_ds2(0.9995, 1.0, DS2, TH10) == 0.5
        assert update_factor_ds2(0.5, 0.7, DS2, TH10) * 0.7 == pytest.approx(1.0)

    @pytest.mark.parametrize("p,f", [(0.0, 0.9), (0.025, 0.5), (0.05, 0.1), (0.0999, 0.1),
                                     (0.9901, 0.9), (0.999, 0.5), (0.9999, 0.1), (1.0, 0.1)])
    def test_ds2_boundaries(self, p, f):
        assert update_factor_ds2(p, 1.0, DS2, TH10) == f

    @settings(max_examples=300)
    @given(st.floats(0, 1), st.integers(2, 100))
    def test_ds2_against_table(self, p, k):
        th = GroupThresholds.for_classes(k)
        ref = ds2_factor_ref(p, k)
        got = update_factor_ds2(p, 0.25, DS2, th)
        assert got == (4.0 if ref is None else ref)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            UpdaterConfig("ds3")
        with pytest.raises(ValueError):
            UpdaterConfig(q_min=0)
        with pytest.raises(ValueError):
            UpdaterConfig(low_factors=(0.9, 0.5, 0.0))
        with pytest.raises(ValueError):
            UpdaterConfig(high_bounds=(0.99, 0.98, 0.999, 1.0))
        with pytest.raises(ValueError):
            S.update_factor(0.5, 1.0, UpdaterConfig("off"), TH10)


class TestQuotaTable:
    def test_multiplication(self):
        qt = QuotaTable(3)
        assert qt.apply_update(0, 0.995, DS2, TH10) is SampleGroup.WELL_RECOGNIZED
        assert qt.quotas[0] == 0.9

    def test_floor(self):
        qt = QuotaTable(2, quotas=[1e-6, 1.0])
        qt.apply_update(0, 1.0, DS1, TH10)
        assert qt.quotas[0] == 1e-6

    def test_warmup_suppresses_noisy_branch(self):
        qt = QuotaTable(2, warmup=5, quotas=[0.4, 1.0])
        assert qt.apply_update(0, 0.001, DS2, TH10) is SampleGroup.CONFUSING
        assert qt.quotas[0] == 1.0
        qt.t = 5
        assert qt.apply_update(0, 0.001, DS2, TH10) is SampleGroup.NOISY
        assert qt.quotas[0] == 0.9

    def test_unknown_id(self):
        with pytest.raises(IndexError):
            QuotaTable(3).apply_update(3, 0.5, DS2, TH10)
        with pytest.raises(IndexError):
            QuotaTable(3).apply_batch([0, -1], [0.5, 0.5], DS2, TH10)

    def test_repeated_draw_updates_twice(self):
        qt = QuotaTable(3)
        qt.apply_batch([1, 1], [0.9995, 0.9995], DS2, TH10)
        assert qt.quotas[1] == 0.25 and qt.t == 1
        assert qt.total == pytest.approx(2.25, abs=1e-15)

    def test_set_size_examples(self):
        qt = QuotaTable(100)
        assert equivalent_set_size(qt) == 100
        qt.set_quotas(np.arange(50), 0.1)
        assert equivalent_set_size(qt) == pytest.approx(55)
        assert qt.total == pytest.approx(55, abs=1e-12)

    def test_bad_quotas(self):
        with pytest.raises(ValueError):
            QuotaTable(2, quotas=[0.5, 1.5])
        with pytest.raises(ValueError):
            QuotaTable(0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 19), st.floats(0, 1)), min_size=1, max_size=200),
           st.sampled_from(["ds1", "ds2"]), st.integers(0, 3))
    def test_update_invariants(self, updates, variant, warmup):
        cfg = UpdaterConfig(variant)
        th = GroupThresholds.for_classes(5)
        qt = QuotaTable(20, warmup=warmup)
        for j in range(0, len(updates), 7):
            chunk = updates[j:j + 7]
            idx = [i for i, _ in chunk]
            ps = [p for _, p in chunk]
            before = qt.quotas.copy()
            groups = qt.apply_batch(idx, ps, cfg, th)
            assert np.all(qt.quotas >= qt.q_min) and np.all(qt.quotas <= 1.0)
            # confusing entries (after warm-up mapping) that come last for their id end at exactly 1
            last = {i: g for i, g in zip(idx, groups)}
            for i, g in last.items():
                if g == SampleGroup.CONFUSING:
                    assert qt.quotas[i] == 1.0
            if not (groups == SampleGroup.CONFUSING).any():
                assert qt.quotas.sum() <= before.sum() + 1e-12
            untouched = np.setdiff1d(np.arange(20), idx)
            assert np.array_equal(qt.quotas[untouched], before[untouched])
        assert abs(qt.total - qt.quotas.sum()) <= 1e-9 * 20

    def test_index_consistency_long_run(self, backend):
        rng = np.random.default_rng(0)
        m = 1000
        qt = QuotaTable(m)
        th = GroupThresholds.for_classes(10)
        for _ in range(2000):
            idx = rng.integers(0, m, 500)
            p = rng.choice([rng.uniform(0, 0.1), rng.uniform(0.99, 1), rng.uniform(0.1, 0.99)], size=500)
            qt.apply_batch(idx, p, DS2, th)
        # 10^6 random updates
        assert abs(qt.total - math.fsum(qt.quotas)) <= 1e-9 * m

    def test_checkpoint_round_trip(self, tmp_path):
        qt = QuotaTable(5, warmup=3, variant="ds1", quotas=[1, 0.5, 1e-6, 0.25, 0.9], t=7)
        qt.save(tmp_path / "q.bin")
        raw = (tmp_path / "q.bin").read_bytes()
        assert raw[:4] == b"DSQT" and len(raw) == 44 + 5 * 8
        back = QuotaTable.load(tmp_path / "q.bin")
        assert (back.m, back.t, back.warmup, back.variant, back.q_min) == (5, 7, 3, "ds1", 1e-6)
        assert np.array_equal(back.quotas, qt.quotas) and back.total == qt.total

    def test_checkpoint_corrupt(self, tmp_path):
        qt = QuotaTable(5)
        qt.save(tmp_path / "q.bin")
        (tmp_path / "q.bin").write_bytes((tmp_path / "q.bin").read_bytes()[:-8])
        with pytest.raises(ValueError):
            QuotaTable.load(tmp_path / "q.bin")


class TestDraw:
    def test_probabilities(self):
        qt = QuotaTable(3, quotas=[0.5, 0.5, 1.0])
        np.testing.assert_allclose(qt.probabilities(), [0.25, 0.25, 0.5])

    def test_uniform(self, backend):
        draws = draw_minibatch(QuotaTable(10), 100_000, np.random.default_rng(0))
        counts = np.bincount(draws, minlength=10)
        sigma = math.sqrt(100_000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - 10_000) < 3 * sigma)

    def test_floor_sample_still_drawn(self, backend):
        qt = QuotaTable(2, quotas=[1e-6, 1.0])
        n = 10_000_000
        hits = int((draw_minibatch(qt, n, np.random.default_rng(1)) == 0).sum())
        p = 1e-6 / (1 + 1e-6)
        assert abs(hits - n * p) < 4 * math.sqrt(n * p)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=8), st.integers(0, 2**32 - 1))
    def test_matches_linear_scan(self, quotas, seed):
        qt = QuotaTable(len(quotas), quotas=quotas)
        got = draw_minibatch(qt, 200, np.random.default_rng(seed))
        u = np.random.default_rng(seed).random(200)
        assert np.array_equal(got, linear_scan_draw(quotas, u))

    def test_chi_square(self, backend):
        q = np.array([1.0, 0.5, 0.1, 1e-3, 0.75, 0.3, 0.9, 0.05])
        qt = QuotaTable(8, quotas=q)
        counts = np.bincount(draw_minibatch(qt, 1_000_000, np.random.default_rng(2)), minlength=8)
        assert stats.chisquare(counts, 1_000_000 * q / q.sum()).pvalue > 0.001

    def test_seeded(self):
        qt = QuotaTable(50, quotas=np.linspace(0.01, 1, 50))
        a = draw_minibatch(qt, 96, 5)
        assert np.array_equal(a, draw_minibatch(qt, 96, 5))
        with pytest.raises(ValueError):
            draw_minibatch(qt, 0, 5)
