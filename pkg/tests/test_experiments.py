import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layer_ensembles.data import DatasetSpec, Sample, generate
from layer_ensembles.experiments import (
    ImageResult,
    aula_uncertainty,
    calibration_sweep,
    correlation_table,
    corrupted_inputs,
    flag_count,
    make_corruption,
    pd_shift,
    qc_curve,
    score_image,
    summary_table,
)
from layer_ensembles.metrics import nll
from layer_ensembles.model import HeadOutputs, ModelConfig, build


def result(i, dsc, aula=1.0, mhd=0.0, **kw):
    return ImageResult(id=f"img{i:03d}", tags="", dsc=dsc, mhd=mhd, nll=0.0, variance_sum=kw.get("var", 0.0),
                       entropy_sum=kw.get("ent", 0.0), mi_sum=kw.get("mi", 0.0), aula=aula,
                       prediction_depth=0)


class TestQcCurve:
    def test_worked_example(self):
        c = qc_curve([0.1, 0.9, 0.5, 0.0], [0.95, 0.80, 0.85, 0.99], 0.9, [0, 0.25, 0.5, 0.75, 1])
        np.testing.assert_array_equal(c.remaining, [1, 0.5, 0, 0, 0])
        assert c.num_poor == 2

    def test_oracle_ordering_is_ideal(self):
        rng = np.random.default_rng(0)
        dsc = rng.uniform(0.5, 1.0, 57)
        c = qc_curve(-dsc, dsc)
        np.testing.assert_array_equal(c.remaining, c.ideal)
        assert c.auc == c.ideal_auc

    def test_ideal_reaches_zero_at_poor_fraction(self):
        dsc = np.array([0.5, 0.6, 0.95, 0.97, 0.99])
        c = qc_curve(np.zeros(5), dsc)
        k = np.searchsorted(c.fractions, 2 / 5)
        assert c.ideal[k] == 0 and np.all(c.ideal[k:] == 0)
        assert np.all(np.diff(c.ideal) <= 0)

    def test_no_poor_cases(self):
        with pytest.warns(RuntimeWarning):
            c = qc_curve([0.1, 0.2, 0.3], [0.95, 0.96, 0.99])
        assert c.no_poor_cases
        assert np.all(c.remaining == 0)

    def test_grid_and_baseline(self):
        c = qc_curve([0.0, 1.0], [0.5, 0.95])
        assert len(c.fractions) == 101
        assert c.fractions[1] == 0.01
        np.testing.assert_allclose(c.random, 1 - c.fractions)
        assert c.random_auc == pytest.approx(0.5)

    def test_ties_broken_by_id(self):
        dsc = [0.5, 0.99]
        a = qc_curve([0.0, 0.0], dsc, grid=[0.5], ids=["a", "b"])
        b = qc_curve([0.0, 0.0], dsc, grid=[0.5], ids=["b", "a"])
        assert a.remaining[0] == 0.0 and b.remaining[0] == 1.0

    def test_flag_count_rounding(self):
        assert flag_count(0.07, 100) == 7
        assert flag_count(0.29, 100) == 29
        assert flag_count(0.5, 3) == 2
        assert flag_count(1.0, 9) == 9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_auc_bounds(self, seed):
        rng = np.random.default_rng(seed)
        dsc = rng.uniform(0.6, 1.0, 30)
        dsc[0] = 0.5
        c = qc_curve(rng.random(30), dsc)
        assert c.remaining[0] == 1.0 and c.remaining[-1] == 0.0
        assert c.ideal_auc - 1e-12 <= c.auc <= 1.0
        assert np.all(np.diff(c.remaining) <= 0)

    def test_aula_negated(self):
        np.testing.assert_array_equal(aula_uncertainty([0.2, 0.9]), [-0.2, -0.9])


class TestCorrelation:
    def test_monotone_injection(self):
        rng = np.random.default_rng(0)
        dsc = rng.uniform(0.3, 1.0, 40)
        rows = [result(i, d, aula=d ** 2, mhd=1 / d, ent=-np.log(d)) for i, d in enumerate(dsc)]
        t = correlation_table(rows)
        assert t.get("aula", "dsc") == pytest.approx(1.0)
        assert t.get("aula", "mhd") == pytest.approx(-1.0)
        assert t.get("entropy_sum", "dsc") == pytest.approx(-1.0)
        assert math.isnan(t.get("variance_sum", "dsc"))

    def test_shuffled_null(self):
        rng = np.random.default_rng(7)
        dsc = rng.uniform(0.3, 1.0, 60)
        rows = [result(i, d, aula=a) for i, (d, a) in enumerate(zip(dsc, rng.permutation(dsc)))]
        assert abs(correlation_table(rows).get("aula", "dsc")) < 0.3

    def test_undefined_mhd_dropped_pairwise(self):
        rows = [result(i, 0.1 * i + 0.2, aula=0.1 * i, mhd=m) for i, m in enumerate([1, 2, math.nan, 4, 5])]
        t = correlation_table(rows)
        assert t.counts[("aula", "mhd")] == 4
        assert t.counts[("aula", "dsc")] == 5
        assert t.get("aula", "mhd") == pytest.approx(1.0)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        rows = [result(i, d, aula=a) for i, (d, a) in enumerate(zip(rng.random(20), rng.random(20)))]
        moved = [result(i, r.dsc, aula=np.exp(3 * r.aula)) for i, r in enumerate(rows)]
        assert correlation_table(rows).get("aula", "dsc") == correlation_table(moved).get("aula", "dsc")


def _toy_outputs(rng, n_img=6, n_heads=4, size=8):
    samples, outputs = [], []
    for i in range(n_img):
        mask = np.zeros((size, size), dtype=np.int64)
        mask[2:6, 2:6] = 1
        samples.append(Sample(image=rng.standard_normal((1, size, size)), mask=mask, id=f"t{i}"))
        probs = [np.clip(mask[None] * 0.8 + rng.uniform(0, 0.3, (1, size, size)), 0, 1)
                 for _ in range(n_heads)]
        outputs.append(HeadOutputs(probs))
    return samples, outputs


class TestSweep:
    def test_plain_row_is_last_head(self):
        samples, outputs = _toy_outputs(np.random.default_rng(0))
        rows = calibration_sweep(outputs, samples)
        assert [r.skip for r in rows] == [0, 1, 2, 3]
        last = rows[-1]
        assert last.plain and not any(r.plain for r in rows[:-1])
        want = np.mean([nll(o.probs[-1], s.mask) for o, s in zip(outputs, samples)])
        assert last.nll_mean == want

    def test_skip_out_of_range(self):
        samples, outputs = _toy_outputs(np.random.default_rng(0))
        with pytest.raises(ValueError):
            calibration_sweep(outputs, samples, [4])


class TestSummary:
    def test_perfect_predictions(self):
        samples, _ = _toy_outputs(np.random.default_rng(0))
        results = [score_image(HeadOutputs([s.mask[None].astype(float)] * 4), s, skip=1) for s in samples]
        table = summary_table(results)
        assert table["dsc_mean"] == 1.0 and table["dsc_std"] == 0.0
        assert table["mhd_mean"] == 0.0 and table["mhd_std"] == 0.0
        assert table["nll_mean"] < 1e-6
        assert table["mhd_undefined"] == 0

    def test_matches_recomputation(self):
        rows = [result(i, d, mhd=m) for i, (d, m) in enumerate([(0.5, 1.0), (0.7, math.nan), (0.9, 3.0)])]
        t = summary_table(rows)
        assert t["dsc_mean"] == pytest.approx(0.7)
        assert t["mhd_mean"] == 2.0
        assert t["mhd_undefined"] == 1


class TestPdShift:
    @pytest.fixture(scope="class")
    @staticmethod
    def setup():
        spec = DatasetSpec(train=0, val=0, test=8, image_size=16)
        samples = generate(spec)["test"]
        net = build(ModelConfig(depth=3, base_channels=2, input_size=(16, 16)))
        return net, samples

    def test_counts_sum_and_identity(self, setup):
        net, samples = setup
        identity = make_corruption("gaussian", mean=0.0, std=0.0)
        hists, _ = pd_shift(net, samples, identity, (0.0, 0.5, 1.0))
        for h in hists:
            assert h.total == len(samples)
        assert hists[0].counts == hists[1].counts == hists[2].counts

    def test_same_seed_same_histogram(self, setup):
        net, samples = setup
        noise = make_corruption()
        a, _ = pd_shift(net, samples, noise, (0.0, 1.0), seed=3)
        b, _ = pd_shift(net, samples, noise, (0.0, 1.0), seed=3)
        assert [h.depths for h in a] == [h.depths for h in b]

    def test_corrupted_sets_are_nested(self, setup):
        _, samples = setup
        noise = make_corruption()
        half, f_half = corrupted_inputs(samples, 0.5, noise, seed=2)
        full, f_full = corrupted_inputs(samples, 1.0, noise, seed=2)
        assert sum(f_half) == 4 and all(f_full)
        for a, b, flag in zip(half, full, f_half):
            if flag:
                assert a.tobytes() == b.tobytes()

    def test_unknown_corruption(self):
        with pytest.raises(ValueError):
            make_corruption("blur")
