import json
import math

import numpy as np
import pytest

from hiercal import eval as ev

INF = math.inf


class TestMetrics:
    def test_whole_line(self):
        assert ev.conditional_miscoverage_gaussian(-INF, INF, 0.0, 1.0) == 0

    def test_point_interval(self):
        assert ev.conditional_miscoverage_gaussian(2.0, 2.0, 2.0, 3.0) == 1

    def test_two_sigma_band(self):
        v = ev.conditional_miscoverage_gaussian(1 - 1.96 * 2, 1 + 1.96 * 2, 1.0, 2.0)
        assert abs(v - 0.05) < 2e-4

    def test_matches_erfc(self):
        rng = np.random.default_rng(0)
        lo = rng.normal(size=50)
        hi = lo + rng.exponential(size=50)
        got = ev.conditional_miscoverage_gaussian(lo, hi, 0.3, 1.7)
        oracle = [0.5 * math.erfc(-(l - 0.3) / 1.7 / math.sqrt(2))
                  + 0.5 * math.erfc((h - 0.3) / 1.7 / math.sqrt(2)) for l, h in zip(lo, hi)]
        np.testing.assert_allclose(got, oracle, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            ev.conditional_miscoverage_gaussian(1.0, 0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            ev.conditional_miscoverage_gaussian(0.0, 1.0, 0.0, 0.0)

    def test_coverage(self):
        y = np.array([0.0, 1.0, 5.0])
        assert ev.empirical_coverage(np.full(3, -INF), np.full(3, INF), y) == 1
        assert ev.empirical_coverage(np.full(3, 10.0), np.full(3, 9.0), y) == 0
        assert ev.empirical_coverage(np.array([-1.0, 2.0, 4.0]), np.array([1.0, 3.0, 6.0]), y) == 2 / 3
        with pytest.raises(ValueError):
            ev.empirical_coverage(np.empty(0), np.empty(0), np.empty(0))

    def test_width(self):
        assert ev.mean_width(np.zeros(4), np.full(4, 2.0)) == (2.0, 0)
        assert ev.mean_width(np.array([0.0, -INF]), np.array([1.0, 1.0])) == (INF, 1)
        assert ev.mean_width(np.zeros(3), np.array([1.0, 2.0, 6.0])) == (3.0, 0)

    def test_monte_carlo_miscoverage(self):
        draws = np.array([[0.0, 1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(ev.miscoverage_monte_carlo([0.5], [2.5], draws), [0.5])


class TestRunExperiment:
    def test_worker_count_does_not_change_results(self):
        a = ev.run_experiment("table1_small", seed=3, trials=6, workers=1)
        b = ev.run_experiment("table1_small", seed=3, trials=6, workers=3)
        assert a.to_csv() == b.to_csv()

    def test_trial_rows_do_not_depend_on_trial_count(self):
        a = ev.run_experiment("table1_small", seed=4, trials=2, workers=1)
        b = ev.run_experiment("table1_small", seed=4, trials=5, workers=1)
        assert a.to_csv().splitlines() == b.to_csv().splitlines()[:len(a.rows) + 1]

    def test_csv_layout(self):
        r = ev.run_experiment("table1_small", seed=5, trials=1, workers=1)
        lines = r.to_csv().splitlines()
        assert lines[0] == ",".join(ev.CSV_COLUMNS)
        assert len(lines) == 1 + len(ev.PRESETS["table1_small"]["methods"])
        dc = [l for l in lines if ",double_conformal," in l][0]
        assert dc.split(",")[4] == "+inf"

    def test_summary_standard_errors(self):
        r = ev.run_experiment("table1_small", seed=6, trials=8, workers=1)
        cov = r.column("hcp", "mean_coverage")
        s = r.summary()["hcp"]["coverage"]
        assert s["mean"] == pytest.approx(cov.mean(), abs=1e-15)
        assert s["se"] == pytest.approx(cov.std(ddof=1) / math.sqrt(8), rel=1e-12)
        doc = json.loads(r.summary_json())
        assert doc["summary"]["double_conformal"]["width"]["mean"] == "+inf"
        assert doc["config"]["trials"] == 8

    def test_alpha_d_consistent_with_coverage(self):
        r = ev.run_experiment("table2", {"K": 200, "test_size": 2000}, seed=7, trials=4, workers=1)
        for m in r.methods:
            assert abs(r.mean(m, "mean_alpha_d") - (1 - r.mean(m, "mean_coverage"))) < 0.02

    def test_metric_ranges(self):
        r = ev.run_experiment("l96", {"K": 20, "N": 4, "test_size": 20, "mc_draws": 10},
                              seed=8, workers=1)
        for row in r.rows:
            assert 0 <= row.mean_coverage <= 1
            assert 0 <= row.mean_alpha_d_sq <= row.mean_alpha_d <= 1

    def test_jackknife_preset_on_repeated_generator(self):
        r = ev.run_experiment("jackknife", {"generator": "repeated", "K": 30}, seed=9,
                              trials=2, workers=1)
        assert r.methods == ["jackknife_plus", "jackknife_plus_2"]

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            ev.run_experiment("nope")
        with pytest.raises(ValueError):
            ev.run_experiment("table1_small", {"bogus": 1})
        with pytest.raises(ValueError):
            ev.run_experiment("table1_small", trials=0)

    def test_write_report(self, tmp_path):
        r = ev.run_experiment("table1_small", seed=10, trials=2, workers=1)
        path = ev.write_report(r, str(tmp_path / "out.csv"))
        assert path.endswith("out.json")
        assert (tmp_path / "out.csv").read_text() == r.to_csv()


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("HIERCAL_THREADS", "3")
    assert ev.worker_count() == 3
    monkeypatch.setenv("HIERCAL_THREADS", "0")
    with pytest.raises(ValueError):
        ev.worker_count()


def test_standard_error_shrinks_with_trials():
    small = ev.run_experiment("table1_small", seed=11, trials=10, workers=1)
    large = ev.run_experiment("table1_small", seed=12, trials=160, workers=1)
    ratio = small.se("hcp", "mean_coverage") / large.se("hcp", "mean_coverage")
    # expected ratio is 4; the bounds allow for the noise in two SD estimates
    assert 2.0 < ratio < 8.0
