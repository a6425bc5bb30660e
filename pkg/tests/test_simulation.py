import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from plsim.estimation import FitConfig, fit
from plsim.exceptions import StudyError
from plsim.simulation import (
    BETA0,
    SimDesign,
    SummaryRow,
    angle,
    curve_export,
    generate,
    population_vq,
    run_replicate,
    run_study,
    true_link,
    write_curve,
    write_tables,
)
from plsim.inference import VarianceEstimates, efficiency_gap


class TestDesign:
    def test_beta0_normalized(self):
        d = SimDesign(beta0=(3.0, 4.0, 0.0, 0.0, 0.0))
        assert np.linalg.norm(d.beta0) == pytest.approx(1, abs=1e-12)
        assert np.linalg.norm(SimDesign().beta0) == pytest.approx(1, abs=1e-12)

    def test_modes(self):
        assert SimDesign.for_mode("parallel").beta_z == SimDesign().beta0
        assert np.dot(SimDesign.for_mode("orthogonal").beta_z, BETA0) == pytest.approx(0)
        with pytest.raises(ValueError):
            SimDesign.for_mode("diagonal")
        with pytest.raises(ValueError):
            SimDesign(reps=0)


class TestGenerate:
    def test_reproducible_and_independent(self):
        d = SimDesign()
        a, b, c = generate(d, 3), generate(d, 3), generate(d, 4)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.x, b.x)
        assert not np.array_equal(a.x, c.x)

    def test_noiseless_branch(self):
        d = SimDesign(theta0=0.0, noise_scale=0.0, beta_z=(0, 0, 0, 0, 0))
        data = generate(d, 1)
        np.testing.assert_array_equal(data.y, true_link(data.x @ np.asarray(d.beta0)) + 0.0 * data.z[:, 0])

    def test_balanced_z(self):
        d = SimDesign(n=4000, beta_z=(0, 0, 0, 0, 0))
        zbar = generate(d, 0).z.mean()
        assert abs(zbar - 0.5) <= 3 / (2 * math.sqrt(4000))

    def test_noise_variance(self):
        d = SimDesign(n=20000)
        data = generate(d, 0)
        signal = true_link(data.x @ np.asarray(d.beta0)) + d.theta0 * data.z[:, 0]
        assert np.var(data.y - signal) == pytest.approx(0.04, rel=0.05)
        assert set(np.unique(data.z)) <= {0.0, 1.0}
        assert data.x.min() >= 0 and data.x.max() <= 1


class TestSummary:
    def test_identity(self, rng):
        e = rng.normal(0.1, 0.3, size=57)
        row = SummaryRow.from_errors("x", e)
        assert row.bias == pytest.approx(e.mean())
        assert row.sd == pytest.approx(e.std(ddof=1))
        assert row.mse == pytest.approx(np.mean(e**2), rel=1e-12)
        assert abs(row.mse - (row.bias**2 + row.sd**2 * 56 / 57)) <= 1e-12 * row.mse


class TestAngle:
    def test_examples(self):
        assert angle([1, 2], [1, 2]) == pytest.approx(0, abs=1e-7)
        assert angle([1, 0], [0, 3]) == pytest.approx(math.pi / 2)
        assert angle([1, 0], np.array([1, 1]) / math.sqrt(2)) == pytest.approx(math.pi / 4)
        assert angle([1, 0], [-1, 0]) == pytest.approx(0, abs=1e-7)
        with pytest.raises(ValueError):
            angle([0, 0], [1, 0])


class TestStudy:
    def test_small_study(self, tmp_path):
        design = SimDesign.for_mode("orthogonal", reps=4)
        res = run_study(design, FitConfig(), curve_grid=np.linspace(0.2, 0.8, 7), keep_fits=True)
        assert [r.method for r in res.rows] == ["SIR5", "SIR5 iter1", "beta0 given"]
        assert [r.method for r in res.angle_rows] == ["SIR5 angle", "SIR5 iter1 angle"]
        assert len(res.replicates) + res.failures == 4
        assert all(0 <= a <= math.pi / 2 for r in res.replicates for a in r.angle)
        assert all(r.fit is not None for r in res.replicates)
        assert res.mean_curve.shape == (7,)
        write_tables(res, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "table,mode,method,bias_or_mean,sd,mse,reps,failures"
        assert len(lines) == 6

    def test_replicate_matches_direct_fit(self):
        design = SimDesign()
        r = run_replicate(design, FitConfig(), 2, keep_fit=True)
        direct = fit(generate(design, 2))
        assert r.theta_err[-1] == pytest.approx(direct.theta[0] - 1.0, abs=0)
        assert r.rep_index == 2

    def test_failure_cap(self, monkeypatch):
        import plsim.simulation as sim

        monkeypatch.setattr(sim, "run_replicate", lambda *a, **k: (_ for _ in ()).throw(ValueError("boom")))
        with pytest.raises(StudyError):
            run_study(SimDesign(reps=3))


class TestCurve:
    def test_design_points_match_fit(self):
        data = generate(SimDesign(), 0)
        res = fit(data)
        c = curve_export(res, data, res.index, true_link)
        np.testing.assert_allclose(c["g_hat"], res.g_at_design, atol=1e-12)
        assert set(c) == {"t", "g_hat", "g_true"}

    def test_constant_data_gives_constant_curve(self):
        design = SimDesign(theta0=0.0, noise_scale=0.0)
        data = generate(design, 0)
        data = replace(data, y=np.full(data.n, 2.0))
        res = fit(data, FitConfig(h_opt=0.3))
        c = curve_export(res, data, np.linspace(res.index.min(), res.index.max(), 9))
        np.testing.assert_allclose(c["g_hat"], 2.0, atol=1e-10)

    def test_clipping_warns(self):
        data = generate(SimDesign(), 0)
        res = fit(data)
        with pytest.warns(UserWarning):
            c = curve_export(res, data, [res.index.max() + 1.0])
        assert c["t"][0] == pytest.approx(res.index.max() + 0.05)

    def test_write_curve_keeps_all_columns(self, tmp_path):
        write_curve({"t": [0.1, 0.2], "g_true": [1, 2], "g_hat": [1, 2], "g_hat_mean": [3, 4]}, tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "t,g_true,g_hat,g_hat_mean"

    @pytest.mark.slow
    def test_single_replicate_curve_accuracy(self):
        data = generate(SimDesign(), 0)
        res = fit(data)
        lo, hi = np.quantile(res.index, [0.1, 0.9])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            c = curve_export(res, data, np.linspace(lo, hi, 81), true_link)
        assert np.abs(c["g_hat"] - c["g_true"]).max() <= 0.15


@pytest.mark.slow
def test_population_dominance():
    v, q, j = population_vq(SimDesign(), n=20000)
    ve = VarianceEstimates(np.eye(1), v, q, j, 20000)
    assert efficiency_gap(ve) >= -1e-3
    # centering on E(X | index) only removes scatter
    assert np.linalg.eigvalsh(v - q)[0] >= -0.05 * np.trace(v)
