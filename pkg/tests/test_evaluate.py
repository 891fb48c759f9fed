import json

import numpy as np
import pytest

from snfgp.errors import InputError
from snfgp.evaluate import evaluate_model, spectrum_metrics


def test_perfect_prediction():
    y = np.linspace(0, 1, 10)
    m = spectrum_metrics(y, np.tile(y, (30, 1)))
    assert m.rmse < 1e-14 and m.r2 == pytest.approx(1.0) and m.coverage == 1.0


def test_constant_truth_has_no_r2():
    m = spectrum_metrics(np.ones(5), np.ones((20, 5)) * 1.1)
    assert m.r2 is None and np.isclose(m.rmse, 0.1)


def test_hand_computed():
    y = np.array([0.0, 1.0, 2.0, 3.0])
    samples = np.array([[0.0, 1.0, 2.0, 4.0], [0.0, 1.0, 2.0, 4.0]])
    m = spectrum_metrics(y, samples)
    assert np.isclose(m.rmse, 0.5)
    assert np.isclose(m.r2, 1 - 1.0 / 5.0)
    assert m.coverage == 0.75


def test_coverage_band_is_inclusive_type7():
    samples = np.arange(1.0, 6.0)[:, None]  # 1..5
    lo, hi = np.quantile(samples, [0.025, 0.975], axis=0)
    assert spectrum_metrics(lo, samples).coverage == 1.0
    assert spectrum_metrics(hi, samples).coverage == 1.0
    assert spectrum_metrics(hi + 1e-9, samples).coverage == 0.0


def test_wider_alpha_lowers_coverage(rng):
    y = rng.standard_normal(500)
    s = rng.standard_normal((200, 500))
    assert spectrum_metrics(y, s, 0.5).coverage < spectrum_metrics(y, s, 0.05).coverage


def test_validation():
    with pytest.raises(InputError):
        spectrum_metrics(np.zeros(3), np.zeros((5, 4)))
    with pytest.raises(InputError):
        spectrum_metrics(np.zeros(3), np.zeros((5, 3)), alpha=1.5)


def test_evaluate_model_report(small_model, small_dataset, tmp_path):
    model, _ = small_model
    rep = evaluate_model(model, small_dataset, n_samples=30, rng_seed=1)
    assert set(rep.aggregates) <= {"interpolation", "extrapolation"}
    n_test = int(np.isin(small_dataset.split, ["test_interp", "test_extrap"]).sum())
    assert len(rep.records) == n_test
    assert not rep.insufficient_samples
    for agg in rep.aggregates.values():
        assert 0 <= agg["coverage"]["mean"] <= 1
    rep.write_csv(tmp_path / "e.csv")
    rep.write_json(tmp_path / "e.json")
    assert len((tmp_path / "e.csv").read_text().splitlines()) == n_test + 1
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["n_samples"] == 30 and "regimes" in doc

    again = evaluate_model(model, small_dataset, n_samples=30, rng_seed=1)
    assert [r.coverage for r in again.records] == [r.coverage for r in rep.records]


def test_evaluate_flags_few_samples(small_model, small_dataset):
    rep = evaluate_model(small_model[0], small_dataset, n_samples=5, rng_seed=0)
    assert rep.insufficient_samples


def test_evaluate_requires_test_rows(small_model, small_dataset):
    with pytest.raises(InputError):
        evaluate_model(small_model[0], small_dataset.subset("train"), n_samples=5)
