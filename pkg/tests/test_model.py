import numpy as np
import pytest

import snfgp.model as model_mod
from oracles import brute_conditional_loglik, central_diff, flow_param_slots, toy_model
from snfgp.data import Dataset
from snfgp.errors import InputError, TrainingError
from snfgp.flow import init_flow
from snfgp.gp import GpHyperparams
from snfgp.model import (
    SnfgpModel,
    TrainConfig,
    conditional_log_likelihood,
    conditional_log_likelihood_gradients,
    likelihood_terms,
    sample_conditional,
    train,
)
from snfgp.pca import pca_reconstruct


def _spectra(model, rng, B):
    W = rng.standard_normal((B, model.K))
    return pca_reconstruct(W, model.pca), rng.uniform(0, 1, (B, model.D))


class TestLikelihood:
    def test_brute_force_oracle(self, rng):
        model = toy_model(K=2, P=6, D=1, N=5, rng=rng)
        Y, X = _spectra(model, rng, 3)
        assert np.isclose(conditional_log_likelihood(Y, X, model), brute_conditional_loglik(Y, X, model), atol=1e-6)

    def test_decomposition(self, rng):
        model = toy_model(K=3, P=8, D=2, N=5, rng=rng)
        Y, X = _spectra(model, rng, 4)
        t = likelihood_terms(Y, X, model)
        assert t.total == conditional_log_likelihood(Y, X, model)
        assert t.pca_correction == pytest.approx(0.0, abs=1e-12)
        assert t.flow_log_det != 0.0

    def test_k1_b1_is_univariate_gaussian(self, rng):
        model = toy_model(K=1, P=5, D=1, N=3, rng=rng, identity=True)
        y, x = _spectra(model, rng, 1)
        w = float((y[0] - model.pca.mean) @ model.pca.basis[:, 0])
        gp = model.gps[0]
        var = gp.signal_variance + gp.noise_variance + 1e-8 * gp.signal_variance
        expect = -0.5 * (w * w / var + np.log(2 * np.pi * var))
        assert np.isclose(conditional_log_likelihood(y, x, model), expect, atol=1e-10)

    def test_inflated_signal_variance_lowers_value(self, rng):
        model = toy_model(K=2, P=6, D=1, N=5, rng=rng)
        Y, X = _spectra(model, rng, 5)
        before = conditional_log_likelihood(Y, X, model)
        model.gps[0] = model.gps[0].replace(signal_variance=1e8)
        assert conditional_log_likelihood(Y, X, model) < before

    def test_shape_mismatch(self, rng):
        model = toy_model(K=2, P=6, D=1, N=5, rng=rng)
        with pytest.raises(InputError):
            conditional_log_likelihood(np.zeros((2, 5)), np.zeros((2, 1)), model)


def test_end_to_end_gradients(rng):
    model = toy_model(K=2, P=6, D=1, N=5, rng=rng, hidden=6)
    Y, X = _spectra(model, rng, 5)
    _, flow_grads, gp_grads = conditional_log_likelihood_gradients(Y, X, model)

    for k, gp in enumerate(model.gps):
        def f(eta, k=k):
            saved = model.gps[k]
            model.gps[k] = GpHyperparams.from_log(eta)
            try:
                return conditional_log_likelihood(Y, X, model)
            finally:
                model.gps[k] = saved
        assert np.allclose(gp_grads[k], central_diff(f, gp.to_log()), rtol=1e-5, atol=1e-6)

    arrays = model.flow.arrays()
    for (li, net, name), arr in zip(flow_param_slots(model.flow), arrays):
        g = flow_grads[li][net][name]
        saved = arr.copy()

        def f(v):
            arr[...] = v
            return conditional_log_likelihood(Y, X, model)

        num = central_diff(f, saved)
        arr[...] = saved
        assert np.allclose(g, num, rtol=1e-4, atol=1e-6), (li, net, name)


class TestTrain:
    def test_objective_improves(self, small_model):
        _, trace = small_model
        obj = trace.train_objectives()
        assert obj[-1] > obj[0]
        assert all(np.isfinite(r.val_objective) for r in trace.records)

    def test_caches_train_latents(self, small_model, small_dataset):
        model, _ = small_model
        n_train = int(np.sum(small_dataset.split == "train"))
        assert model.train_Z.shape == (n_train, 4)
        assert model.check_consistency() == []
        assert model.metadata["n_train"] == n_train

    def test_deterministic(self, small_dataset):
        cfg = TrainConfig(K=3, batch_size=16, epochs=3, hidden=8, seed=7)
        m1, t1 = train(small_dataset, cfg)
        m2, t2 = train(small_dataset, cfg)
        assert [(r.train_objective, r.val_objective) for r in t1.records] == \
               [(r.train_objective, r.val_objective) for r in t2.records]
        assert np.array_equal(m1.train_Z, m2.train_Z)

    def test_zero_epochs_is_identity_with_default_gps(self, small_dataset):
        model, trace = train(small_dataset, TrainConfig(K=3, epochs=0, hidden=8))
        assert trace.records == []
        assert np.array_equal(model.train_Z, model.train_W)
        assert model.gps[0].noise_variance == pytest.approx(0.1 * model.gps[0].signal_variance)
        tr = small_dataset.split == "train"
        assert np.isfinite(conditional_log_likelihood(small_dataset.Y[tr][:4], small_dataset.X[tr][:4], model))

    def test_empty_train_split(self, small_dataset):
        ds = Dataset(small_dataset.X, small_dataset.Y, small_dataset.material_id,
                     np.full(len(small_dataset), "val"), small_dataset.segments)
        with pytest.raises(InputError):
            train(ds, TrainConfig(K=2, epochs=1))

    def test_divergence_reports_position(self, small_dataset, monkeypatch):
        real = model_mod._objective_and_grads
        calls = {"n": 0}

        def flaky(*args):
            calls["n"] += 1
            value, fg, gg = real(*args)
            return (np.nan if calls["n"] == 4 else value), fg, gg

        monkeypatch.setattr(model_mod, "_objective_and_grads", flaky)
        with pytest.raises(TrainingError) as info:
            train(small_dataset, TrainConfig(K=2, batch_size=64, epochs=5, hidden=8))
        assert info.value.epoch >= 1
        assert info.value.trace is not None

    @pytest.mark.parametrize("kw", [{"batch_size": 1}, {"learning_rate": 0.0}, {"epochs": -1}])
    def test_config_validation(self, kw):
        with pytest.raises(InputError):
            TrainConfig(**kw)


class TestSampling:
    def test_matches_analytic_predictive(self, rng):
        model = toy_model(K=1, P=4, D=1, N=6, rng=rng, identity=True)
        x = np.array([0.37])
        S = 10_000
        samples = sample_conditional(x, model, S, rng_seed=4)
        w = (samples - model.pca.mean) @ model.pca.basis
        mean, var = model.latent_predictive(x[None, :])
        se_mean = np.sqrt(var[0, 0] / S)
        se_var = var[0, 0] * np.sqrt(2.0 / (S - 1))
        assert abs(w.mean() - mean[0, 0]) < 4 * se_mean
        assert abs(w.var(ddof=1) - var[0, 0]) < 4 * se_var

    def test_far_input_reverts_to_prior(self, rng):
        model = toy_model(K=2, P=5, D=1, N=6, rng=rng, identity=True)
        samples = sample_conditional([40.0], model, 20_000, rng_seed=1)
        w = (samples - model.pca.mean) @ model.pca.basis
        prior = [gp.signal_variance + gp.noise_variance for gp in model.gps]
        assert np.allclose(w.var(axis=0), prior, rtol=0.05)

    def test_degenerate_predictive(self, rng):
        model = toy_model(K=1, P=4, D=1, N=3, rng=rng, identity=True)
        model.gps[0] = model.gps[0].replace(noise_variance=0.0)
        model._posteriors = None
        samples = sample_conditional(model.train_X[1], model, 5, rng_seed=0)
        expect = pca_reconstruct(model.train_Z[1], model.pca)
        assert np.allclose(samples, expect, atol=1e-3)

    def test_loglik_of_samples_matches_expectation(self, rng):
        model = toy_model(K=2, P=5, D=1, N=6, rng=rng, identity=True)
        x = np.array([0.5])
        S = 4000
        W = (sample_conditional(x, model, S, rng_seed=9) - model.pca.mean) @ model.pca.basis
        mean, var = model.latent_predictive(x[None, :])
        ll = -0.5 * np.sum((W - mean) ** 2 / var + np.log(2 * np.pi * var), axis=1)
        expected = -0.5 * np.sum(1 + np.log(2 * np.pi * var))
        assert abs(ll.mean() - expected) < 3 * ll.std(ddof=1) / np.sqrt(S)

    def test_seeded(self, rng):
        model = toy_model(K=2, P=5, D=1, N=6, rng=rng)
        assert np.array_equal(sample_conditional([0.2], model, 3, 5), sample_conditional([0.2], model, 3, 5))

    def test_bad_arguments(self, rng):
        model = toy_model(K=2, P=5, D=1, N=6, rng=rng)
        with pytest.raises(InputError):
            sample_conditional([0.2], model, 0)
        with pytest.raises(InputError):
            sample_conditional([0.2, 0.3], model, 2)


def test_consistency_reports_field(rng):
    model = toy_model(K=2, P=5, D=1, N=4, rng=rng)
    bad = SnfgpModel(model.pca, init_flow(3, rng=rng), model.gps, model.train_X, model.train_W, model.train_Z)
    assert bad.check_consistency()[0][0] == "flow"
