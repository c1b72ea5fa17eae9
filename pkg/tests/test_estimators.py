"""KDE, ELBO, IWAE bound, sigma tuning: exactness cases and bound ordering."""

import numpy as np
import pytest

from aisbench import streams
from aisbench.ais import AisConfig, make_schedule
from aisbench.estimators import (KdeConfig, SigmaGrid, elbo, iwae_bound,
                                 kde_estimate, kde_log_weights,
                                 optimal_sigma_eval, prior_bank, sigma_sweep)
from aisbench.models import (EncoderProposal, GenerativeModel, ObservationModel,
                             log_obs, log_prior)
from aisbench.nets import Layer, MlpNetwork, random_network
from conftest import LinearGaussianOracle, matched_encoder


@pytest.fixture(scope="module")
def ortho_oracle():
    return LinearGaussianOracle(5, 20, 0.1, seed=7, w_scale=0.3, orthogonal=True)


def constant_model(value=0.3, data_dim=4, sigma=0.2):
    dec = MlpNetwork([Layer(np.zeros((data_dim, 2)), np.full(data_dim, value),
                            "linear")])
    return GenerativeModel(dec, ObservationModel("gaussian", sigma))


class TestKde:
    def test_constant_decoder_is_exact_for_any_k(self):
        model = constant_model()
        x = np.array([0.1, 0.5, 0.2, 0.4])
        expected = log_obs(x, np.full(4, 0.3), model.obs)
        for k in (1, 7, 100):
            est = kde_estimate(x, model, KdeConfig(k), seed=3)
            assert est == pytest.approx(expected, abs=1e-12)

    def test_k1_is_single_draw_likelihood(self, oracle_5_20):
        model = oracle_5_20.model
        x = np.full(20, 0.2)
        z = streams.stream(9, 0, 0, streams.FORWARD).standard_normal(5)
        assert kde_estimate(x, model, KdeConfig(1), seed=9) == pytest.approx(
            model.log_cond(x, z), abs=1e-12)

    def test_lower_bound_and_dominated_by_ais(self, oracle_5_20):
        from aisbench.ais import combine_chains, forward_ais
        from aisbench.models import AnnealingPath
        model = oracle_5_20.model
        cfg = AisConfig(schedule=make_schedule(1000), n_chains=8, seed=19)
        below_truth = 0
        below_ais = 0
        n = 6
        for i in range(n):
            rng = streams.stream(19, i, 0, streams.SIMULATE)
            _, x = model.simulate(rng)
            kde = kde_estimate(x, model, KdeConfig(10_000), seed=19, example_index=i)
            truth = oracle_5_20.logpdf(x)
            runs = forward_ais(x, AnnealingPath(model, x, "prior"), cfg,
                               example_index=i)
            ais, _ = combine_chains([r.log_weight for r in runs], "lower")
            below_truth += kde <= truth
            below_ais += kde < ais
        assert below_truth == n
        assert below_ais == n

    def test_shared_bank_mode(self, oracle_5_20):
        model = oracle_5_20.model
        bank = prior_bank(model, 50, seed=21)
        x1, x2 = np.full(20, 0.1), np.full(20, 0.6)
        cfg = KdeConfig(50, share_samples=True)
        a1 = kde_estimate(x1, model, cfg, seed=21, example_index=0, bank=bank)
        a2 = kde_estimate(x1, model, cfg, seed=21, example_index=5, bank=bank)
        assert a1 == a2  # bank makes the estimate independent of example index
        assert a1 != kde_estimate(x2, model, cfg, seed=21, bank=bank)


class TestElbo:
    def test_matched_encoder_recovers_truth(self, ortho_oracle):
        q = matched_encoder(ortho_oracle)
        model = ortho_oracle.model
        rng = streams.stream(23, 0, 0, streams.SIMULATE)
        _, x = model.simulate(rng)
        est = elbo(x, model, q, n_samples=4000, seed=23)
        # KL(q||posterior)=0, so the ELBO equals log p(x) up to MC noise
        assert est == pytest.approx(ortho_oracle.logpdf(x), abs=0.25)

    def test_standard_normal_encoder_has_zero_kl(self, oracle_5_20):
        model = oracle_5_20.model
        enc = MlpNetwork([Layer(np.zeros((10, 20)), np.zeros(10), "linear")],
                         role="encoder")
        q = EncoderProposal(enc)
        x = np.full(20, 0.4)
        est = elbo(x, model, q, n_samples=40, seed=29)
        rng = streams.stream(29, 0, 0, streams.PROPOSAL_ELBO)
        recon = np.mean([model.log_cond(x, rng.standard_normal(5))
                         for _ in range(40)])
        assert est == pytest.approx(recon, abs=1e-12)

    def test_elbo_below_iwae(self, ortho_oracle):
        # detuned proposal: the importance-weighted bound must win on average
        q = matched_encoder(ortho_oracle, std_scale=1.8)
        model = ortho_oracle.model
        elbos, iwaes = [], []
        for i in range(20):
            rng = streams.stream(31, i, 0, streams.SIMULATE)
            _, x = model.simulate(rng)
            elbos.append(elbo(x, model, q, 40, seed=31, example_index=i))
            iwaes.append(iwae_bound(x, model, q, 40, seed=31, example_index=i))
        assert np.mean(elbos) < np.mean(iwaes)


class TestIwae:
    def test_k1_is_single_importance_weight(self, ortho_oracle):
        q = matched_encoder(ortho_oracle, std_scale=1.5)
        model = ortho_oracle.model
        x = np.full(20, 0.3)
        est = iwae_bound(x, model, q, 1, seed=37)
        mu, log_std = q.moments(x)
        eps = streams.stream(37, 0, 0, streams.PROPOSAL_IWAE).standard_normal(5)
        z = mu + np.exp(log_std) * eps
        expected = log_prior(z) + model.log_cond(x, z) - q.log_q(x, z)
        assert est == pytest.approx(expected, abs=1e-9)

    def test_matched_encoder_is_exact_for_any_k(self, ortho_oracle):
        q = matched_encoder(ortho_oracle)
        model = ortho_oracle.model
        for i, k in enumerate((1, 3, 64)):
            rng = streams.stream(41, i, 0, streams.SIMULATE)
            _, x = model.simulate(rng)
            est = iwae_bound(x, model, q, k, seed=41, example_index=i)
            assert est == pytest.approx(ortho_oracle.logpdf(x), abs=1e-6)

    def test_monotone_in_k(self, ortho_oracle):
        q = matched_encoder(ortho_oracle, std_scale=2.0)
        model = ortho_oracle.model
        means = {k: [] for k in (1, 10, 100)}
        for i in range(40):
            rng = streams.stream(43, i, 0, streams.SIMULATE)
            _, x = model.simulate(rng)
            for k in means:
                means[k].append(iwae_bound(x, model, q, k, seed=43,
                                           example_index=i))
        assert np.mean(means[1]) < np.mean(means[10]) < np.mean(means[100])

    def test_streaming_matches_single_batch(self, ortho_oracle, monkeypatch):
        import aisbench.estimators as est_mod
        q = matched_encoder(ortho_oracle, std_scale=1.3)
        model = ortho_oracle.model
        x = np.full(20, 0.45)
        full = iwae_bound(x, model, q, 500, seed=47)
        monkeypatch.setattr(est_mod, "IWAE_BATCH", 64)
        streamed = iwae_bound(x, model, q, 500, seed=47)
        assert streamed == pytest.approx(full, rel=1e-12)


class TestStochasticLowerBoundTail:
    def test_no_estimator_exceeds_truth_plus_ln20(self, ortho_oracle):
        # single-sample budgets maximize the upward tail; still bounded by e^-b
        model = ortho_oracle.model
        q = matched_encoder(ortho_oracle, std_scale=2.0, mean_shift=0.3)
        b = np.log(20.0)
        n_runs = 1000
        exceed = {"kde": 0, "elbo": 0, "iwae": 0}
        rng = streams.stream(53, 0, 0, streams.SIMULATE)
        _, x = model.simulate(rng)
        truth = ortho_oracle.logpdf(x)
        for i in range(n_runs):
            exceed["kde"] += kde_estimate(x, model, KdeConfig(2), seed=i) > truth + b
            exceed["elbo"] += elbo(x, model, q, 2, seed=i) > truth + b
            exceed["iwae"] += iwae_bound(x, model, q, 2, seed=i) > truth + b
        for name, count in exceed.items():
            assert count / n_runs <= 0.07, name


class TestOptimalSigma:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            SigmaGrid(())
        with pytest.raises(ValueError):
            SigmaGrid((0.01, 0.01))
        with pytest.raises(ValueError):
            SigmaGrid((0.02, 0.01))
        with pytest.raises(ValueError):
            SigmaGrid((-0.1, 0.2))

    def test_improvement_nonnegative_when_fixed_in_grid(self, oracle_5_20):
        model = oracle_5_20.model
        xs = [np.full(20, v) for v in (0.2, 0.4, 0.6)]
        report = optimal_sigma_eval(xs, model, SigmaGrid((0.05, 0.1, 0.2)), "kde",
                                    fixed_sigma=0.1, kde_cfg=KdeConfig(200), seed=59)
        for row in report.rows:
            assert row.improvement >= 0.0
        assert report.mean_improvement >= 0.0

    def test_singleton_grid_zero_improvement(self, oracle_5_20):
        model = oracle_5_20.model
        xs = [np.full(20, 0.3)]
        report = optimal_sigma_eval(xs, model, SigmaGrid((0.1,)), "kde",
                                    fixed_sigma=0.1, kde_cfg=KdeConfig(100), seed=61)
        assert report.rows[0].improvement == 0.0
        assert report.rows[0].best_sigma == 0.1

    def test_fixed_sigma_outside_grid(self, oracle_5_20):
        model = oracle_5_20.model
        xs = [np.full(20, 0.3)]
        report = optimal_sigma_eval(xs, model, SigmaGrid((0.05, 0.1)), "kde",
                                    fixed_sigma=0.3, kde_cfg=KdeConfig(100), seed=67)
        assert np.isfinite(report.rows[0].fixed_nats)


class TestSigmaSweep:
    def test_ais_dominates_kde_pointwise_and_deterministic(self, oracle_5_20):
        model = oracle_5_20.model
        xs = []
        for i in range(8):
            rng = streams.stream(71, i, 0, streams.SIMULATE)
            xs.append(model.simulate(rng)[1])
        grid = SigmaGrid((0.05, 0.1, 0.2))
        ais_cfg = AisConfig(schedule=make_schedule(300), n_chains=8, seed=71)
        kde_cfg = KdeConfig(2000)
        points = sigma_sweep(xs, model, grid, ais_cfg, kde_cfg, seed=71)
        again = sigma_sweep(xs, model, grid, ais_cfg, kde_cfg, seed=71)
        for p, p2 in zip(points, again):
            assert p.ais_mean > p.kde_mean
            assert (p.ais_mean, p.kde_mean) == (p2.ais_mean, p2.kde_mean)

    def test_kde_bias_pushes_argmax_sigma_up(self):
        # sharply peaked decoder: KDE cannot cover small-sigma mass, so its
        # curve peaks at a larger sigma than the AIS curve
        oracle = LinearGaussianOracle(3, 16, 0.02, seed=73, w_scale=0.6)
        model = oracle.model
        xs = []
        for i in range(6):
            rng = streams.stream(73, i, 0, streams.SIMULATE)
            xs.append(model.simulate(rng)[1])
        grid = SigmaGrid((0.02, 0.05, 0.1, 0.2, 0.4))
        ais_cfg = AisConfig(schedule=make_schedule(600), n_chains=8, seed=73)
        points = sigma_sweep(xs, model, grid, ais_cfg, KdeConfig(300), seed=73)
        ais_curve = [p.ais_mean for p in points]
        kde_curve = [p.kde_mean for p in points]
        assert np.argmax(kde_curve) >= np.argmax(ais_curve)
