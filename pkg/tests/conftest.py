"""Shared oracles and model builders for the test suite."""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from aisbench.models import GenerativeModel, ObservationModel
from aisbench.nets import Layer, MlpNetwork


def linear_decoder(w, b):
    """Single linear layer so the marginal likelihood has a closed form."""
    return MlpNetwork([Layer(w, b, "linear")], role="decoder")


class LinearGaussianOracle:
    """Linear decoder + Gaussian noise: log p(x) = log N(x; b, WW^T + sigma^2 I).

    The closed form is evaluated with an independent library routine, never
    through the estimators under test. Also exposes the exact posterior
    N(S W^T (x-b)/sigma^2, S) with S = (I + W^T W / sigma^2)^(-1).
    """

    def __init__(self, latent_dim, data_dim, sigma, seed, w_scale=1.0,
                 orthogonal=False):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((data_dim, latent_dim)) * w_scale
        if orthogonal:
            q, _ = np.linalg.qr(w)
            w = q * w_scale
        self.w = w
        self.b = rng.standard_normal(data_dim) * 0.3
        self.sigma = sigma
        self.model = GenerativeModel(linear_decoder(self.w, self.b),
                                     ObservationModel("gaussian", sigma))
        self._marginal = multivariate_normal(
            mean=self.b, cov=self.w @ self.w.T + sigma**2 * np.eye(data_dim))

    def logpdf(self, x):
        return float(self._marginal.logpdf(x))

    def posterior(self, x):
        s = np.linalg.inv(np.eye(self.w.shape[1])
                          + self.w.T @ self.w / self.sigma**2)
        mean = s @ self.w.T @ (x - self.b) / self.sigma**2
        return mean, s


@pytest.fixture(scope="session")
def oracle_5_20():
    """The latent-5, data-20, sigma-0.1 oracle used across modules.

    The weight scale is calibrated so a 16-chain, 1000-distribution linear
    anneal can resolve log p(x) to well under 0.1 nat; steeper decoders make
    that budget's weight variance too large for any sampler.
    """
    return LinearGaussianOracle(5, 20, 0.1, seed=20240917, w_scale=0.08)


def matched_encoder(oracle: LinearGaussianOracle, std_scale=1.0, mean_shift=None):
    """Encoder whose q(z|x) is the exact posterior of an orthogonal-W oracle.

    With orthogonal decoder columns the posterior covariance is isotropic and
    constant, so a single linear layer realizes it exactly. std_scale and
    mean_shift deliberately detune the proposal for bound-ordering tests.
    """
    from aisbench.models import EncoderProposal
    w, b, sigma = oracle.w, oracle.b, oracle.sigma
    d = w.shape[1]
    gram = w.T @ w
    if not np.allclose(gram, np.diag(np.diag(gram)), atol=1e-10):
        raise ValueError("matched encoder needs orthogonal decoder columns")
    post_var = 1.0 / (1.0 + np.diag(gram) / sigma**2)
    coeff = (post_var[:, None] * w.T) / sigma**2  # maps (x - b) to the mean
    weight = np.vstack([coeff, np.zeros_like(coeff)])
    log_std = 0.5 * np.log(post_var * std_scale**2)
    bias = np.concatenate([-coeff @ b, log_std])
    if mean_shift is not None:
        bias[:d] += mean_shift
    enc = MlpNetwork([Layer(weight, bias, "linear")], role="encoder")
    return EncoderProposal(enc)


def finite_difference(f, z, h=1e-5):
    """Central finite differences of a scalar function at z."""
    z = np.asarray(z, dtype=np.float64)
    g = np.zeros_like(z)
    for i in range(z.size):
        zp = z.copy()
        zp[i] += h
        zm = z.copy()
        zm[i] -= h
        g[i] = (f(zp) - f(zm)) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)
