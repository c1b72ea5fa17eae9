"""Generative joint densities, observation models, encoder proposals, annealed targets.

The density convention is nats throughout. Continuous data lives in [0,1]
pixel space and sigma is expressed in the same units; the Gaussian density is
evaluated unclipped, matching the usual KDE convention, so every estimator in
the package shares it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import MlpNetwork

LOG_2PI = float(np.log(2.0 * np.pi))
BERNOULLI_EPS = 1e-7


@dataclass(frozen=True)
class ObservationModel:
    """Fixed-variance Gaussian or Bernoulli observation distribution around the decoder mean."""

    kind: str  # "gaussian" or "bernoulli"
    sigma: float | None = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.sigma is None or not self.sigma > 0:
                raise ValueError("gaussian observation model needs sigma > 0")
        elif self.kind == "bernoulli":
            if self.sigma is not None:
                raise ValueError("bernoulli observation model takes no sigma")
        else:
            raise ValueError(f"unknown observation kind {self.kind!r}")


def log_prior(z) -> float:
    """Standard-normal log density."""
    z = np.asarray(z, dtype=np.float64)
    return -0.5 * z.size * LOG_2PI - 0.5 * float(z @ z)


def grad_log_prior(z):
    return -np.asarray(z, dtype=np.float64)


def _require_binary(x):
    if not np.all((x == 0.0) | (x == 1.0)):
        raise ValueError("bernoulli observation model requires binary data")


def log_obs(x, mean, obs: ObservationModel) -> float:
    """Log density of x under the observation model centered at mean."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if x.shape != mean.shape:
        raise ValueError(f"data shape {x.shape} != mean shape {mean.shape}")
    if obs.kind == "gaussian":
        r = x - mean
        return -0.5 * x.size * (LOG_2PI + 2.0 * np.log(obs.sigma)) - 0.5 * float(
            r @ r
        ) / (obs.sigma * obs.sigma)
    _require_binary(x)
    m = np.clip(mean, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
    return float(x @ np.log(m) + (1.0 - x) @ np.log1p(-m))


def grad_log_obs_mean(x, mean, obs: ObservationModel):
    """Gradient of log_obs with respect to the mean."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if obs.kind == "gaussian":
        return (x - mean) / (obs.sigma * obs.sigma)
    _require_binary(x)
    m = np.clip(mean, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
    return x / m - (1.0 - x) / (1.0 - m)


class GenerativeModel:
    """Standard-normal prior pushed through a decoder, with a noise model on top."""

    __slots__ = ("decoder", "obs", "latent_dim", "data_dim", "_inv_var", "_obs_const")

    def __init__(self, decoder: MlpNetwork, obs: ObservationModel):
        self.decoder = decoder
        self.obs = obs
        self.latent_dim = decoder.input_dim
        self.data_dim = decoder.output_dim
        if obs.kind == "gaussian":
            self._inv_var = 1.0 / (obs.sigma * obs.sigma)
            self._obs_const = -0.5 * self.data_dim * (
                LOG_2PI + 2.0 * np.log(obs.sigma)
            )
        else:
            self._inv_var = None
            self._obs_const = None

    def decode(self, z):
        return self.decoder.forward(z)

    def log_cond(self, x, z) -> float:
        """log p(x | z): observation log density at the decoded mean."""
        mean, _ = self.decoder.forward_trace(z)
        if self.obs.kind == "gaussian":
            r = x - mean
            return self._obs_const - 0.5 * self._inv_var * float(r @ r)
        m = np.clip(mean, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
        return float(x @ np.log(m) + (1.0 - x) @ np.log1p(-m))

    def log_joint(self, x, z) -> float:
        return log_prior(z) + self.log_cond(x, z)

    def grad_log_cond(self, x, z):
        """Gradient of log p(x | z) with respect to z, via decoder backprop."""
        mean, trace = self.decoder.forward_trace(z)
        if self.obs.kind == "gaussian":
            upstream = (x - mean) * self._inv_var
        else:
            m = np.clip(mean, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
            upstream = x / m - (1.0 - x) / (1.0 - m)
        return self.decoder.backprop(trace, upstream)

    def grad_log_joint(self, x, z):
        return self.grad_log_cond(x, z) - z

    def simulate(self, rng: np.random.Generator):
        """Draw an exact joint sample (z*, x*); z* is an exact posterior sample for x*."""
        z = rng.standard_normal(self.latent_dim)
        mean = self.decoder.forward(z)
        if self.obs.kind == "gaussian":
            x = mean + self.obs.sigma * rng.standard_normal(self.data_dim)
        else:
            x = (rng.random(self.data_dim) < mean).astype(np.float64)
        return z, x

    def with_sigma(self, sigma: float) -> "GenerativeModel":
        """Same decoder under a different Gaussian noise level."""
        return GenerativeModel(self.decoder, ObservationModel("gaussian", sigma))


class EncoderProposal:
    """Diagonal-Gaussian q(z|x) from an encoder emitting stacked mean and log-std."""

    __slots__ = ("encoder", "latent_dim")

    def __init__(self, encoder: MlpNetwork):
        if encoder.output_dim % 2 != 0:
            raise ValueError("encoder output dim must be 2 * latent_dim")
        self.encoder = encoder
        self.latent_dim = encoder.output_dim // 2

    def moments(self, x):
        """Mean and log-std of q(z|x)."""
        out = self.encoder.forward(x)
        return out[: self.latent_dim], out[self.latent_dim :]

    def log_q(self, x, z) -> float:
        mu, log_std = self.moments(x)
        return _diag_gaussian_logpdf(z, mu, log_std)

    def sample(self, x, rng: np.random.Generator):
        """Reparametrized draw mu + sigma * eps."""
        mu, log_std = self.moments(x)
        return mu + np.exp(log_std) * rng.standard_normal(self.latent_dim)


def _diag_gaussian_logpdf(z, mu, log_std) -> float:
    u = (z - mu) * np.exp(-log_std)
    return -float(np.sum(log_std)) - 0.5 * len(mu) * LOG_2PI - 0.5 * float(u @ u)


class AnnealingPath:
    """Geometric bridge from an exactly sampleable initial distribution to p(z, x).

    The annealed unnormalized log density is
        logf(z, beta) = log_init(z) + beta * (log p(z, x) - log_init(z)),
    which reduces to log p(z) + beta * log p(x|z) on the prior path. The second
    term is the per-state log ratio the AIS weight recursion telescopes over.
    """

    __slots__ = ("model", "x", "initial", "_mu", "_log_std", "_std", "_inv_var")

    def __init__(self, model: GenerativeModel, x, initial="prior"):
        self.model = model
        self.x = np.asarray(x, dtype=np.float64)
        if self.x.shape != (model.data_dim,):
            raise ValueError(f"data shape {self.x.shape} != ({model.data_dim},)")
        self.initial = initial
        if initial == "prior":
            self._mu = self._log_std = self._std = self._inv_var = None
        elif isinstance(initial, EncoderProposal):
            if initial.latent_dim != model.latent_dim:
                raise ValueError("encoder latent dim does not match model")
            # q(z|x) moments are fixed per path; cache them
            self._mu, self._log_std = initial.moments(self.x)
            self._std = np.exp(self._log_std)
            self._inv_var = np.exp(-2.0 * self._log_std)
        else:
            raise ValueError("initial must be 'prior' or an EncoderProposal")

    @property
    def from_prior(self) -> bool:
        return self.initial == "prior"

    def sample_initial(self, rng: np.random.Generator):
        if self.from_prior:
            return rng.standard_normal(self.model.latent_dim)
        return self._mu + self._std * rng.standard_normal(self.model.latent_dim)

    def log_initial(self, z) -> float:
        if self.from_prior:
            return log_prior(z)
        return _diag_gaussian_logpdf(z, self._mu, self._log_std)

    def log_terms(self, z):
        """(log_init(z), log ratio) with ratio = log p(z,x) - log_init(z)."""
        if self.from_prior:
            return log_prior(z), self.model.log_cond(self.x, z)
        lq = _diag_gaussian_logpdf(z, self._mu, self._log_std)
        return lq, log_prior(z) + self.model.log_cond(self.x, z) - lq

    def logf(self, z, beta) -> float:
        li, lr = self.log_terms(z)
        return li + beta * lr

    def grad_logf(self, z, beta):
        if self.from_prior:
            return beta * self.model.grad_log_cond(self.x, z) - z
        g_init = -(z - self._mu) * self._inv_var
        g_joint = self.model.grad_log_joint(self.x, z)
        return (1.0 - beta) * g_init + beta * g_joint


def _check_beta(beta):
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")


def annealed_logf(path: AnnealingPath, z, beta) -> float:
    """Unnormalized log density of the annealed intermediate distribution."""
    _check_beta(beta)
    return path.logf(np.asarray(z, dtype=np.float64), beta)


def annealed_grad(path: AnnealingPath, z, beta):
    """Latent gradient of annealed_logf."""
    _check_beta(beta)
    return path.grad_logf(np.asarray(z, dtype=np.float64), beta)
