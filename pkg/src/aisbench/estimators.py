"""Baseline log-likelihood estimators: KDE, ELBO, IWAE bound, per-example sigma tuning.

KDE here is likelihood weighting of the fixed-sigma observation model with
prior samples, which is exactly forward AIS with zero intermediate
distributions; with shared streams the two produce bit-identical weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import streams
from .ais import AisConfig, combine_chains, forward_ais
from .models import AnnealingPath, EncoderProposal, GenerativeModel, log_prior

IWAE_BATCH = 10_000


@dataclass(frozen=True)
class KdeConfig:
    n_samples: int = 100_000
    share_samples: bool = False  # reuse one prior bank across the example set

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class SigmaGrid:
    """Strictly increasing positive noise levels to scan."""

    values: tuple

    def __post_init__(self):
        v = tuple(float(s) for s in self.values)
        if not v:
            raise ValueError("sigma grid must be nonempty")
        if any(s <= 0 for s in v):
            raise ValueError("sigma values must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sigma grid must be strictly increasing")
        object.__setattr__(self, "values", v)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


def prior_bank(model: GenerativeModel, n_samples: int, seed: int):
    """Shared bank of prior draws, one stream per sample."""
    return [
        streams.stream(seed, 0, k, streams.SAMPLE_BANK)
        .standard_normal(model.latent_dim)
        for k in range(n_samples)
    ]


def kde_log_weights(x, model: GenerativeModel, n_samples: int, seed: int,
                    example_index=0, bank=None):
    """Per-sample log p(x|z_k) for prior draws z_k; the SIS importance weights.

    Without a bank, sample k draws from the stream (seed, example_index, k,
    forward), the same stream a forward AIS chain k would start from.
    """
    x = np.asarray(x, dtype=np.float64)
    lw = np.empty(n_samples)
    if bank is not None:
        if len(bank) < n_samples:
            raise ValueError("sample bank smaller than n_samples")
        for k in range(n_samples):
            lw[k] = model.log_cond(x, bank[k])
    else:
        d = model.latent_dim
        for k in range(n_samples):
            z = streams.stream(seed, example_index, k, streams.FORWARD).standard_normal(d)
            lw[k] = model.log_cond(x, z)
    return lw


def kde_estimate(x, model: GenerativeModel, cfg: KdeConfig, seed: int,
                 example_index=0, bank=None) -> float:
    """Stochastic lower bound on log p_sigma(x) by likelihood weighting."""
    lw = kde_log_weights(x, model, cfg.n_samples, seed, example_index, bank=bank)
    return float(logsumexp(lw) - np.log(cfg.n_samples))


def elbo(x, model: GenerativeModel, q: EncoderProposal, n_samples: int, seed: int,
         example_index=0) -> float:
    """Monte Carlo ELBO: E_q[log p(x|z)] - KL(q || prior), KL in closed form."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    mu, log_std = q.moments(x)
    var = np.exp(2.0 * log_std)
    kl = 0.5 * float(np.sum(mu * mu + var - 1.0 - 2.0 * log_std))
    rng = streams.stream(seed, example_index, 0, streams.PROPOSAL_ELBO)
    std = np.exp(log_std)
    recon = 0.0
    for _ in range(n_samples):
        z = mu + std * rng.standard_normal(q.latent_dim)
        recon += model.log_cond(x, z)
    return recon / n_samples - kl


def iwae_bound(x, model: GenerativeModel, q: EncoderProposal, n_samples: int,
               seed: int, example_index=0) -> float:
    """logmeanexp of n_samples importance weights with the encoder as proposal.

    A stochastic lower bound on log p(x), nondecreasing in n_samples in
    expectation. Weights are streamed through a running logsumexp so memory
    stays flat at large sample counts.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    mu, log_std = q.moments(x)
    std = np.exp(log_std)
    log_q_const = -float(np.sum(log_std)) - 0.5 * q.latent_dim * np.log(2.0 * np.pi)
    rng = streams.stream(seed, example_index, 0, streams.PROPOSAL_IWAE)
    running_max = -np.inf
    running_sum = 0.0
    done = 0
    while done < n_samples:
        batch = min(IWAE_BATCH, n_samples - done)
        lw = np.empty(batch)
        for j in range(batch):
            eps = rng.standard_normal(q.latent_dim)
            z = mu + std * eps
            log_q = log_q_const - 0.5 * float(eps @ eps)
            lw[j] = log_prior(z) + model.log_cond(x, z) - log_q
        bmax = float(lw.max())
        if bmax > running_max:
            running_sum *= np.exp(running_max - bmax)
            running_max = bmax
        running_sum += float(np.sum(np.exp(lw - running_max)))
        done += batch
    return running_max + float(np.log(running_sum)) - float(np.log(n_samples))


def _ais_value(x, model, ais_cfg: AisConfig, example_index, map_fn):
    path = AnnealingPath(model, x, "prior")
    runs = forward_ais(x, path, ais_cfg, example_index=example_index, map_fn=map_fn)
    est, _ = combine_chains([r.log_weight for r in runs], "lower")
    return est


@dataclass
class OptimalSigmaRow:
    example_index: int
    best_sigma: float
    best_nats: float
    fixed_nats: float

    @property
    def improvement(self) -> float:
        return self.best_nats - self.fixed_nats


@dataclass
class OptimalSigmaReport:
    rows: list
    fixed_sigma: float
    estimator: str

    @property
    def mean_best(self) -> float:
        return float(np.mean([r.best_nats for r in self.rows]))

    @property
    def mean_fixed(self) -> float:
        return float(np.mean([r.fixed_nats for r in self.rows]))

    @property
    def mean_improvement(self) -> float:
        return self.mean_best - self.mean_fixed


def optimal_sigma_eval(x_set, model: GenerativeModel, grid: SigmaGrid,
                       estimator: str, fixed_sigma: float, ais_cfg: AisConfig = None,
                       kde_cfg: KdeConfig = None, seed: int = 0, map_fn=None
                       ) -> OptimalSigmaReport:
    """Tune sigma per example over the grid and report gains over a fixed sigma.

    Every example is scored at every grid value with common random streams;
    whenever the fixed sigma is a grid member its score is reused, so the
    improvement is nonnegative by construction.
    """
    if model.obs.kind != "gaussian":
        raise ValueError("sigma tuning requires a gaussian observation model")
    values = {}
    for sigma in grid:
        values[sigma] = _sigma_scores(x_set, model, sigma, estimator, ais_cfg,
                                      kde_cfg, seed, map_fn)
    if fixed_sigma in values:
        fixed_scores = values[fixed_sigma]
    else:
        fixed_scores = _sigma_scores(x_set, model, fixed_sigma, estimator, ais_cfg,
                                     kde_cfg, seed, map_fn)
    rows = []
    for i in range(len(x_set)):
        per_sigma = [(values[s][i], s) for s in grid]
        best_nats, best_sigma = max(per_sigma)
        rows.append(OptimalSigmaRow(i, best_sigma, best_nats, fixed_scores[i]))
    return OptimalSigmaReport(rows, fixed_sigma, estimator)


def _sigma_scores(x_set, model, sigma, estimator, ais_cfg, kde_cfg, seed, map_fn):
    m = model.with_sigma(sigma)
    scores = []
    for i, x in enumerate(x_set):
        if estimator == "ais":
            if ais_cfg is None:
                raise ValueError("ais estimator needs ais_cfg")
            scores.append(_ais_value(x, m, ais_cfg, i, map_fn))
        elif estimator == "kde":
            if kde_cfg is None:
                raise ValueError("kde estimator needs kde_cfg")
            scores.append(kde_estimate(x, m, kde_cfg, seed, example_index=i))
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
    return scores


@dataclass
class SweepPoint:
    sigma: float
    ais_mean: float
    ais_stderr: float
    kde_mean: float
    kde_stderr: float


def sigma_sweep(x_set, model: GenerativeModel, grid: SigmaGrid, ais_cfg: AisConfig,
                kde_cfg: KdeConfig, seed: int = 0, map_fn=None):
    """AIS and KDE mean estimates over the example set at each grid sigma."""
    if model.obs.kind != "gaussian":
        raise ValueError("sigma sweep requires a gaussian observation model")
    points = []
    n = len(x_set)
    for sigma in grid:
        ais_vals = np.array(_sigma_scores(x_set, model, sigma, "ais", ais_cfg, None,
                                          seed, map_fn))
        kde_vals = np.array(_sigma_scores(x_set, model, sigma, "kde", None, kde_cfg,
                                          seed, map_fn))
        points.append(SweepPoint(
            sigma,
            float(ais_vals.mean()), float(ais_vals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
            float(kde_vals.mean()), float(kde_vals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
        ))
    return points
