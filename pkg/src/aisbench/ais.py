"""Annealed importance sampling engine with bidirectional validation.

Forward AIS from the initial distribution gives stochastic lower bounds on
log p(x); reverse AIS started at an exact posterior sample gives stochastic
upper bounds. Their difference on simulated data bounds the estimation error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import streams
from .hmc import HmcParams, HmcStats, adapt_step_size, hmc_step
from .models import AnnealingPath, GenerativeModel


class EstimationError(RuntimeError):
    """No usable chain weights (every chain diverged)."""


@dataclass(frozen=True)
class Schedule:
    """Annealing inverse temperatures: beta[0]=0, beta[-1]=1, nondecreasing."""

    betas: np.ndarray
    kind: str

    def __post_init__(self):
        b = self.betas
        if len(b) < 2:
            raise ValueError("schedule needs at least 2 temperatures")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("schedule endpoints must be exactly 0 and 1")
        if np.any(np.diff(b) < 0):
            raise ValueError("schedule must be nondecreasing")
        b.flags.writeable = False

    def __len__(self):
        return len(self.betas)


def make_schedule(n_dist: int, kind: str = "linear") -> Schedule:
    """Build an annealing schedule with n_dist distributions.

    linear spaces beta evenly; sigmoid follows a logistic curve on [-4, 4]
    affine-rescaled to exact endpoints, packing temperatures near 0 and 1.
    """
    if n_dist < 2:
        raise ValueError(f"need at least 2 distributions, got {n_dist}")
    if kind == "linear":
        betas = np.linspace(0.0, 1.0, n_dist)
    elif kind == "sigmoid":
        s = expit(np.linspace(-4.0, 4.0, n_dist))
        betas = (s - s[0]) / (s[-1] - s[0])
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return Schedule(betas, kind)


@dataclass(frozen=True)
class AisConfig:
    schedule: Schedule
    n_chains: int = 16
    hmc: HmcParams = field(default_factory=HmcParams)
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")


@dataclass
class ChainRun:
    """Result of a single AIS chain."""

    log_weight: float
    final_z: np.ndarray
    stats: HmcStats
    final_step_size: float
    diverged: bool


def _run_chain(task) -> ChainRun:
    """Execute one AIS chain; the unit of work for the parallel map.

    The weight update is applied at the current state before the transition,
    exactly in the order of the AIS recursion; the transition then targets the
    new intermediate distribution with a per-chain adapted step size.
    """
    path, z_start, betas, hp, seed, example, chain, direction = task
    rng = streams.stream(seed, example, chain, direction)
    if direction == streams.FORWARD:
        z = path.sample_initial(rng)
        seq = betas
    else:
        z = np.asarray(z_start, dtype=np.float64)
        seq = betas[::-1]
    log_init, log_ratio = path.log_terms(z)
    log_w = 0.0
    eps = hp.step_size
    stats = HmcStats()
    for t in range(1, len(seq)):
        log_w += (seq[t] - seq[t - 1]) * log_ratio
        beta = seq[t]
        cell = []

        def _logf(zz, _c=cell, _b=beta, _p=path):
            terms = _p.log_terms(zz)
            _c.append(terms)
            return terms[0] + _b * terms[1]

        def _grad(zz, _b=beta, _p=path):
            return _p.grad_logf(zz, _b)

        out = hmc_step(
            z, _logf, _grad, eps, hp.n_leapfrog, rng,
            logf_z=log_init + beta * log_ratio, stats=stats,
        )
        if out.accepted:
            z = out.z
            log_init, log_ratio = cell[-1]
        eps = adapt_step_size(eps, out.accepted, hp)
    log_w = float(log_w)
    return ChainRun(log_w, z, stats, eps, not np.isfinite(log_w))


def forward_ais(x, path: AnnealingPath, cfg: AisConfig, example_index=0, map_fn=None):
    """Run cfg.n_chains independent forward AIS chains for one observation.

    Each chain's exp(log_weight) is an unbiased estimate of p(x); chain k
    draws from the stream (seed, example_index, k, forward).
    """
    tasks = [
        (path, None, cfg.schedule.betas, cfg.hmc, cfg.seed, example_index, k,
         streams.FORWARD)
        for k in range(cfg.n_chains)
    ]
    return list((map_fn or map)(_run_chain, tasks))


def reverse_ais(x, z_exact, path: AnnealingPath, cfg: AisConfig, example_index=0,
                map_fn=None):
    """Run AIS backwards from an exact posterior sample z_exact for x.

    Each chain's exp(log_weight) is an unbiased estimate of 1/p(x). Only valid
    on the prior-initial path, and only when (z_exact, x) is an exact joint
    draw from the model.
    """
    if not path.from_prior:
        raise ValueError("reverse AIS requires the prior-initial path")
    tasks = [
        (path, z_exact, cfg.schedule.betas, cfg.hmc, cfg.seed, example_index, k,
         streams.REVERSE)
        for k in range(cfg.n_chains)
    ]
    return list((map_fn or map)(_run_chain, tasks))


def combine_chains(log_weights, direction="lower"):
    """Combine per-chain log weights into (estimate, stderr) in nats.

    lower: logmeanexp of forward weights, a stochastic lower bound on log p(x).
    upper: -logmeanexp of reverse weights, a stochastic upper bound.
    The stderr comes from the delta method on the weight population and is a
    per-example heuristic; cross-example stderr is the headline number.
    """
    if direction not in ("lower", "upper"):
        raise ValueError(f"direction must be 'lower' or 'upper', got {direction!r}")
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.size == 0 or np.any(np.isnan(lw)):
        raise EstimationError("invalid chain weights")
    if not np.any(lw > -np.inf):
        raise EstimationError("all chains produced zero weight")
    n = lw.size
    m = float(logsumexp(lw) - np.log(n))
    if n > 1:
        rel = np.exp(lw - m)  # relative weights, mean exactly 1
        stderr = float(np.std(rel, ddof=1) / np.sqrt(n))
    else:
        stderr = float("nan")
    if direction == "upper":
        return -m, stderr
    return m, stderr


@dataclass
class BdmcExample:
    lower: float
    upper: float
    gap: float
    forward_chains: list
    reverse_chains: list


@dataclass
class BdmcReport:
    """Mean forward lower bound, reverse upper bound, and their gap in nats."""

    forward_lower: float
    reverse_upper: float
    gap: float
    examples: list

    @property
    def gaps(self):
        return np.array([e.gap for e in self.examples])


def bdmc(model: GenerativeModel, cfg: AisConfig, n_examples: int, map_fn=None
         ) -> BdmcReport:
    """Estimate the AIS error bound on data simulated from the model itself.

    Example i is drawn from the stream (seed, i, 0, simulate), then forward
    AIS runs on x* and reverse AIS starts from the generating z*. Negative
    per-example gaps are Monte Carlo noise and are reported, not clipped.
    """
    if n_examples < 1:
        raise ValueError("n_examples must be >= 1")
    tasks = []
    for i in range(n_examples):
        rng = streams.stream(cfg.seed, i, 0, streams.SIMULATE)
        z_star, x_star = model.simulate(rng)
        path = AnnealingPath(model, x_star, "prior")
        for k in range(cfg.n_chains):
            tasks.append((path, None, cfg.schedule.betas, cfg.hmc, cfg.seed, i, k,
                          streams.FORWARD))
            tasks.append((path, z_star, cfg.schedule.betas, cfg.hmc, cfg.seed, i, k,
                          streams.REVERSE))
    runs = list((map_fn or map)(_run_chain, tasks))
    examples = []
    per_example = 2 * cfg.n_chains
    for i in range(n_examples):
        block = runs[i * per_example : (i + 1) * per_example]
        fwd = block[0::2]
        rev = block[1::2]
        lower, _ = combine_chains([c.log_weight for c in fwd], "lower")
        upper, _ = combine_chains([c.log_weight for c in rev], "upper")
        examples.append(BdmcExample(lower, upper, upper - lower, fwd, rev))
    lowers = np.array([e.lower for e in examples])
    uppers = np.array([e.upper for e in examples])
    return BdmcReport(
        float(lowers.mean()), float(uppers.mean()), float((uppers - lowers).mean()),
        examples,
    )


@dataclass
class PosteriorDecode:
    """Approximate posterior draw extracted from forward AIS final states."""

    chosen_index: int
    z: np.ndarray
    mean: np.ndarray
    all_z: list
    all_means: list
    log_weights: np.ndarray


def posterior_decode(x, path: AnnealingPath, cfg: AisConfig, example_index=0,
                     map_fn=None) -> PosteriorDecode:
    """Resample one chain's final latent state by weight and decode it.

    Selection is proportional to exp(log_weight - max); equal weights resample
    uniformly. All final states and their decoded means are returned so the
    caller can export a grid.
    """
    runs = forward_ais(x, path, cfg, example_index=example_index, map_fn=map_fn)
    lw = np.array([r.log_weight for r in runs])
    if not np.any(lw > -np.inf):
        raise EstimationError("all chains produced zero weight")
    probs = np.exp(lw - lw.max())
    probs /= probs.sum()
    rng = streams.stream(cfg.seed, example_index, 0, streams.SELECT)
    idx = int(rng.choice(len(runs), p=probs))
    all_z = [r.final_z for r in runs]
    all_means = [path.model.decode(z) for z in all_z]
    return PosteriorDecode(idx, all_z[idx], all_means[idx], all_z, all_means, lw)
