"""Hamiltonian Monte Carlo transitions with acceptance-targeted step-size adaptation.

The functions here are stateless; the caller owns the per-chain step size and
statistics, so concurrent chains never share adaptation state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STEP_SIZE_MIN = 1e-8
STEP_SIZE_MAX = 1e2


@dataclass(frozen=True)
class HmcParams:
    """Transition settings: identity mass matrix, one trajectory per step."""

    step_size: float = 0.1  # initial epsilon before adaptation
    n_leapfrog: int = 10
    target_accept: float = 0.65
    adapt_factor: float = 1.02

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if self.adapt_factor <= 1.0:
            raise ValueError("adapt_factor must exceed 1")


@dataclass
class HmcStats:
    proposals: int = 0
    accepts: int = 0
    divergences: int = 0
    abs_dh_sum: float = 0.0

    @property
    def accept_rate(self) -> float:
        return self.accepts / self.proposals if self.proposals else 0.0

    @property
    def mean_abs_dh(self) -> float:
        return self.abs_dh_sum / self.proposals if self.proposals else 0.0

    def merge(self, other: "HmcStats") -> None:
        self.proposals += other.proposals
        self.accepts += other.accepts
        self.divergences += other.divergences
        self.abs_dh_sum += other.abs_dh_sum


@dataclass
class HmcOutcome:
    z: np.ndarray
    accepted: bool
    delta_h: float
    diverged: bool
    logf: float  # log target at the returned state


def leapfrog(z, r, eps, n_steps, grad_logf):
    """Leapfrog integration of Hamiltonian dynamics for -logf potential.

    Half momentum kick, alternating full position/momentum steps, half kick.
    Deterministic, time-reversible: integrating the result with negated
    momentum recovers the start. Returns (z', r', ok); ok is False when the
    trajectory left the finite domain (caller treats as rejection).
    """
    z = np.array(z, dtype=np.float64)
    r = np.array(r, dtype=np.float64)
    r += 0.5 * eps * grad_logf(z)
    for i in range(n_steps):
        z += eps * r
        if i < n_steps - 1:
            r += eps * grad_logf(z)
    r += 0.5 * eps * grad_logf(z)
    ok = bool(np.all(np.isfinite(z)) and np.all(np.isfinite(r)))
    return z, r, ok


def hmc_step(z, logf, grad_logf, eps, n_leapfrog, rng, logf_z=None, stats=None):
    """One Metropolis-corrected HMC transition targeting exp(logf).

    logf_z may pass a precomputed log target at z to spare one evaluation.
    Divergent trajectories (non-finite state or energy) are rejections, never
    errors. On rejection the returned state is the input object, unchanged.
    """
    if logf_z is None:
        logf_z = logf(z)
    r = rng.standard_normal(len(z))
    h0 = -logf_z + 0.5 * float(r @ r)
    z_new, r_new, ok = leapfrog(z, r, eps, n_leapfrog, grad_logf)
    if ok:
        logf_new = logf(z_new)
        h1 = -logf_new + 0.5 * float(r_new @ r_new)
        delta_h = h1 - h0
        ok = bool(np.isfinite(delta_h))
    if not ok:
        if stats is not None:
            stats.proposals += 1
            stats.divergences += 1
        return HmcOutcome(z, False, np.inf, True, logf_z)
    accepted = delta_h <= 0.0 or np.log(rng.random()) < -delta_h
    if stats is not None:
        stats.proposals += 1
        stats.accepts += int(accepted)
        stats.abs_dh_sum += abs(delta_h)
    if accepted:
        return HmcOutcome(z_new, True, delta_h, False, logf_new)
    return HmcOutcome(z, False, delta_h, False, logf_z)


def adapt_step_size(eps, accepted, params: HmcParams) -> float:
    """Per-transition multiplicative update with fixed point at the target rate.

    Accept multiplies by f^(1-target), reject by f^(-target); the expected
    log-step drift is zero exactly when the acceptance rate equals the target.
    """
    f = params.adapt_factor
    if accepted:
        eps = eps * f ** (1.0 - params.target_accept)
    else:
        eps = eps * f ** (-params.target_accept)
    return min(max(eps, STEP_SIZE_MIN), STEP_SIZE_MAX)
