"""Gumbel noise, Gumbel-Max decisions, and the Gumbel-Softmax relaxation.

All randomness flows through RngState, a (seed, position) counter over the
PCG64 stream, so any draw can be replayed exactly from its coordinates.
Temperature scheduling is the caller's business; everything here takes tau
as an argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "UNIFORM_EPS",
    "RngState",
    "GumbelSoftmaxSample",
    "gumbel_noise",
    "gumbel_max",
    "gumbel_softmax",
    "check_simplex",
]

# uniform draws are clamped into [eps, 1-eps] before the double log
UNIFORM_EPS = 1e-12

SIMPLEX_TOL = 1e-9


@dataclass
class RngState:
    """Counter-based random stream: (seed, position) pins every draw.

    `position` counts consumed float64 draws; PCG64 emits one 64-bit word
    per double, so advance(position) lands exactly where the stream left
    off.  Copying the state replays the sequence.
    """

    seed: int
    position: int = 0

    def uniform(self, count: int) -> np.ndarray:
        bitgen = np.random.PCG64(self.seed)
        bitgen.advance(self.position)
        out = np.random.Generator(bitgen).random(int(count))
        self.position += int(count)
        return out

    def clone(self) -> "RngState":
        return RngState(self.seed, self.position)


@dataclass
class GumbelSoftmaxSample:
    """One relaxed categorical draw.

    soft is the temperature-tau softmax of the noisy log-probabilities,
    kept on the tape; hard is the one-hot at its argmax, exposed with
    straight-through behavior (forward hard, backward identity on soft).
    """

    soft: ad.Tensor
    hard: ad.Tensor
    temperature: float


def check_simplex(p: np.ndarray, what: str = "p") -> np.ndarray:
    """Validate a probability vector within tolerance; returns it as float64."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{what} must be a nonempty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{what} has non-finite entries")
    if np.any(p < -SIMPLEX_TOL):
        raise ValueError(f"{what} has negative entries: min {p.min():.3e}")
    if abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{what} does not sum to 1: sum {p.sum()!r}")
    return p


def gumbel_noise(rng: RngState, count: int) -> np.ndarray:
    """`count` standard Gumbel draws, -log(-log(U)) with U clamped off {0,1}."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    u = np.clip(rng.uniform(count), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return -np.log(-np.log(u))


def _log_probs(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def gumbel_max(p, rng: RngState) -> int:
    """Sample a category index with P(k) proportional to p_k.

    Zero entries get log p = -inf and are never selected; an all-zero p is
    rejected.
    """
    p = np.asarray(p.data if isinstance(p, ad.Tensor) else p, dtype=np.float64)
    if not np.any(p > 0.0):
        raise ValueError("gumbel_max: all-zero probability vector")
    check_simplex(p)
    scores = _log_probs(p) + gumbel_noise(rng, p.size)
    return int(np.argmax(scores))


def gumbel_softmax(p, tau: float, rng: RngState) -> GumbelSoftmaxSample:
    """Temperature-tau relaxation of gumbel_max, differentiable in p.

    soft_k = exp((log p_k + G_k)/tau) / sum_j exp((log p_j + G_j)/tau); the
    hard one-hot sits at the argmax of the raw noisy scores, which the
    softmax never reorders.
    """
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    p_t = ad.as_tensor(p)
    check_simplex(p_t.data)
    if not np.any(p_t.data > 0.0):
        raise ValueError("gumbel_softmax: all-zero probability vector")
    noise = gumbel_noise(rng, p_t.data.size)
    scores = ad.add(ad.log(p_t), ad.Tensor(noise))
    soft = ad.softmax(ad.scale(scores, 1.0 / tau))
    hard_vals = np.zeros(p_t.data.size, dtype=np.float64)
    hard_vals[int(np.argmax(scores.data))] = 1.0
    hard = ad.straight_through(soft, hard_vals)
    return GumbelSoftmaxSample(soft=soft, hard=hard, temperature=tau)
