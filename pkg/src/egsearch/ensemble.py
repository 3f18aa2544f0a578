"""Ensemble Gumbel-Softmax: binary codes as maxima of M one-hot samples.

A code over K categories is drawn by taking M independent Gumbel-Softmax
samples from the same probability vector and combining them with an
element-wise maximum, both on the hard one-hots (giving a binary code with
1..min(M, K) ones) and on the soft relaxations (keeping the whole thing
differentiable).  Exact oracles for the marginal inclusion probability and
the reachable code set live here too, next to the sampler they audit.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from . import autodiff as ad
from .gumbel import GumbelSoftmaxSample, RngState, check_simplex, gumbel_softmax

__all__ = [
    "BinaryCodeSample",
    "egs_sample",
    "marginal_inclusion_oracle",
    "reachable_codes",
    "recode_superposition",
]

ENUMERATION_MAX_K = 16
# brute-force product enumeration is used up to this many compositions
_PRODUCT_BUDGET = 2_000_000


@dataclass
class BinaryCodeSample:
    """One sampled binary code with its differentiable relaxation.

    hard is the element-wise max of the component one-hots (exposed with
    straight-through behavior); soft is the element-wise max of the
    component soft vectors, ties routed to the lowest component index.
    """

    hard: ad.Tensor
    soft: ad.Tensor
    components: list[GumbelSoftmaxSample]
    M: int


def egs_sample(p, M: int, tau: float, rng: RngState) -> BinaryCodeSample:
    """Draw a binary code: max of M independent Gumbel-Softmax samples."""
    M = int(M)
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    components = [gumbel_softmax(p, tau, rng) for _ in range(M)]
    soft = components[0].soft
    hard_vals = components[0].hard.data
    for c in components[1:]:
        soft = ad.maximum(soft, c.soft)
        hard_vals = np.maximum(hard_vals, c.hard.data)
    hard = ad.straight_through(soft, hard_vals)
    return BinaryCodeSample(hard=hard, soft=soft, components=components, M=M)


def marginal_inclusion_oracle(p, M: int, k: int) -> float:
    """Exact P(bit k set) = 1 - (1 - p_k)^M under independent draws."""
    p = check_simplex(np.asarray(p, dtype=np.float64))
    return float(1.0 - (1.0 - p[int(k)]) ** int(M))


def reachable_codes(K: int, M: int) -> set:
    """Every binary code expressible as a max of M one-hot K-vectors.

    Enumerates the M-fold compositions directly while K^min(M,K) stays
    small; beyond that the same set is built as all codes with 1 to
    min(M, K) ones, which the compositions provably cover (repeat one
    category to pad, pick distinct categories to spread).
    """
    K, M = int(K), int(M)
    if M < 1 or K < 1:
        raise ValueError(f"need K >= 1 and M >= 1, got K={K}, M={M}")
    if K > ENUMERATION_MAX_K:
        raise ValueError(f"K={K} exceeds the enumeration bound {ENUMERATION_MAX_K}")
    m_eff = min(M, K)  # extra samples only repeat already-set bits
    codes = set()
    if K**m_eff <= _PRODUCT_BUDGET:
        for picks in product(range(K), repeat=m_eff):
            code = [0] * K
            for k in picks:
                code[k] = 1
            codes.add(tuple(code))
    else:
        for r in range(1, m_eff + 1):
            for positions in combinations(range(K), r):
                code = [0] * K
                for k in positions:
                    code[k] = 1
                codes.add(tuple(code))
    return codes


def recode_superposition(edge_code) -> list:
    """Split a binary code into one one-hot vector per set bit."""
    code = np.asarray(edge_code)
    if code.ndim != 1 or not np.all(np.isin(code, (0, 1))):
        raise ValueError(f"edge_code must be a 0/1 vector, got {code!r}")
    set_bits = np.flatnonzero(code)
    if set_bits.size == 0:
        raise ValueError("edge_code has no set bits")
    onehots = []
    for k in set_bits:
        v = np.zeros(code.size, dtype=np.float64)
        v[k] = 1.0
        onehots.append(v)
    return onehots
