"""Deterministic derivation of sub-stream seeds from a master seed.

Every stochastic component (simulated dataset, optimizer restart, MCMC
chain, experiment replicate) gets its own 64-bit seed derived by folding
index words into the master seed with the splitmix64 permutation, so runs
are reproducible and independent of execution order.
"""

from __future__ import annotations

__all__ = ["splitmix64", "mix_seed"]

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One step of the splitmix64 output permutation (Steele et al. 2014)."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def mix_seed(master: int, *indices: int) -> int:
    """Fold integer indices into ``master``, one splitmix64 round each."""
    state = master & _MASK
    for idx in indices:
        state = splitmix64((state ^ (idx & _MASK)) & _MASK)
    return state
