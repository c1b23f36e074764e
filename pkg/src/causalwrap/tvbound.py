"""Exact total-variation computations for small binary Bayesian networks.

A network over ``d`` binary variables in a fixed order is stored as one
conditional table per variable: ``cpt[j]`` has shape ``(2,) * j`` and holds
``P(x_j = 1 | x_0..x_{j-1})``. Everything here is exact enumeration, meant
for checking the chain-rule bound ``TV(P, Q) <= sum_j eps_j``.
"""

from __future__ import annotations

import itertools

import numpy as np


def random_binary_bn(d: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.uniform(0.0, 1.0, size=(2,) * j) for j in range(d)]


def joint(cpt: list[np.ndarray]) -> np.ndarray:
    """Full joint table of shape ``(2,) * d``."""
    d = len(cpt)
    out = np.empty((2,) * d)
    for x in itertools.product((0, 1), repeat=d):
        p = 1.0
        for j in range(d):
            q = cpt[j][x[:j]]
            p *= q if x[j] else 1.0 - q
        out[x] = p
    return out


def tv(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def conditional_tv_terms(p_cpt: list[np.ndarray], q_cpt: list[np.ndarray]) -> np.ndarray:
    """``eps_j = E_{x_<j ~ P}[TV(P_j(.|x_<j), Q_j(.|x_<j))]`` for every ``j``.

    For a binary variable the conditional TV is ``|p - q|``.
    """
    pj = joint(p_cpt)
    d = len(p_cpt)
    eps = np.zeros(d)
    for j in range(d):
        marg = pj.sum(axis=tuple(range(j, d))) if j < d else pj
        eps[j] = float(np.sum(marg * np.abs(p_cpt[j] - q_cpt[j])))
    return eps


def chain_bound_check(p_cpt: list[np.ndarray], q_cpt: list[np.ndarray]) -> tuple[float, float]:
    """Returns ``(TV(P, Q), sum_j eps_j)``."""
    return tv(joint(p_cpt), joint(q_cpt)), float(conditional_tv_terms(p_cpt, q_cpt).sum())
