"""Differentiable loss terms on corrected batches.

* CI penalty: weighted HSIC between residuals of each forbidden pair, where a
  residual is the column minus a frozen edge model of its trusted parents.
* Monotone penalty: hinge on the output change of a twin batch whose cause
  column is shifted by ``delta``.
* Utility surrogate: mean + covariance matching against a real minibatch,
  plus an identity regulariser.

Every term returns its value together with exact gradients with respect to
the batch(es) it consumes; chaining into the map parameters is left to
:mod:`causalwrap.diffcore`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._fit import fit_linear, fit_logistic, sigmoid
from .data import Table
from .diffcore import CorrectionMap, backward, forward
from .knowledge import CausalKnowledge, Edge

BANDWIDTH_FLOOR = 1e-6
MEDIAN_MAX_POINTS = 1000


# --- edge models --------------------------------------------------------------

@dataclass(frozen=True)
class EdgeModel:
    target: int
    parents: tuple[int, ...]
    logistic: bool
    intercept: float
    coef: np.ndarray

    def predict(self, batch: np.ndarray) -> np.ndarray:
        z = self.intercept + batch[:, list(self.parents)] @ self.coef
        return sigmoid(z) if self.logistic else z

    def to_dict(self) -> dict:
        return {"target": self.target, "parents": list(self.parents), "logistic": self.logistic,
                "intercept": self.intercept, "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EdgeModel":
        return cls(d["target"], tuple(d["parents"]), d["logistic"], d["intercept"],
                   np.asarray(d["coef"], dtype=float))


def fit_edge_models(real: Table, k: CausalKnowledge) -> list[EdgeModel]:
    """One frozen model per column with trusted parents, fitted on real data.

    Continuous targets get ridge-stabilised least squares, binary targets a
    Newton logistic regression.
    """
    models = []
    binary = real.binary_mask
    for j, pa in k.trusted_parents(real.d).items():
        if not pa:
            continue
        x, y = real.rows[:, pa], real.rows[:, j]
        if binary[j]:
            b, c, _ = fit_logistic(x, y)
            models.append(EdgeModel(j, tuple(pa), True, b, c))
        else:
            b, c = fit_linear(x, y)
            models.append(EdgeModel(j, tuple(pa), False, b, c))
    return models


def residualize(batch: np.ndarray, models: Sequence[EdgeModel]) -> np.ndarray:
    res = np.array(batch, dtype=float, copy=True)
    for m in models:
        res[:, m.target] = batch[:, m.target] - m.predict(batch)
    return res


def residualize_vjp(batch: np.ndarray, models: Sequence[EdgeModel], grad_res: np.ndarray) -> np.ndarray:
    """Pull a gradient on the residuals back to the batch (models held fixed)."""
    g = np.array(grad_res, dtype=float, copy=True)
    for m in models:
        gj = grad_res[:, m.target]
        if not np.any(gj):
            continue
        if m.logistic:
            p = m.predict(batch)
            gj = gj * p * (1.0 - p)
        g[:, list(m.parents)] -= gj[:, None] * m.coef[None, :]
    return g


def clamp_binary(batch: np.ndarray, binary: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
    """Clamp binary columns to [0, 1]; returns the batch and a pass-through mask."""
    if binary is None or not np.any(binary):
        return batch, None
    out = batch.copy()
    cols = np.flatnonzero(binary)
    out[:, cols] = np.clip(batch[:, cols], 0.0, 1.0)
    mask = np.ones_like(batch)
    mask[:, cols] = ((batch[:, cols] >= 0.0) & (batch[:, cols] <= 1.0)).astype(float)
    return out, mask


# --- HSIC -----------------------------------------------------------------------

def median_heuristic(x: np.ndarray, max_points: int = MEDIAN_MAX_POINTS) -> float:
    """Median pairwise squared distance over the first ``max_points`` rows,
    floored at ``1e-6``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    x = x[:max_points]
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    iu = np.triu_indices(x.shape[0], k=1)
    return max(float(np.median(d2[iu])), BANDWIDTH_FLOOR)


def rbf_gram(x: np.ndarray, sigma2: float) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    return np.exp(-diff * diff / (2.0 * sigma2))


def _center(k: np.ndarray) -> np.ndarray:
    return k - k.mean(axis=0, keepdims=True) - k.mean(axis=1, keepdims=True) + k.mean()


def _hsic_grad(x: np.ndarray, k: np.ndarray, other_centered: np.ndarray, sigma2: float) -> np.ndarray:
    m = x.shape[0]
    g = other_centered * k
    return -(2.0 / (m * m * sigma2)) * (x * g.sum(axis=1) - g @ x)


def hsic(x: np.ndarray, y: np.ndarray, sigma2_x: float | None = None,
         sigma2_y: float | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """Biased HSIC ``trace(K H L H) / m**2`` with Gaussian kernels.

    Bandwidths default to the median heuristic; the returned gradients treat
    them as constants.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    m = x.shape[0]
    if m < 4 or y.shape[0] != m:
        raise ValueError("hsic needs two equal-length vectors with m >= 4")
    sx = median_heuristic(x) if sigma2_x is None else sigma2_x
    sy = median_heuristic(y) if sigma2_y is None else sigma2_y
    kx, ky = rbf_gram(x, sx), rbf_gram(y, sy)
    kxc, kyc = _center(kx), _center(ky)
    value = float(np.sum(kxc * ky)) / (m * m)
    return value, _hsic_grad(x, kx, kyc, sx), _hsic_grad(y, ky, kxc, sy)


@dataclass
class KernelConfig:
    """Per-column RBF bandwidths (``sigma**2``), frozen between refreshes."""

    sigma2: np.ndarray

    @classmethod
    def from_residuals(cls, res: np.ndarray) -> "KernelConfig":
        return cls(np.array([median_heuristic(res[:, j]) for j in range(res.shape[1])]))


# --- component penalties ------------------------------------------------------------

@dataclass
class CiPenalty:
    """Values of the selected forbidden-pair terms plus what is needed for their
    gradient. Centered Gram matrices are never formed: with row sums
    ``r = K 1`` and totals ``s = 1' K 1``,
    ``trace(K_a H K_b H) = <K_a, K_b> - 2/m r_a.r_b + s_a s_b / m**2``.
    """

    pairs: list[Edge]
    values: np.ndarray            # w_ab * HSIC(res_a, res_b), one per pair
    _weights: np.ndarray
    _cols: list[int]
    _res: np.ndarray              # residual columns, (m, C)
    _grams: np.ndarray            # (C, m, m)
    _rows: np.ndarray             # row means of each Gram, (C, m)
    _sigma2: np.ndarray
    _batch: np.ndarray
    _models: Sequence[EdgeModel]
    _mask: np.ndarray | None

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def grad(self, coeffs: np.ndarray | None = None) -> np.ndarray:
        """Gradient of ``sum_c coeffs[c] * values[c]`` with respect to the batch."""
        coeffs = np.ones(len(self.pairs)) if coeffs is None else np.asarray(coeffs, dtype=float)
        g_res = np.zeros_like(self._batch)
        if not self.pairs:
            return g_res
        slot = {c: i for i, c in enumerate(self._cols)}
        mix = np.zeros((len(self._cols), len(self._cols)))
        for (a, b), c, w in zip(self.pairs, coeffs, self._weights):
            mix[slot[a], slot[b]] += c * w
            mix[slot[b], slot[a]] += c * w
        m = self._res.shape[0]
        live = [i for i in range(len(self._cols)) if np.any(mix[i])]
        # partner[i] = sum_b mix[i, b] * K_b; centering enters through q and nu
        partner = np.tensordot(mix[live], self._grams, axes=1)
        q_all = mix @ self._rows
        nu_all = mix @ self._rows.mean(axis=1)
        for p_i, i in enumerate(live):
            k = self._grams[i]
            x = self._res[:, i]
            q, nu = q_all[i], nu_all[i]
            g = partner[p_i] * k
            kx = k @ x
            rows_g = g.sum(axis=1) - q * k.sum(axis=1) - k @ q + nu * k.sum(axis=1)
            gx = g @ x - q * kx - k @ (q * x) + nu * kx
            g_res[:, self._cols[i]] = -(2.0 / (m * m * self._sigma2[i])) * (x * rows_g - gx)
        g = residualize_vjp(self._batch, self._models, g_res)
        return g if self._mask is None else g * self._mask


def ci_penalty(
    batch: np.ndarray,
    models: Sequence[EdgeModel],
    k: CausalKnowledge,
    kcfg: KernelConfig | None = None,
    pairs: Sequence[Edge] | None = None,
    binary: np.ndarray | None = None,
) -> CiPenalty:
    """Residualised-HSIC penalty over ``pairs`` (default: every forbidden pair)."""
    pairs = list(k.forbidden_pairs if pairs is None else pairs)
    xb, mask = clamp_binary(np.asarray(batch, dtype=float), binary)
    res = residualize(xb, models)
    if kcfg is None:
        kcfg = KernelConfig.from_residuals(res)
    m = res.shape[0]
    cols = sorted({j for pr in pairs for j in pr})
    sub = res[:, cols]
    sigma2 = np.asarray(kcfg.sigma2, dtype=float)[cols]
    grams = sub.T[:, :, None] - sub.T[:, None, :]
    grams *= grams
    grams *= (-0.5 / sigma2)[:, None, None]
    np.exp(grams, out=grams)
    rows = grams.mean(axis=2)
    weights = np.array([k.weight(pr) for pr in pairs])
    values = np.zeros(len(pairs))
    if pairs:
        flat = grams.reshape(len(cols), -1)
        inner = flat @ flat.T / (m * m)
        tot = rows.mean(axis=1)
        trace = inner - 2.0 * (rows @ rows.T) / m + np.outer(tot, tot)
        slot = {c: i for i, c in enumerate(cols)}
        values = weights * np.array([trace[slot[a], slot[b]] for a, b in pairs])
    return CiPenalty(pairs, values, weights, cols, sub, grams, rows, sigma2, xb, models, mask)


@dataclass
class MonoPenalty:
    values: np.ndarray
    _terms: list[tuple[int, int, np.ndarray, np.ndarray]]  # (effect col, sign, base act, twin act)
    _shape: tuple[int, int]

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def grad(self, coeffs: np.ndarray | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
        """Gradients of ``sum_c coeffs[c] * values[c]``: one for the base pass and
        one per twin pass."""
        coeffs = np.ones(len(self.values)) if coeffs is None else np.asarray(coeffs, dtype=float)
        m = self._shape[0]
        g0 = np.zeros(self._shape)
        twins = []
        for c, (j, sign, act0, act1) in zip(coeffs, self._terms):
            g0[:, j] += c * sign * act0 / m
            gt = np.zeros(self._shape)
            gt[:, j] = -c * sign * act1 / m
            twins.append(gt)
        return g0, twins


def twin_batch(base: np.ndarray, cause: int, delta: float) -> np.ndarray:
    twin = base.copy()
    twin[:, cause] += delta
    return twin


def mono_from_outputs(
    outputs: np.ndarray, twin_outputs: Sequence[np.ndarray], k: CausalKnowledge,
    binary: np.ndarray | None = None,
) -> MonoPenalty:
    """Hinge ``mean(max(0, -sign * (x'_j - x_j)))`` per monotone constraint.

    ``twin_outputs[c]`` is the map applied to the twin for constraint ``c``.
    """
    x, mask0 = clamp_binary(outputs, binary)
    values, terms = [], []
    for cons, tw in zip(k.monotone, twin_outputs):
        xt, mask1 = clamp_binary(tw, binary)
        j = cons.effect
        h = -cons.sign * (xt[:, j] - x[:, j])
        act = (h > 0).astype(float)
        values.append(float(np.mean(np.maximum(h, 0.0))))
        act0 = act if mask0 is None else act * mask0[:, j]
        act1 = act if mask1 is None else act * mask1[:, j]
        terms.append((j, cons.sign, act0, act1))
    return MonoPenalty(np.array(values), terms, outputs.shape)


def mono_penalty(
    cmap: CorrectionMap, base_batch: np.ndarray, k: CausalKnowledge, delta: float = 0.5,
    binary: np.ndarray | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Monotone components and their gradients with respect to the map parameters."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    out, tape = forward(cmap, base_batch)
    twins = [forward(cmap, twin_batch(base_batch, c.cause, delta)) for c in k.monotone]
    pen = mono_from_outputs(out, [t[0] for t in twins], k, binary)
    g0, gts = pen.grad()
    grads, _ = backward(tape, g0)
    for (_, tt), gt in zip(twins, gts):
        gp, _ = backward(tt, gt)
        grads = [a + b for a, b in zip(grads, gp)]
    return pen.values, grads


# --- utility surrogate ----------------------------------------------------------------

def utility_surrogate(
    real_batch: np.ndarray, corrected: np.ndarray, base: np.ndarray | None = None,
    id_weight: float = 0.1,
) -> tuple[float, np.ndarray]:
    """``|mean diff|^2 + |cov diff|_F^2 + id_weight * mean_i |corrected_i - base_i|^2``.

    Covariances use the population (``1/m``) form.
    """
    r = np.asarray(real_batch, dtype=float)
    x = np.asarray(corrected, dtype=float)
    if r.shape[0] < 2 or x.shape[0] < 2:
        raise ValueError("utility surrogate needs at least 2 rows per batch")
    m = x.shape[0]
    mu_x, mu_r = x.mean(axis=0), r.mean(axis=0)
    xc, rc = x - mu_x, r - mu_r
    dcov = xc.T @ xc / m - rc.T @ rc / r.shape[0]
    dmu = mu_x - mu_r
    value = float(dmu @ dmu + np.sum(dcov * dcov))
    grad = np.broadcast_to(2.0 * dmu / m, x.shape) + (4.0 / m) * xc @ dcov
    if base is not None and id_weight:
        diff = x - base
        value += id_weight * float(np.sum(diff * diff)) / m
        grad = grad + 2.0 * id_weight * diff / m
    return value, np.array(grad)
