"""Treatment-effect estimators: outcome regression, IPW, AIPW and TMLE.

All outcome models are linear (per treatment arm where an arm split is
needed); the propensity model is a logistic regression clipped to
``[0.01, 0.99]``. Any estimator that cannot produce a finite value returns an
:class:`EffectEstimate` with ``failed=True`` rather than a NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._fit import FitError, fit_linear, fit_logistic, sigmoid
from .data import Table

CLIP_LO, CLIP_HI = 0.01, 0.99
TMLE_BOUND = 1e-3
DENOM_FLOOR = 1e-8
ESTIMATORS = ("OR", "IPW", "AIPW", "TMLE")


class EstimationError(ValueError):
    pass


@dataclass
class EffectEstimate:
    estimator: str
    value: float
    failed: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"estimator": self.estimator, "value": None if self.failed else self.value,
                "failed": self.failed, "diagnostics": self.diagnostics}


@dataclass
class Propensity:
    scores: np.ndarray
    clip_fraction: float
    converged: bool


@dataclass
class ArmModels:
    """Linear outcome model per arm: ``mu_a(x) = intercept_a + x @ coef_a``."""

    intercept: tuple[float, float]
    coef: tuple[np.ndarray, np.ndarray]

    def predict(self, x: np.ndarray, arm: int) -> np.ndarray:
        return self.intercept[arm] + x @ self.coef[arm]


def _cols(table: Table, cols: Sequence[int | str]) -> list[int]:
    return [table.index(c) if isinstance(c, str) else int(c) for c in cols]


def _xty(table: Table, t, y, covariates) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ti, yi = _cols(table, [t, y])
    cov = _cols(table, covariates)
    if ti in cov or yi in cov:
        raise EstimationError("covariates must exclude treatment and outcome")
    rows = table.rows
    return rows[:, ti], rows[:, yi], rows[:, cov]


def is_binary(v: np.ndarray) -> bool:
    return bool(np.all((v == 0.0) | (v == 1.0)))


def fit_propensity(table: Table, t, covariates: Sequence[int | str]) -> Propensity:
    ti = _cols(table, [t])[0]
    tv = table.rows[:, ti]
    x = table.rows[:, _cols(table, covariates)]
    if not is_binary(tv):
        raise EstimationError("propensity model needs a binary treatment")
    if tv.min() == tv.max():
        raise EstimationError("no variation in treatment column")
    b, c, ok = fit_logistic(x, tv)
    raw = sigmoid(b + x @ c)
    scores = np.clip(raw, CLIP_LO, CLIP_HI)
    return Propensity(scores, float(np.mean((raw < CLIP_LO) | (raw > CLIP_HI))), ok)


def fit_arm_models(tv: np.ndarray, yv: np.ndarray, x: np.ndarray) -> ArmModels:
    out_b, out_c = [], []
    for arm in (0, 1):
        sel = tv == arm
        if sel.sum() < 2:
            raise EstimationError(f"treatment arm {arm} has fewer than 2 rows")
        b, c = fit_linear(x[sel], yv[sel])
        out_b.append(b)
        out_c.append(c)
    return ArmModels((out_b[0], out_b[1]), (out_c[0], out_c[1]))


def ate_or(table: Table, t, y, covariates: Sequence[int | str] = ()) -> float:
    """Coefficient of ``T`` in the linear regression ``Y ~ 1 + T + X``."""
    tv, yv, x = _xty(table, t, y, covariates)
    design = np.column_stack([tv, x])
    centered = design - design.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= 1e-8 * sv[0]:
        raise EstimationError("singular design: treatment is collinear with covariates or constant")
    _, coef = fit_linear(design, yv)
    return float(coef[0])


def ate_ipw(table: Table, t, y, scores: np.ndarray) -> float:
    tv, yv, _ = _xty(table, t, y, [])
    e = np.asarray(scores, dtype=float)
    return float(np.mean(tv * yv / e) - np.mean((1.0 - tv) * yv / (1.0 - e)))


def ate_aipw(table: Table, t, y, scores: np.ndarray, outcome_models: ArmModels,
             covariates: Sequence[int | str] = ()) -> float:
    tv, yv, x = _xty(table, t, y, covariates)
    e = np.asarray(scores, dtype=float)
    mu1, mu0 = outcome_models.predict(x, 1), outcome_models.predict(x, 0)
    psi = mu1 - mu0 + tv * (yv - mu1) / e - (1.0 - tv) * (yv - mu0) / (1.0 - e)
    return float(psi.mean())


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def _fluctuate(ys: np.ndarray, q: np.ndarray, h: np.ndarray,
               tol: float = 1e-10, max_iter: int = 100) -> tuple[float, bool]:
    """Newton fit of ``eps`` in ``logit(Q*) = logit(Q) + eps * H`` (no intercept)."""
    off = _logit(q)
    eps = 0.0
    for _ in range(max_iter):
        p = sigmoid(off + eps * h)
        grad = float(np.sum(h * (p - ys)))
        if abs(grad) <= tol * len(ys):
            return eps, True
        hess = float(np.sum(h * h * p * (1.0 - p)))
        if not hess > 0:
            return eps, False
        eps -= grad / hess
        if not math.isfinite(eps):
            return 0.0, False
    return eps, False


def ate_tmle(table: Table, t, y, scores: np.ndarray, outcome_models: ArmModels,
             covariates: Sequence[int | str] = (), eps: float | None = None) -> EffectEstimate:
    """One-step TMLE on the min-max scaled outcome.

    ``eps`` overrides the fitted fluctuation coefficient (``eps=0`` gives the
    plug-in estimate). Non-convergence falls back to AIPW with a flag.
    """
    tv, yv, x = _xty(table, t, y, covariates)
    lo, hi = float(yv.min()), float(yv.max())
    if hi == lo:
        return EffectEstimate("TMLE", 0.0, diagnostics={"degenerate_outcome": True})
    e = np.asarray(scores, dtype=float)
    scale = hi - lo
    ys = (yv - lo) / scale

    def bounded(v: np.ndarray) -> np.ndarray:
        return np.clip((v - lo) / scale, TMLE_BOUND, 1.0 - TMLE_BOUND)

    q1, q0 = bounded(outcome_models.predict(x, 1)), bounded(outcome_models.predict(x, 0))
    qt = np.where(tv == 1, q1, q0)
    h = tv / e - (1.0 - tv) / (1.0 - e)
    diag: dict = {}
    if eps is None:
        eps, ok = _fluctuate(ys, qt, h)
        diag["converged"] = ok
        if not ok:
            diag["fallback"] = "AIPW"
            return EffectEstimate("TMLE", ate_aipw(table, t, y, e, outcome_models, covariates),
                                  diagnostics=diag)
    diag["epsilon"] = float(eps)
    q1s = sigmoid(_logit(q1) + eps / e)
    q0s = sigmoid(_logit(q0) - eps / (1.0 - e))
    return EffectEstimate("TMLE", float(np.mean(q1s - q0s) * scale), diagnostics=diag)


def estimate_all(table: Table, t, y, covariates: Sequence[int | str] = ()) -> dict[str, EffectEstimate]:
    """Run the four-estimator ensemble; failures are flagged, never NaN."""
    out: dict[str, EffectEstimate] = {}
    try:
        out["OR"] = EffectEstimate("OR", ate_or(table, t, y, covariates))
    except (EstimationError, FitError) as exc:
        out["OR"] = EffectEstimate("OR", math.nan, True, {"error": str(exc)})
    tv, yv, x = _xty(table, t, y, covariates)
    try:
        prop = fit_propensity(table, t, covariates)
        arms = fit_arm_models(tv, yv, x)
    except (EstimationError, FitError) as exc:
        for name in ESTIMATORS[1:]:
            out[name] = EffectEstimate(name, math.nan, True, {"error": str(exc)})
        return out
    pdiag = {"clip_fraction": prop.clip_fraction, "propensity_converged": prop.converged}
    out["IPW"] = EffectEstimate("IPW", ate_ipw(table, t, y, prop.scores), diagnostics=dict(pdiag))
    out["AIPW"] = EffectEstimate("AIPW", ate_aipw(table, t, y, prop.scores, arms, covariates),
                                 diagnostics=dict(pdiag))
    tm = ate_tmle(table, t, y, prop.scores, arms, covariates)
    tm.diagnostics.update(pdiag)
    out["TMLE"] = tm
    for name, est in out.items():
        if not est.failed and not math.isfinite(est.value):
            out[name] = EffectEstimate(name, math.nan, True, {"error": "non-finite estimate"})
    return out


def cate_pehe(syn: Table, truth: Table, ite: np.ndarray, t, y,
              covariates: Sequence[int | str] = ()) -> float:
    """Root-mean-squared error of ``tau_hat(x)`` fitted on ``syn`` against true effects.

    Binary treatment: per-arm linear models, ``tau_hat = mu_1 - mu_0``.
    Continuous treatment: ``Y ~ 1 + T + X + T*X`` and ``tau_hat`` is the
    predicted change from ``T=0`` to ``T=1``.
    """
    if ite is None:
        raise EstimationError("missing ITE column")
    ite = np.asarray(ite, dtype=float)
    if ite.shape != (truth.n,):
        raise EstimationError("ITE vector must have one entry per truth row")
    tv, yv, x = _xty(syn, t, y, covariates)
    xt = truth.rows[:, _cols(truth, covariates)]
    if is_binary(tv):
        arms = fit_arm_models(tv, yv, x)
        tau = arms.predict(xt, 1) - arms.predict(xt, 0)
    else:
        _, coef = fit_linear(np.column_stack([tv, x, tv[:, None] * x]), yv)
        k = x.shape[1]
        tau = coef[0] + xt @ coef[1 + k:]
    return pehe(tau, ite)


def pehe(tau_hat: np.ndarray, tau: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(tau_hat, float) - np.asarray(tau, float)) ** 2)))


@dataclass
class Agreement:
    value: float | None
    failed: bool
    real: dict[str, float | None]
    syn: dict[str, float | None]
    reason: str = ""

    def to_dict(self) -> dict:
        return {"value": self.value, "failed": self.failed, "real": self.real, "syn": self.syn,
                "reason": self.reason}


def agreement_score(real_ates: Sequence[float], syn_ates: Sequence[float]) -> float | None:
    """``1 - mean|syn - real| / mean|real|`` clipped to [0, 1]; None if the
    denominator is below 1e-8."""
    r = np.asarray(real_ates, dtype=float)
    s = np.asarray(syn_ates, dtype=float)
    if r.shape != s.shape or r.size == 0:
        raise ValueError("need matching, non-empty estimate vectors")
    denom = float(np.mean(np.abs(r)))
    if denom < DENOM_FLOOR:
        return None
    return float(np.clip(1.0 - np.mean(np.abs(s - r)) / denom, 0.0, 1.0))


def ate_agreement(real: Table, syn: Table, t, y, covariates: Sequence[int | str] = ()) -> Agreement:
    """Ensemble ATE agreement between a real and a synthetic table.

    Estimators that fail on either table are dropped from both vectors.
    """
    if [c.name for c in real.schema] != [c.name for c in syn.schema]:
        raise EstimationError("real and synthetic tables must share a schema")
    er = estimate_all(real, t, y, covariates)
    es = estimate_all(syn, t, y, covariates)
    comp_r = {k: (None if v.failed else v.value) for k, v in er.items()}
    comp_s = {k: (None if v.failed else v.value) for k, v in es.items()}
    keep = [k for k in ESTIMATORS if comp_r[k] is not None and comp_s[k] is not None]
    if not keep:
        return Agreement(None, True, comp_r, comp_s, "no estimator succeeded on both tables")
    score = agreement_score([comp_r[k] for k in keep], [comp_s[k] for k in keep])
    if score is None:
        return Agreement(None, True, comp_r, comp_s, "real ATEs are all ~0")
    return Agreement(score, False, comp_r, comp_s)
