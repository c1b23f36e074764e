import numpy as np
import pytest

from causalwrap.data import Table
from causalwrap.estimators import (EstimationError, agreement_score, ate_agreement, ate_aipw, ate_or,
                                   ate_tmle, cate_pehe, estimate_all, fit_arm_models, fit_propensity,
                                   pehe)

COV = [0, 1]


def confounded(n=5000, seed=0, outcome=None, logit=None, ate=2.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    z = 0.6 * x[:, 0] - 0.4 * x[:, 1] if logit is None else logit(x)
    t = (rng.uniform(size=n) < 1 / (1 + np.exp(-z))).astype(float)
    base = x[:, 0] - x[:, 1] if outcome is None else outcome(x)
    y = 1.0 + ate * t + base + rng.normal(size=n)
    return Table.from_array(np.column_stack([x, t, y]), names=["x1", "x2", "t", "y"])


def test_all_four_agree_with_truth():
    ests = {k: [] for k in ("OR", "IPW", "AIPW", "TMLE")}
    for seed in range(10):
        for k, v in estimate_all(confounded(seed=seed), 2, 3, COV).items():
            assert not v.failed
            ests[k].append(v.value)
    for k, v in ests.items():
        v = np.array(v)
        assert abs(v.mean() - 2.0) < 3 * v.std(ddof=1) / np.sqrt(len(v)) + 1e-3, k


def test_aipw_double_robust_outcome_correct():
    # propensity misspecified (quadratic logit), outcome linear
    est = []
    for seed in range(5):
        tab = confounded(20000, seed, logit=lambda x: 1.2 * x[:, 0] ** 2 - 1.0)
        tv, yv, x = tab.rows[:, 2], tab.rows[:, 3], tab.rows[:, :2]
        est.append(ate_aipw(tab, 2, 3, fit_propensity(tab, 2, COV).scores, fit_arm_models(tv, yv, x), COV))
    assert np.mean(est) == pytest.approx(2.0, abs=0.05)


def test_aipw_double_robust_propensity_correct():
    # outcome nonlinear in x1, propensity logistic-linear
    est, naive = [], []
    for seed in range(5):
        tab = confounded(20000, seed, outcome=lambda x: np.exp(x[:, 0]))
        tv, yv, x = tab.rows[:, 2], tab.rows[:, 3], tab.rows[:, :2]
        est.append(ate_aipw(tab, 2, 3, fit_propensity(tab, 2, COV).scores, fit_arm_models(tv, yv, x), COV))
        naive.append(ate_or(tab, 2, 3, COV))
    assert np.mean(est) == pytest.approx(2.0, abs=0.1)
    assert abs(np.mean(naive) - 2.0) > 2 * abs(np.mean(est) - 2.0)


def test_tmle_zero_fluctuation_is_plug_in():
    tab = confounded(2000, 3)
    tv, yv, x = tab.rows[:, 2], tab.rows[:, 3], tab.rows[:, :2]
    arms = fit_arm_models(tv, yv, x)
    plug = ate_tmle(tab, 2, 3, fit_propensity(tab, 2, COV).scores, arms, COV, eps=0.0)
    mu1, mu0 = arms.predict(x, 1), arms.predict(x, 0)
    lo, hi = yv.min(), yv.max()
    inside = (mu1 > lo) & (mu1 < hi) & (mu0 > lo) & (mu0 < hi)
    assert inside.mean() > 0.99
    assert plug.value == pytest.approx(np.mean(mu1 - mu0), rel=0.01)


def test_tmle_degenerate_outcome():
    tab = confounded(200, 4)
    rows = tab.rows.copy()
    rows[:, 3] = 5.0
    flat = Table.from_array(rows, names=tab.names)
    est = ate_tmle(flat, 2, 3, np.full(200, 0.5), fit_arm_models(rows[:, 2], rows[:, 3], rows[:, :2]), COV)
    assert est.value == 0.0 and est.diagnostics["degenerate_outcome"]


def test_propensity_errors_and_clipping():
    tab = confounded(500, 5)
    rows = tab.rows.copy()
    rows[:, 2] = 1.0
    with pytest.raises(EstimationError, match="no variation"):
        fit_propensity(Table.from_array(rows, names=tab.names), 2, COV)
    sep = confounded(2000, 6, logit=lambda x: 12 * x[:, 0])
    p = fit_propensity(sep, 2, COV)
    assert p.scores.min() >= 0.01 and p.scores.max() <= 0.99 and p.clip_fraction > 0.3


def test_or_singular_design():
    tab = confounded(300, 7)
    rows = tab.rows.copy()
    rows[:, 0] = rows[:, 2]
    with pytest.raises(EstimationError, match="singular"):
        ate_or(Table.from_array(rows, names=tab.names), 2, 3, COV)
    with pytest.raises(EstimationError, match="exclude"):
        ate_or(tab, 2, 3, [0, 2])


def test_continuous_treatment_only_or():
    rng = np.random.default_rng(8)
    x = rng.normal(size=1000)
    t = 0.5 * x + rng.normal(size=1000)
    y = 1.5 * t + x + rng.normal(size=1000)
    tab = Table.from_array(np.column_stack([x, t, y]))
    out = estimate_all(tab, 1, 2, [0])
    assert not out["OR"].failed and out["OR"].value == pytest.approx(1.5, abs=0.1)
    assert all(out[k].failed for k in ("IPW", "AIPW", "TMLE"))
    assert out["IPW"].to_dict()["value"] is None


def test_pehe_examples():
    tau = np.array([1.0, 2.0, 3.0])
    assert pehe(tau, tau) == 0.0
    assert pehe(tau + 1.0, tau) == 1.0


def test_pehe_homogeneous_matches_ate_error():
    tab = confounded(5000, 9)
    truth = confounded(1000, 10)
    p = cate_pehe(tab, truth, np.full(1000, 2.0), 2, 3, COV)
    assert p < 0.15
    with pytest.raises(EstimationError):
        cate_pehe(tab, truth, np.ones(3), 2, 3, COV)


@pytest.mark.parametrize("real, syn, want", [
    ([0.1] * 4, [0.2] * 4, 0.0),
    ([1.0, 2.0, 3.0, 2.0], [1.0, 2.0, 3.0, 2.0], 1.0),
    ([2.0, 2.0, 2.0, 2.0], [3.0, 1.0, 3.0, 1.0], 0.5),
    ([1.0, -1.0, 1.0, -1.0], [5.0, 5.0, 5.0, 5.0], 0.0),
])
def test_agreement_formula(real, syn, want):
    assert agreement_score(real, syn) == want


def test_agreement_scale_invariant_and_undefined():
    r, s = np.array([0.3, -0.2, 0.5, 0.4]), np.array([0.25, -0.1, 0.45, 0.5])
    assert agreement_score(r * 7.0, s * 7.0) == pytest.approx(agreement_score(r, s), abs=1e-15)
    assert agreement_score([0.0] * 4, [1.0] * 4) is None
    with pytest.raises(ValueError):
        agreement_score([1.0], [1.0, 2.0])


def test_ate_agreement_tables():
    real = confounded(3000, 11)
    ag = ate_agreement(real, real, 2, 3, COV)
    assert ag.value == 1.0 and not ag.failed and set(ag.real) == {"OR", "IPW", "AIPW", "TMLE"}
    syn = confounded(3000, 12, ate=1.0)
    assert 0.3 < ate_agreement(real, syn, 2, 3, COV).value < 0.7
