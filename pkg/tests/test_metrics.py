import json
import math

import numpy as np
import pytest

from causalwrap.data import Provenance, Table
from causalwrap.knowledge import CausalKnowledge
from causalwrap.metrics import (EvalReport, GroundTruth, assemble_report, ci_pass_rate, column_jsd,
                                jsd, mmd, residual_correlation, tstr)
from causalwrap.penalties import EdgeModel


def gauss(n, seed, shift=0.0, d=3):
    return Table.from_array(np.random.default_rng(seed).normal(size=(n, d)) + shift)


def test_mmd_identical_and_shifted():
    a = gauss(400, 0)
    assert mmd(a, a) == 0.0
    near, far = mmd(a, gauss(400, 1)), mmd(a, gauss(400, 1, shift=1.0))
    assert near < 0.01 < far


def test_mmd_symmetric_and_subsampled():
    a, b = gauss(2500, 2), gauss(300, 3, shift=0.3)
    assert mmd(a, b) == pytest.approx(mmd(b, a), abs=1e-15)
    assert mmd(a, b, seed=1) != mmd(a, b, seed=2)


def test_mmd_hand_value():
    # one row per table, pooled standardization sends them to -1 and +1 per column
    a = Table.from_array(np.array([[0.0, 0.0]]))
    b = Table.from_array(np.array([[1.0, 3.0]]))
    # squared distance 8, bandwidth = median = 8, k_xy = exp(-1/2)
    assert mmd(a, b) == pytest.approx(2.0 - 2.0 * math.exp(-0.5), abs=1e-15)


def test_schema_mismatch():
    with pytest.raises(ValueError, match="schema"):
        mmd(gauss(10, 0), gauss(10, 0, d=2))


def test_jsd_binary_closed_form():
    a = np.array([0.0, 1.0, 1.0, 1.0])
    b = np.array([0.0, 0.0, 0.0, 1.0])
    p, q = np.array([0.25, 0.75]), np.array([0.75, 0.25])
    m = (p + q) / 2
    want = 0.5 * np.sum(p * np.log(p / m)) + 0.5 * np.sum(q * np.log(q / m))
    assert column_jsd(a, b, True) == pytest.approx(want, abs=1e-15)
    assert column_jsd(a, a, True) == 0.0


def test_jsd_bounds():
    a, b = gauss(500, 4), gauss(500, 5, shift=20.0)
    assert 0.0 <= jsd(a, a) < 1e-12
    assert jsd(a, b) <= math.log(2) + 1e-12
    assert jsd(a, b) > 0.5
    assert column_jsd(np.ones(5), np.ones(5), False) == 0.0


def labelled(n, seed, flip=0.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(float)
    y = np.where(rng.uniform(size=n) < flip, 1 - y, y)
    return Table.from_array(np.column_stack([x, y]))


def test_tstr():
    res = tstr(labelled(1000, 0), labelled(1000, 1), 2)
    assert res.accuracy > 0.95 and not res.single_class
    rows = labelled(100, 2).rows.copy()
    rows[:, 2] = 1.0
    one = tstr(labelled(200, 3), Table.from_array(rows), 2)
    assert one.single_class
    with pytest.raises(ValueError, match="threshold"):
        tstr(gauss(10, 0), gauss(10, 1), 0)
    assert tstr(gauss(500, 0), gauss(500, 1), 0, threshold=0.0).single_class is False


def test_residual_correlation():
    assert residual_correlation(np.ones(5), np.arange(5.0)) == 0.0
    assert residual_correlation(np.arange(5.0), -2 * np.arange(5.0)) == pytest.approx(-1.0)


def test_ci_pass_rate():
    rng = np.random.default_rng(6)
    x0 = rng.normal(size=3000)
    x1 = x0 + rng.normal(size=3000)
    x2 = 0.5 * x1 + rng.normal(size=3000)
    syn = Table.from_array(np.column_stack([x0, x1, x2]))
    k = CausalKnowledge(trusted={(1, 2)}, forbidden={(0, 2), (0, 1)})
    # with x2 residualized on x1, 0 and 2 look independent while 0 -> 1 is real
    models = [EdgeModel(2, (1,), False, 0.0, np.array([0.5]))]
    res = ci_pass_rate(syn, k, models)
    assert res.rate == 0.5 and abs(res.correlations["0->2"]) < 0.08
    assert ci_pass_rate(syn, CausalKnowledge(), []).empty


def test_report_flags_and_json(tmp_path):
    real = labelled(500, 7)
    rep = assemble_report(real, labelled(500, 8), CausalKnowledge(), [], 0, 2, [1],
                          truth=GroundTruth(1.0))
    assert "ci_no_forbidden_pairs" in rep.flags and rep.ci_pass == 1.0
    assert rep.ate_error is not None and rep.ate_agreement is None
    rep.write(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["provenance"] == {"real": Provenance.REAL.value, "syn": Provenance.REAL.value}
    with pytest.raises(ValueError, match="not finite"):
        EvalReport(math.nan, 0, 0, 0, 0, {})


def test_report_without_truth_uses_agreement():
    rng = np.random.default_rng(9)
    x = rng.normal(size=2000)
    t = (rng.uniform(size=2000) < 1 / (1 + np.exp(-x))).astype(float)
    y = 2 * t + x + rng.normal(size=2000)
    real = Table.from_array(np.column_stack([x, t, y]))
    rep = assemble_report(real, real, CausalKnowledge(forbidden={(0, 1)}), [], 1, 2, [0])
    assert rep.ate_error is None and rep.ate_agreement == 1.0
    assert set(rep.agreement["real"]) == {"OR", "IPW", "AIPW", "TMLE"}
