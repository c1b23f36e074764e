import numpy as np
import pytest

from causalwrap.scm import (Family, MechKind, NoCausalPath, Scm, ancestral_sample, ate_monte_carlo,
                            choose_treatment_outcome, individual_effects, linear_path_effect,
                            mechanism_effect, oracle_sampler, random_scm, random_scm_with_path)

from conftest import linear_scm


def total_effect_matrix(scm):
    """(I - W)^-1 - I: entry [i, j] is the total linear effect of i on j."""
    w = np.zeros((scm.d, scm.d))
    for j, m in enumerate(scm.mechanisms):
        for p, c in zip(m.parents, m.coef):
            w[p, j] = c
    return np.linalg.inv(np.eye(scm.d) - w)


def test_path_effect_by_hand():
    scm = linear_scm(3, {(0, 1): 2.0, (1, 2): 3.0, (0, 2): 1.0})
    assert linear_path_effect(scm, 0, 2) == 7.0
    assert linear_path_effect(scm, 2, 0) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_path_effect_matches_matrix_inverse(seed):
    scm = random_scm("LG", 8, 2.5, np.random.default_rng(seed))
    te = total_effect_matrix(scm)
    for t in range(8):
        for y in range(8):
            if t != y:
                assert linear_path_effect(scm, t, y) == pytest.approx(te[t, y], abs=1e-12)


@pytest.mark.parametrize("family", ["LG", "NLA", "MT"])
def test_random_scm_structure(family):
    rng = np.random.default_rng(1)
    scm = random_scm(family, 10, 2.0, rng)
    pos = {v: k for k, v in enumerate(scm.order)}
    assert all(pos[a] < pos[b] for a, b in scm.edges)
    kinds = {m.kind for m in scm.mechanisms}
    if family == "LG":
        assert kinds == {MechKind.LINEAR}
    if family == "MT":
        assert sum(k is MechKind.LOGISTIC_BINARY for k in (m.kind for m in scm.mechanisms)) == 5
    for m in scm.mechanisms:
        assert all(0.5 <= abs(c) <= 1.5 for c in m.coef)


def test_expected_edge_count():
    rng = np.random.default_rng(2)
    counts = [len(random_scm("LG", 10, 2.0, rng).edges) for _ in range(400)]
    assert np.mean(counts) == pytest.approx(10.0, abs=0.4)


def test_json_round_trip(tmp_path):
    scm = random_scm("MT", 6, 2.0, np.random.default_rng(3))
    scm.save(tmp_path / "s.json")
    assert Scm.load(tmp_path / "s.json") == scm


def test_order_validation():
    from causalwrap.scm import Mechanism
    with pytest.raises(ValueError, match="topological"):
        Scm(Family.LG, (1, 0), (Mechanism(MechKind.LINEAR), Mechanism(MechKind.LINEAR, (0,), (1.0,))))


def test_intervention_severs_mechanism():
    scm = linear_scm(3, {(0, 1): 1.0, (1, 2): 1.0})
    rows = ancestral_sample(scm, 500, np.random.default_rng(0), {1: 2.5}).rows
    assert np.all(rows[:, 1] == 2.5)
    assert abs(np.corrcoef(rows[:, 0], rows[:, 2])[0, 1]) < 0.15
    with pytest.raises(ValueError):
        ancestral_sample(scm, 5, np.random.default_rng(0), {7: 1.0})


def test_mt_binary_columns():
    scm = random_scm("MT", 8, 2.0, np.random.default_rng(4))
    t = ancestral_sample(scm, 300, np.random.default_rng(0))
    for j, m in enumerate(scm.mechanisms):
        if m.kind is MechKind.LOGISTIC_BINARY:
            assert set(np.unique(t.rows[:, j])) <= {0.0, 1.0}


def test_monte_carlo_ate_linear():
    scm = linear_scm(3, {(0, 1): 1.2, (1, 2): -0.8, (0, 2): 0.5})
    ate, se = ate_monte_carlo(scm, 1, 2, np.random.default_rng(5), 50_000)
    assert abs(ate + 0.8) < 4 * se


def test_individual_effects_shared_noise():
    scm = linear_scm(3, {(0, 1): 1.2, (1, 2): -0.8})
    _, ite = individual_effects(scm, 1, 2, 100, np.random.default_rng(6))
    np.testing.assert_allclose(ite, -0.8, atol=1e-12)


def test_treatment_outcome_choice():
    scm = linear_scm(4, {(1, 3): 1.0, (2, 3): 1.0}, order=[0, 2, 1, 3])
    assert choose_treatment_outcome(scm) == (2, 3)
    with pytest.raises(NoCausalPath):
        choose_treatment_outcome(linear_scm(2, {}))
    scm, t, y = random_scm_with_path("NLA", 6, np.random.default_rng(7))
    assert t in scm.ancestors(y)


def test_mechanism_effect():
    scm = linear_scm(2, {(0, 1): 1.3})
    assert mechanism_effect(scm, 0, 1, np.random.default_rng(0)) == 1.3
    nla = random_scm("NLA", 6, 3.0, np.random.default_rng(8))
    a, b = nla.edges[0]
    m = nla.mechanisms[b]
    eff = mechanism_effect(nla, a, b, np.random.default_rng(0), n=20_000)
    assert np.sign(eff) == np.sign(m.coef[m.parents.index(a)])
    with pytest.raises(ValueError):
        mechanism_effect(scm, 1, 0, np.random.default_rng(0))


def test_oracle_sampler_reproducible():
    scm = random_scm("NLA", 5, 2.0, np.random.default_rng(9))
    s = oracle_sampler(scm)
    a = s.sample(50, np.random.default_rng(1))
    np.testing.assert_array_equal(a, s.sample(50, np.random.default_rng(1)))
