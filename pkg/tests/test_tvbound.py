import itertools

import numpy as np
import pytest

from causalwrap.tvbound import chain_bound_check, conditional_tv_terms, joint, random_binary_bn, tv


def test_joint_sums_to_one():
    cpt = random_binary_bn(4, np.random.default_rng(0))
    assert joint(cpt).sum() == pytest.approx(1.0, abs=1e-14)


def test_single_variable_bound_is_tight():
    p, q = [np.array(0.3)], [np.array(0.7)]
    assert chain_bound_check(p, q) == pytest.approx((0.4, 0.4), abs=1e-15)


def test_conditional_terms_by_hand():
    # P: x0 ~ Bern(0.5), x1 | x0 ~ Bern(0.2 / 0.6); Q differs only in x1 | x0=1
    p = [np.array(0.5), np.array([0.2, 0.6])]
    q = [np.array(0.5), np.array([0.2, 0.9])]
    np.testing.assert_allclose(conditional_tv_terms(p, q), [0.0, 0.5 * 0.3], atol=1e-15)
    assert tv(joint(p), joint(q)) == pytest.approx(0.15, abs=1e-15)


def test_identical_networks():
    cpt = random_binary_bn(3, np.random.default_rng(1))
    assert chain_bound_check(cpt, cpt) == (0.0, 0.0)


@pytest.mark.parametrize("d", [2, 4, 5])
def test_bound_holds(d):
    rng = np.random.default_rng(d)
    for _ in range(50):
        t, bound = chain_bound_check(random_binary_bn(d, rng), random_binary_bn(d, rng))
        assert t <= bound + 1e-12


def test_joint_matches_direct_product():
    cpt = random_binary_bn(3, np.random.default_rng(2))
    j = joint(cpt)
    for x in itertools.product((0, 1), repeat=3):
        p0 = cpt[0] if x[0] else 1 - cpt[0]
        p1 = cpt[1][x[0]] if x[1] else 1 - cpt[1][x[0]]
        p2 = cpt[2][x[0], x[1]] if x[2] else 1 - cpt[2][x[0], x[1]]
        assert j[x] == pytest.approx(p0 * p1 * p2, abs=1e-15)
