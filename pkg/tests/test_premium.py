import math

import numpy as np
import pytest

from mhfree import distributions as D, distortions as G
from mhfree.premium import (AssumptionError, MarketParams, PremiumMismatch, check_assumption, dual_cdf,
                            effective_loading, g_expectation, premium_rate)
from mhfree.retention import RetentionFunction, full_retention, stop_loss, zero_retention

# mpmath quadratures, frozen
WANG03_PRICE = 1.2986440044288323  # int N(N^-1(e^-z) + 0.3) dz
LAYER_PRICE = 15.642586100396718  # 4 int g(S(z)) dz for the layer loss
LAYER_COST = 6.759895260721988  # (1+theta) int I* dF^ for the two-layer indemnity


def test_identity_dual_is_the_loss():
    F = D.exponential(1.0)
    du = dual_cdf(F, G.identity())
    z = np.linspace(0, 10, 101)
    assert np.allclose(du.cdf(z), F.cdf(z), atol=1e-15)
    assert du.theta == 0.0


def test_identity_dual_with_atom_is_renormalised():
    F = D.exponential(1.0, mass_at_zero=0.2)
    du = dual_cdf(F, G.identity(), 0.5)
    z = np.array([0.0, 0.3, 2.0])
    assert np.allclose(du.cdf(z), (F.cdf(z) - 0.2) / 0.8, atol=1e-15)
    assert du.theta == pytest.approx(1.5 * 0.8 - 1)


def test_layer_dual_at_five():
    du = dual_cdf(D.layer_example_loss(), G.layer_example(), 3.0)
    assert du.cdf(5.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert du.theta == 3.0


def test_effective_loading_with_atom():
    F = D.exponential(2.0, mass_at_zero=0.3)
    assert effective_loading(F, G.proportional_hazard(2.0), 0.5) == pytest.approx(1.5 * math.sqrt(0.7) - 1)


def test_degenerate_distortion():
    g = G.tabular([(0, 0), (0.5, 0), (1, 1)])
    with pytest.raises(AssumptionError):
        dual_cdf(D.exponential(1.0, mass_at_zero=0.6), g)


def test_g_expectation():
    F = D.exponential(1.0)
    assert g_expectation(G.identity(), 0.0, F) == pytest.approx(1.0, rel=1e-12)
    assert g_expectation(G.identity(), 0.5, F) == pytest.approx(1.5, rel=1e-12)
    assert g_expectation(G.proportional_hazard(2.0), 0.0, F) == pytest.approx(2.0, rel=1e-12)
    assert g_expectation(G.wang(0.3), 0.0, F) == pytest.approx(WANG03_PRICE, rel=1e-10)
    assert g_expectation(G.layer_example(), 3.0, D.layer_example_loss()) == pytest.approx(LAYER_PRICE, rel=1e-10)


def test_simple_premiums():
    F = D.exponential(1.0)
    g = G.identity()
    assert premium_rate(full_retention(), F, g, 0.5).value == 0.0
    assert premium_rate(zero_retention(), F, g, 0.5).value == pytest.approx(1.5, rel=1e-10)
    for d in (0.3, 1.0, 2.5):
        q = premium_rate(stop_loss(d), F, g, 1.0)
        assert q.direct == pytest.approx(2 * math.exp(-d), rel=1e-10)
        assert q.dual == pytest.approx(2 * math.exp(-d), rel=1e-10)


def test_stop_loss_under_proportional_hazard():
    # (1+theta0) int_d^inf e^{-z/2} dz
    q = premium_rate(stop_loss(1.0), D.exponential(1.0), G.proportional_hazard(2.0), 0.25)
    assert q.value == pytest.approx(1.25 * 2 * math.exp(-0.5), rel=1e-10)


def test_layer_contract_cost():
    H = RetentionFunction(np.array([0.0, 2.0, 4.0]), np.array([1.0, 0.5, 0.0]))
    q = premium_rate(H, D.layer_example_loss(), G.layer_example(), 3.0)
    assert q.direct == pytest.approx(LAYER_COST, rel=1e-9)
    assert q.dual == pytest.approx(LAYER_COST, rel=1e-9)


def test_premium_with_jump_in_g_and_atoms_in_F():
    F = D.DiscreteLoss([0.0, 1.0, 3.0], [0.2, 0.5, 0.3])
    g = G.tabular([(0, 0), (0.3, 0.3), (0.3, 0.55), (1, 1)])
    H = stop_loss(2.0)
    # I(Z) = (Z - 2)^+ is 1 with prob 0.3; P(I > t) = 0.3 on [0, 1)
    q = premium_rate(H, F, g, 0.0)
    assert q.direct == pytest.approx(0.3, rel=1e-12)
    assert q.dual == pytest.approx(0.3, rel=1e-12)


def test_mismatch_is_reported():
    # a dual law built for another distortion cannot reproduce the direct premium
    F = D.exponential(1.0)
    wrong = dual_cdf(F, G.proportional_hazard(2.0), 0.0)
    with pytest.raises(PremiumMismatch):
        premium_rate(stop_loss(1.0), F, G.identity(), 0.0, wrong)


def test_assumption_margins():
    F, g = D.exponential(1.0), G.identity()
    assert check_assumption(MarketParams(1.5, 1.0), F, g).ok
    low = check_assumption(MarketParams(0.9, 1.0), F, g)
    assert not low.ok and "below expected loss" in low.message
    high = check_assumption(MarketParams(2.5, 1.0), F, g)
    assert not high.ok and high.margins["price_over_premium"] == pytest.approx(-0.5)


def test_market_params_guard():
    with pytest.raises(ValueError):
        MarketParams(1.0, -1.0)


def test_concave_g_fattens_the_dual_tail():
    F = D.exponential(1.0)
    z = np.linspace(0, 12, 200)
    for g in (G.proportional_hazard(1.7), G.wang(0.4)):
        assert np.all(dual_cdf(F, g).cdf(z) <= F.cdf(z) + 1e-15)


def test_envelope_dual_dominates():
    F = D.exponential(1.0)
    g = G.inverse_s(0.6)
    env = G.concave_envelope(g)
    z = np.linspace(0, 12, 200)
    assert np.all(dual_cdf(F, env).sf(z) >= dual_cdf(F, g).sf(z) - 1e-9)
