import math

import numpy as np
import pytest

from mhfree import distributions as D

# hand-computed values; the layer mean is an mpmath quadrature of its survival function
LAYER_MEAN = 3.9147982061950524


def test_exponential_cdf_and_quantile():
    F = D.exponential(1.0)
    assert F.cdf(1.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert F.quantile(0.5) == pytest.approx(math.log(2), abs=1e-15)
    assert F.mean == pytest.approx(1.0, abs=1e-15)
    assert F.second_moment() == pytest.approx(2.0, rel=1e-12)
    assert F.has_quantile_density


def test_exponential_with_atom_at_zero():
    F = D.exponential(2.0, mass_at_zero=0.3)
    assert F.cdf(0.0) == pytest.approx(0.3)
    assert F.quantile(0.3) == 0.0
    assert F.quantile(0.2) == 0.0
    # (0.65 - 0.3) / 0.7 = 1/2, so the quantile is the exponential median
    assert F.quantile(0.65) == pytest.approx(2 * math.log(2), abs=1e-14)
    assert F.mean == pytest.approx(1.4, abs=1e-14)
    assert F.second_moment() == pytest.approx(5.6, rel=1e-12)


def test_layer_loss_has_upward_jumps():
    F = D.layer_example_loss()
    assert F.cdf(1.0) == pytest.approx(1 - math.exp(-0.2), abs=1e-15)
    assert F.sf_left(1.0) == pytest.approx(math.exp(-1 / 6), abs=1e-15)
    atoms = dict(map(tuple, F.atoms))
    assert atoms[1.0] == pytest.approx(math.exp(-1 / 6) - math.exp(-0.2), abs=1e-15)
    assert atoms[6.0] == pytest.approx(math.exp(-1.2) - math.exp(-2.0), abs=1e-15)
    assert F.mean == pytest.approx(LAYER_MEAN, rel=1e-13)
    assert not F.has_quantile_density


def test_layer_quantile_is_flat_over_the_jumps():
    F = D.layer_example_loss()
    p = np.array([1 - math.exp(-1 / 6) + 1e-9, 1 - math.exp(-0.2)])
    assert np.allclose(F.quantile(p), 1.0)
    assert F.quantile(1 - math.exp(-1 / 6) - 1e-9) < 1.0


def test_empirical_step_cdf():
    F = D.build_empirical([0, 1, 1, 2, 2, 2, 10])
    assert F.cdf(2.0) == pytest.approx(6 / 7)
    assert F.cdf(1.999) == pytest.approx(3 / 7)
    assert F.quantile(6 / 7) == 2.0
    assert F.quantile(6 / 7 + 1e-9) == 10.0
    assert F.mass_at_zero == pytest.approx(1 / 7)
    assert F.mean == pytest.approx(18 / 7)
    assert F.support_upper == 10.0


def test_two_point_quantile():
    F = D.DiscreteLoss([1.0, 2.0], [0.5, 0.5])
    assert F.quantile(0.5) == 1.0
    assert F.quantile(0.75) == 2.0
    assert F.sf_left(2.0) == pytest.approx(0.5)


@pytest.mark.parametrize("breaks,scales", [((1.0,), (3.0, 5.0)), ((1.0, 2.0), (1.0, 2.0, 1.5))])
def test_decreasing_cdf_is_refused(breaks, scales):
    # a longer scale after a join would make F drop there
    with pytest.raises(ValueError):
        D.PiecewiseExponential(D.PiecewiseExponentialSpec(breaks, scales))


def test_bad_inputs():
    with pytest.raises(ValueError):
        D.DiscreteLoss([-1.0, 2.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        D.DiscreteLoss([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        D.exponential(1.0, mass_at_zero=1.0)
    with pytest.raises(ValueError):
        D.build_empirical([])
    with pytest.raises(ValueError):
        D.exponential(1.0).cdf(-1.0)


def test_sampling_is_seeded():
    F = D.exponential(1.0)
    a, b = F.sample(7, 50_000), F.sample(7, 50_000)
    assert np.array_equal(a, b)
    assert abs(a.mean() - 1.0) < 5 / math.sqrt(50_000)


def test_claims_csv_header_and_config(tmp_path):
    path = tmp_path / "claims.csv"
    path.write_text("amount\n1.5\n\n2.5\n0\n")
    assert D.read_claims_csv(path) == [1.5, 2.5, 0.0]
    F = D.build_distribution({"kind": "empirical", "params": {"csv": str(path)}})
    assert F.mean == pytest.approx(4 / 3)
    with pytest.raises(ValueError):
        D.build_distribution({"kind": "lognormal"})


def test_retention_moments_of_stop_loss():
    from mhfree.retention import stop_loss

    d = 1.3
    m1, m2 = D.mean_and_second_moment(D.exponential(1.0), stop_loss(d))
    assert m1 == pytest.approx(1 - math.exp(-d), rel=1e-12)
    assert m2 == pytest.approx(2 * (1 - math.exp(-d) * (1 + d)), rel=1e-12)


def test_small_empirical_sets():
    F = D.build_empirical([0, 0, 1, 3])
    assert (F.mass_at_zero, F.mean, F.cdf(1.0)) == (0.5, 1.0, 0.75)
    assert D.build_empirical([2]).cdf(2.0) == 1.0
    draws = D.build_empirical([1, 2]).sample(3, 10_000)
    assert abs(np.mean(draws == 1.0) - 0.5) < 0.02


def test_stop_loss_moments_on_two_points():
    from mhfree.retention import stop_loss

    m1, m2 = D.mean_and_second_moment(D.DiscreteLoss([1.0, 3.0], [0.5, 0.5]), stop_loss(2.0))
    assert (m1, m2) == (pytest.approx(1.5, abs=1e-12), pytest.approx(2.5, abs=1e-12))


@pytest.mark.parametrize("F", [D.exponential(1.0), D.exponential(2.0, 0.2), D.layer_example_loss(),
                               D.build_empirical([0, 1, 1, 2, 2, 2, 10])], ids=["exp", "exp-atom", "layer", "emp"])
def test_quantile_is_the_generalized_inverse(F):
    p = np.linspace(0.001, 0.999, 999)
    q = np.asarray(F.quantile(p))
    assert np.all(np.asarray(F.cdf(q)) >= p - 1e-13)
    below = np.maximum(q * (1 - 1e-9) - 1e-12, 0.0)
    assert np.all((np.asarray(F.cdf(below)) < p) | (q == 0))


def test_segment_joins_of_layer_loss():
    F = D.layer_example_loss()
    assert F.cdf(3.0) == pytest.approx(1 - math.exp(-0.6), abs=1e-15)
    assert 1 - F.sf_left(6.0) == pytest.approx(1 - math.exp(-1.2), abs=1e-15)
    assert F.cdf(6.0) == pytest.approx(1 - math.exp(-2.0), abs=1e-15)


def test_cell_integrals_include_left_atom_only():
    # int over [1, 3) picks the atom at 1 and not the one at 3
    from mhfree.quadrature import survival_moments

    F = D.DiscreteLoss([1.0, 3.0, 4.0], [0.2, 0.3, 0.5])
    M = survival_moments(F.sf, F.sf_left, np.array([0.0, 1.0, 3.0]), F.breakpoints, kmax=1)
    assert M[0].tolist() == pytest.approx([0.0, 0.2, 0.8])
    # (z - z_j) weights: 0 at 1, then (3-3)*0.3 + (4-3)*0.5 in the tail cell
    assert M[1].tolist() == pytest.approx([0.0, 0.0, 0.5])
