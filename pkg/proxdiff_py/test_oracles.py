#!/usr/bin/env python3
"""
Tests for the brute-force reference computations.
"""

import sys
import os

import numpy as np
import pytest
from scipy import stats

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from proxdiff_py.core.errors import DomainError, OracleError
from proxdiff_py.core.oracles import (
    bound_checks, composite_minimizer, empirical_w1, exact_prox_numeric, gaussian_w1_1d, grid_prox,
    histogram, kde_mode, metrics, posterior_moments_quadrature, score_table_1d, true_score_quadrature,
)
from proxdiff_py.core.potentials import (
    Composite, Interval, L1, Quadratic, moreau_score, quadratic_smooth, zero_smooth,
)
from proxdiff_py.core.schedules import ve_schedule, vp_schedule


def truncated_normal():
    return Composite(quadratic_smooth([[0.1]], [0.0]), Interval(-1, 1), beta=10.0)


def test_prox_references():
    """Grid search and proximal gradient against the closed form clip(x / (1 + lam))."""
    print("Testing prox references...")

    c = truncated_normal()
    for x, lam in [(0.6, 0.5), (3.0, 0.5), (-0.2, 2.0)]:
        expected = np.clip(x / (1.0 + lam), -1.0, 1.0)
        numeric = exact_prox_numeric(c, lam, np.array([x]))
        assert abs(numeric[0] - expected) <= 1e-9, f"Proximal gradient {numeric} vs {expected}"
        grid = grid_prox(c, lam, np.array([x]))
        assert abs(grid[0] - expected) <= 1e-4, f"Grid prox {grid} vs {expected}"
    print("  ✓ Proximal gradient and grid search")

    c = Composite(quadratic_smooth([[1.0]], [-2.0]), Interval(-1, 1), beta=1.0)
    assert np.allclose(composite_minimizer(c), [1.0], atol=1e-8), "Constrained minimizer must sit at the boundary"
    print("  ✓ Constrained minimizer")

    big = Composite(zero_smooth(3), Interval(-1, 1, dim=3), beta=0.0)
    with pytest.raises(OracleError):
        grid_prox(big, 0.1, np.zeros(3))
    print("  ✓ d > 2 rejected")

    print("✓ Prox reference tests passed\n")


def test_gaussian_scores():
    """Quadrature scores on Gaussian targets."""
    print("Testing quadrature scores...")

    s = ve_schedule("exp(10t-8)")
    c = Composite(zero_smooth(1), Quadratic([[1.0]]), beta=0.0)
    for t in (0.2, 0.5, 0.9):
        x = np.array([1.3])
        score = true_score_quadrature(c, s, t, x)
        assert np.allclose(score, -x / (1.0 + s.lam(t)), atol=1e-8), f"Gaussian score at t={t}: {score}"
    print("  ✓ -x / (1 + lambda)")

    flat = ve_schedule(1.0)
    mean, mode = posterior_moments_quadrature(c, flat, 0.5, 2.0)
    assert mean == pytest.approx(1.0, abs=1e-8) and mode == pytest.approx(1.0, abs=1e-6), \
        f"Posterior mean {mean} and mode {mode} must equal 1"
    print("  ✓ Posterior mean = mode = 1 at x_t = 2, lambda = 1")

    with pytest.raises(OracleError):
        true_score_quadrature(c, vp_schedule(), 0.0, np.array([0.5]))
    print("  ✓ lambda(t) = 0 rejected")

    print("✓ Quadrature score tests passed\n")


def test_quadratic_equivalence():
    """For quadratic targets the exact Moreau score is the true score."""
    print("Testing quadratic equivalence...")

    s = ve_schedule("exp(10t-8)")
    targets = [
        Composite(quadratic_smooth([[1.0]], [0.5]), Quadratic([[0.5]], [-0.2]), beta=2.0),
        Composite(zero_smooth(1), Quadratic([[3.0]]), beta=0.0),
        Composite(quadratic_smooth([[1.0, 0.3], [0.3, 2.0]]), Quadratic([[0.5, 0.0], [0.0, 0.5]]), beta=1.0),
    ]
    rng = np.random.default_rng(0)
    for c in targets:
        for t in (0.3, 0.45, 0.6, 0.75, 0.9):
            x = rng.uniform(-2, 2, size=c.dim)
            gap = np.max(np.abs(moreau_score(c, s, t, x, source='joint_exact') - true_score_quadrature(c, s, t, x)))
            assert gap <= 1e-6, f"d={c.dim} t={t}: gap {gap}"
        print(f"  ✓ d={c.dim}")

    print("✓ Quadratic equivalence tests passed\n")


def test_truncated_scores():
    """Score symmetry and the shared-box table on the truncated normal."""
    print("Testing truncated normal scores...")

    s = ve_schedule("exp(10t-8)")
    c = truncated_normal()
    right = true_score_quadrature(c, s, 0.5, np.array([0.7]))
    left = true_score_quadrature(c, s, 0.5, np.array([-0.7]))
    assert abs(right[0] + left[0]) <= 1e-10, "Score must be odd for a symmetric target"
    print("  ✓ Odd symmetry")

    grid = np.linspace(-1.5, 1.5, 13)
    table = score_table_1d(c, s, 0.5, grid)
    pointwise = np.array([true_score_quadrature(c, s, 0.5, np.array([x]))[0] for x in grid])
    assert np.max(np.abs(table - pointwise)) <= 1e-6, "Score table disagrees with pointwise quadrature"
    print("  ✓ score_table_1d")

    # pi_t(x_t) is far below the float range here; the shifted ratio is not
    flat = ve_schedule(0.5)
    stiff = Composite(quadratic_smooth([[1.0]], [0.0]), Interval(-1, 1), beta=100.0)
    for x in (76.5, -76.5):
        score = true_score_quadrature(stiff, flat, 0.5, np.array([x]))
        mean = x + 0.5 * score[0]
        assert np.isfinite(score[0]), f"Score at x_t={x} not finite"
        assert 0.95 <= abs(mean) <= 1.0 and np.sign(mean) == np.sign(x), f"Posterior mean {mean} at x_t={x}"
    print("  ✓ Far-field scores at x_t = +-76.5")

    print("✓ Truncated normal score tests passed\n")


def test_wasserstein():
    """Test W1 examples and axioms."""
    print("Testing Wasserstein-1...")

    assert empirical_w1([0.0, 1.0, 2.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0), "Shift by one"
    a = np.random.default_rng(0).standard_normal(500)
    b = np.random.default_rng(1).standard_normal(500) + 0.3
    assert empirical_w1(a, a) == 0.0, "Identity"
    assert empirical_w1(a, b) == pytest.approx(empirical_w1(b, a)), "Symmetry"
    c = np.random.default_rng(2).uniform(-1, 1, 500)
    assert empirical_w1(a, b) <= empirical_w1(a, c) + empirical_w1(c, b) + 1e-12, "Triangle inequality"
    print("  ✓ Axioms")

    assert empirical_w1(a, b[:300]) == pytest.approx(stats.wasserstein_distance(a, b[:300])), "Unequal sizes"
    quantiles = stats.norm.ppf((np.arange(1000) + 0.5) / 1000)
    assert empirical_w1(quantiles, stats.norm()) <= 5e-3, "Exact quantiles must be close to their law"
    print("  ✓ Against a distribution")

    assert gaussian_w1_1d(0.0, 1.0, 3.0, 1.0) == pytest.approx(3.0), "Equal variances give the mean shift"
    assert gaussian_w1_1d(0.0, 1.0, 0.0, 2.0) == pytest.approx(np.sqrt(2.0 / np.pi)), "Scale change"
    print("  ✓ Gaussian closed form")

    with pytest.raises(DomainError):
        empirical_w1([], [1.0])
    print("  ✓ Empty samples rejected")

    print("✓ Wasserstein tests passed\n")


def test_metrics():
    """Test feasibility and optimality gap."""
    print("Testing metrics...")

    c = truncated_normal()
    samples = np.array([[0.5], [2.0], [-0.5], [1.0]])
    result = metrics(samples, c, optimum=np.array([0.0]))
    assert result['feasibility'] == 0.75, "Boundary counts as inside"
    assert result['optimality_gap'] == pytest.approx(0.05 * 5.5 / 4), "Mean f minus f(x*) incorrect"
    print("  ✓ Feasibility and gap")

    result = metrics(samples, Composite(quadratic_smooth([[1.0]], [-2.0]), Interval(-1, 1)))
    assert result['optimum'] == pytest.approx([1.0]), "Optimum computed when omitted"
    print("  ✓ Optimum computed on demand")

    hist = histogram(np.linspace(-1, 1, 101), bins=10, lo=-1.0, hi=1.0)
    assert sum(hist['counts']) == 101 and len(hist['edges']) == 11, "Histogram shape incorrect"
    mode = kde_mode(np.random.default_rng(0).standard_normal(5000))
    assert abs(mode) <= 0.15, f"KDE mode of N(0, 1) at {mode}"
    print("  ✓ Histogram and KDE mode")

    print("✓ Metrics tests passed\n")


def test_bound_checks():
    """Measured score gaps stay within the analytic bounds."""
    print("Testing bound_checks...")

    s = ve_schedule("exp(10t-8)")
    c = Composite(quadratic_smooth([[1.0]]), Interval(-1, 1), beta=4.0)
    sweep = [(0.3, 0.5), (0.5, -1.5), (0.8, 2.0), (0.9, 0.0)]
    report = bound_checks(c, s, sweep)
    assert report['passed'], f"Bounds violated: {[e for e in report['entries'] if not e['passed']]}"
    assert report['min_margin'] >= 0.0 and len(report['entries']) == 4, "Margins must be nonnegative"
    assert report['notes'] == [], "Compact strongly convex case needs no notes"
    print("  ✓ Compact strongly convex case")

    laplace = Composite(zero_smooth(1), L1(1.0), beta=0.0)
    report = bound_checks(laplace, s, [(0.5, 2.0)])
    assert report['passed'], "Laplace gap within sqrt(2d / lambda)"
    assert any('unbounded' in note for note in report['notes']), "Unbounded domain must be noted"
    assert any('strongly convex' in note for note in report['notes']), "m = 0 must be noted"
    print("  ✓ Unbounded case noted")

    print("✓ bound_checks tests passed\n")


def main():
    """Run all tests."""
    print("=" * 60)
    print("Oracle Tests")
    print("=" * 60 + "\n")

    try:
        test_prox_references()
        test_gaussian_scores()
        test_quadratic_equivalence()
        test_truncated_scores()
        test_wasserstein()
        test_metrics()
        test_bound_checks()

        print("=" * 60)
        print("✓ ALL TESTS PASSED")
        print("=" * 60)
        return 0

    except AssertionError as e:
        print(f"\n✗ TEST FAILED: {e}")
        return 1
    except Exception as e:
        print(f"\n✗ ERROR: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == '__main__':
    sys.exit(main())
