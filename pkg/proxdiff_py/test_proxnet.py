#!/usr/bin/env python3
"""
Tests for the learned proximal network and Moreau score matching.
"""

import sys
import os
import json
import tempfile

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from proxdiff_py.core.errors import ConfigError, DomainError, ShapeError, TrainingError
from proxdiff_py.core.potentials import Ball, Interval
from proxdiff_py.core.proxnet import (
    EVAL_LAMBDAS, TrainConfig, forward, init_params, lambda_encoding, lipschitz_bound, load_params, matching_loss,
    prior_from_dict, prior_sampler_for, prox_error, save_params, train, train_config_from_dict,
)
from proxdiff_py.core.schedules import ve_schedule


def _random_params(dim=1, hidden=4, seed=0, skip=True):
    p = init_params(dim, hidden, seed, skip=skip)
    rng = np.random.default_rng(seed + 100)
    return p.with_flat(0.5 * rng.standard_normal(p.flat().size))


def test_forward():
    """Test network evaluation and its argument checks."""
    print("Testing forward...")

    p = init_params(2, hidden=8, seed=0, skip=False)
    x = np.random.default_rng(0).standard_normal((5, 2))
    assert np.array_equal(forward(p, x, 0.3), np.zeros((5, 2))), "Zero output layer must give zero"
    print("  ✓ Zero final layer gives zero output")

    p = init_params(2, hidden=8, seed=0, skip=True)
    assert np.array_equal(forward(p, x, 0.3), x), "Skip connection must give the identity at init"
    assert forward(p, x[0], 0.3).shape == (2,), "Single point must keep its shape"
    print("  ✓ Identity at init with skip")

    with pytest.raises(ShapeError):
        forward(p, np.zeros(3), 0.3)
    with pytest.raises(DomainError):
        forward(p, x, 0.0)
    print("  ✓ Invalid arguments rejected")

    print("✓ Forward tests passed\n")


def test_lipschitz_bound():
    """Finite-difference directional derivatives stay below the weight-norm product."""
    print("Testing Lipschitz bound...")

    p = _random_params(dim=2, hidden=6, seed=3)
    bound = lipschitz_bound(p)
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(200):
        x = rng.uniform(-3, 3, size=2)
        v = rng.standard_normal(2)
        v /= np.linalg.norm(v)
        lam = float(np.exp(rng.uniform(-8, 1)))
        deriv = np.linalg.norm(forward(p, x + h * v, lam) - forward(p, x - h * v, lam)) / (2 * h)
        assert deriv <= bound * (1 + 1e-6), f"Directional derivative {deriv} exceeds bound {bound}"
    print(f"  ✓ 200 directions below {bound:.3f}")

    print("✓ Lipschitz bound tests passed\n")


def test_matching_loss_values():
    """Test the loss at zero and at huge residuals."""
    print("Testing matching_loss values...")

    p = init_params(1, hidden=4, seed=0, skip=True)
    x0 = np.linspace(-1, 1, 7)[:, None]
    lam = np.full(7, 0.1)
    loss, _ = matching_loss(p, (x0, x0, lam), 1.0)
    assert loss == pytest.approx(1.0 - 1.0 / np.sqrt(2.0 * np.pi), abs=1e-12), f"Zero residual loss {loss}"
    print(f"  ✓ Zero residual: {loss:.5f}")

    loss, _ = matching_loss(p, (x0 + 100.0, x0, lam), 1.0)
    assert loss == pytest.approx(1.0, abs=1e-12), "Kernel must vanish for huge residuals"
    print("  ✓ Huge residual gives 1")

    with pytest.raises(DomainError):
        matching_loss(p, (x0, x0, lam), 0.0)
    with pytest.raises(ShapeError):
        matching_loss(p, (x0[:3], x0, lam), 1.0)
    print("  ✓ Invalid arguments rejected")

    print("✓ matching_loss value tests passed\n")


def test_matching_loss_gradient():
    """Analytic gradient against central finite differences."""
    print("Testing matching_loss gradient...")

    for dim, skip, zeta in [(1, True, 1.0), (2, False, 0.7), (2, True, 0.5)]:
        p = _random_params(dim=dim, hidden=4, seed=dim, skip=skip)
        rng = np.random.default_rng(10 + dim)
        x0 = rng.uniform(-1, 1, size=(8, dim))
        lam = np.exp(rng.uniform(-4, 0, size=8))
        xt = x0 + np.sqrt(lam)[:, None] * rng.standard_normal((8, dim))
        _, grad = matching_loss(p, (x0, xt, lam), zeta)
        theta = p.flat()
        fd = np.zeros_like(theta)
        h = 1e-5
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            up, _ = matching_loss(p.with_flat(theta + e), (x0, xt, lam), zeta)
            down, _ = matching_loss(p.with_flat(theta - e), (x0, xt, lam), zeta)
            fd[i] = (up - down) / (2 * h)
        rel = np.linalg.norm(fd - grad.flat()) / np.linalg.norm(fd)
        assert rel <= 1e-4, f"d={dim} skip={skip}: relative gradient error {rel}"
        print(f"  ✓ d={dim} skip={skip}: relative error {rel:.2e}")

    print("✓ Gradient tests passed\n")


def test_train_config():
    """Test annealing and config validation."""
    print("Testing TrainConfig...")

    cfg = TrainConfig(epochs=50)
    zetas = [cfg.zeta(e, 1) for e in range(50)]
    assert zetas[0] == 1.0, "Annealing must start at zeta_max"
    assert all(a >= b for a, b in zip(zetas, zetas[1:])), "zeta must be nonincreasing"
    assert zetas[-1] == pytest.approx(0.05), "zeta must end at 0.05 sqrt(d)"
    assert cfg.zeta(49, 4) == pytest.approx(0.1), "Floor scales with sqrt(d)"
    print("  ✓ Geometric annealing with floor")

    cfg = TrainConfig(epochs=10, steps_per_epoch=4, learning_rate=1e-2, lr_min=1e-4)
    rates = [cfg.lr(k) for k in range(cfg.total_steps)]
    assert cfg.total_steps == 40, "One step per minibatch"
    assert rates[0] == pytest.approx(1e-2) and rates[-1] == pytest.approx(1e-4), "Cosine must span lr to lr_min"
    assert all(a >= b for a, b in zip(rates, rates[1:])), "Learning rate must be nonincreasing"
    assert rates[20] == pytest.approx(0.5 * (1e-2 + 1e-4), rel=0.1), "Cosine midpoint near the mean"
    assert TrainConfig().optimizer == 'adam' and TrainConfig().skip is False, "Defaults changed"
    print("  ✓ Cosine learning rate")

    with pytest.raises(DomainError):
        TrainConfig(zeta_max=0.0)
    with pytest.raises(DomainError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(DomainError):
        TrainConfig(learning_rate=1e-3, lr_min=1e-2)
    with pytest.raises(DomainError):
        TrainConfig(beta2=1.0)
    with pytest.raises(DomainError):
        train_config_from_dict({'epochs': 10, 'optimizer': 'adamw'})
    assert train_config_from_dict({'epochs': 10, 'hidden': 16}).hidden == 16, "Known keys must pass"
    print("  ✓ Validation")

    print("✓ TrainConfig tests passed\n")


def test_prior_samplers():
    """Test prior draws for indicator priors."""
    print("Testing prior samplers...")

    rng = np.random.default_rng(0)
    draws = prior_sampler_for(Interval(-1, 1))(rng, 1000)
    assert draws.shape == (1000, 1) and np.all(np.abs(draws) <= 1.0), "Interval draws outside [-1, 1]"
    print("  ✓ Interval")

    g, sampler = prior_from_dict({'kind': 'ball', 'r': 1.0, 'dim': 2})
    draws = sampler(rng, 500)
    assert isinstance(g, Ball) and draws.shape == (500, 2), "Ball prior shape incorrect"
    assert np.all(np.linalg.norm(draws, axis=1) <= 1.0), "Ball draws outside the disk"
    print("  ✓ Ball")

    with pytest.raises(DomainError):
        prior_from_dict({'kind': 'zero'})
    print("  ✓ Improper prior rejected")

    print("✓ Prior sampler tests passed\n")


def test_train_zero_epochs():
    """Zero epochs returns the initialization."""
    print("Testing zero-epoch training...")

    s = ve_schedule("exp(10t-8)")
    cfg = TrainConfig(epochs=0, hidden=8, seed=5)
    p = train(cfg, prior_sampler_for(Interval(-1, 1)), s, dim=1)
    shift, scale = lambda_encoding(s)
    expected = init_params(1, 8, 5, skip=cfg.skip, lambda_shift=shift, lambda_scale=scale)
    assert np.array_equal(p.flat(), expected.flat()), "Parameters changed without training"
    assert (p.lambda_shift, p.lambda_scale) == (shift, scale), "Encoding must follow the schedule"
    print("  ✓ Initialization returned unchanged")

    print("✓ Zero-epoch tests passed\n")


def test_train_deterministic_and_improves():
    """Short training is reproducible and lowers the matching loss."""
    print("Testing short training...")

    s = ve_schedule("exp(10t-8)")
    cfg = TrainConfig(epochs=200, batch_size=128, hidden=16, seed=1, zeta_min=0.5, steps_per_epoch=2)
    sampler = prior_sampler_for(Interval(-1, 1))
    history = []
    a = train(cfg, sampler, s, dim=1, history=history)
    b = train(cfg, sampler, s, dim=1)
    assert np.array_equal(a.flat(), b.flat()), "Same seed must give identical parameters"
    print("  ✓ Bit-identical reruns")

    assert len(history) == 200, "History must have one entry per epoch"
    rng = np.random.default_rng(99)
    x0 = sampler(rng, 4000)
    lam = np.asarray(s.lam(rng.uniform(0, 1, size=4000)))
    xt = x0 + np.sqrt(lam)[:, None] * rng.standard_normal(x0.shape)
    shift, scale = lambda_encoding(s)
    start = init_params(1, 16, 1, skip=cfg.skip, lambda_shift=shift, lambda_scale=scale)
    before, _ = matching_loss(start, (x0, xt, lam), 0.5)
    after, _ = matching_loss(a, (x0, xt, lam), 0.5)
    assert after < before, f"Held-out loss did not decrease: {before} -> {after}"
    print(f"  ✓ Held-out loss {before:.4f} -> {after:.4f}")

    print("✓ Short training tests passed\n")


@pytest.mark.slow
def test_train_interval_prior_learns_clamp():
    """Default training on the interval prior learns the clamp."""
    print("Testing interval-prior training...")

    s = ve_schedule("exp(10t-8)")
    g = Interval(-1, 1)
    cfg = TrainConfig()
    p = train(cfg, prior_sampler_for(g), s, dim=1)
    shift, scale = lambda_encoding(s)
    untrained = prox_error(init_params(1, cfg.hidden, cfg.seed, skip=cfg.skip,
                                       lambda_shift=shift, lambda_scale=scale), g)
    trained = prox_error(p, g)
    assert trained < untrained, f"Clamp error did not improve: {untrained} -> {trained}"
    assert trained <= 0.05, f"Clamp error {trained} above 0.05"
    print(f"  ✓ Clamp error {untrained:.3f} -> {trained:.3f}")

    out = forward(p, np.array([1.5]), 0.01)
    assert abs(out[0] - 1.0) <= 0.05, f"forward(1.5, 0.01) = {out[0]}"
    print(f"  ✓ forward(1.5, 0.01) = {out[0]:.3f}")

    print("✓ Interval-prior training tests passed\n")


@pytest.mark.slow
def test_train_ball_prior_stays_near_disk():
    """Training on the unit disk keeps outputs within 1.05 of the origin."""
    print("Testing ball-prior training...")

    s = ve_schedule("exp(10t-8)")
    g = Ball(1.0, dim=2)
    p = train(TrainConfig(), prior_sampler_for(g), s, dim=2)
    axis = np.linspace(-3, 3, 41)
    xs = np.stack(np.meshgrid(axis, axis, indexing='ij'), axis=-1).reshape(-1, 2)
    xs = xs[np.linalg.norm(xs, axis=1) <= 3.0]
    for lam in EVAL_LAMBDAS:
        norms = np.linalg.norm(forward(p, xs, lam), axis=1)
        assert norms.max() <= 1.05, f"lambda={lam:.2e}: max |forward| = {norms.max():.3f}"
    print(f"  ✓ |forward(x, lambda)| <= 1.05 on {len(xs)} points with |x| <= 3")

    print("✓ Ball-prior training tests passed\n")


def test_training_divergence():
    """A diverging run raises TrainingError with the last stable parameters."""
    print("Testing training divergence...")

    s = ve_schedule("exp(10t-8)")
    cfg = TrainConfig(epochs=5, hidden=4, seed=0, learning_rate=1e308, optimizer='sgd', steps_per_epoch=1)
    with np.errstate(all='ignore'):
        with pytest.raises(TrainingError) as info:
            train(cfg, prior_sampler_for(Interval(-1, 1)), s, dim=1)
    assert info.value.epoch == 0, "Divergence must be caught on the first step"
    assert info.value.checkpoint is not None and info.value.checkpoint.is_finite(), "Checkpoint must be finite"
    print("  ✓ TrainingError with checkpoint")

    print("✓ Divergence tests passed\n")


def test_serialization():
    """Test the parameter file format."""
    print("Testing parameter files...")

    p = _random_params(dim=2, hidden=5, seed=7)
    with tempfile.TemporaryDirectory() as tmpdir:
        path = save_params(p, os.path.join(tmpdir, 'params.json'))
        with open(path) as f:
            data = json.load(f)
        assert data['format_version'] == 1 and data['activation'] == 'tanh' and data['skip'] is True, \
            "Header fields missing"
        assert len(data['layers']) == 3, "Three layers expected"
        q = load_params(path)
        assert np.array_equal(p.flat(), q.flat()), "Weights changed on reload"
        print("  ✓ Versioned JSON")

        bad = os.path.join(tmpdir, 'bad.json')
        with open(bad, 'w') as f:
            f.write('{"layers": [\n  {"W": ]}')
        with pytest.raises(ConfigError) as info:
            load_params(bad)
        assert ':2:' in str(info.value), f"Line number missing: {info.value}"

        data['format_version'] = 99
        with open(bad, 'w') as f:
            json.dump(data, f)
        with pytest.raises(ConfigError):
            load_params(bad)
        print("  ✓ Malformed and unsupported files rejected")

    print("✓ Serialization tests passed\n")


def main():
    """Run all tests."""
    print("=" * 60)
    print("Proximal Network Tests")
    print("=" * 60 + "\n")

    try:
        test_forward()
        test_lipschitz_bound()
        test_matching_loss_values()
        test_matching_loss_gradient()
        test_train_config()
        test_prior_samplers()
        test_train_zero_epochs()
        test_train_deterministic_and_improves()
        test_training_divergence()
        test_serialization()

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
