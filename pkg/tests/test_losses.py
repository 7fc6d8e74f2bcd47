"""Closed-form values, algebraic identities, and gradient checks for the
loss module. Expected numbers are hand-derived or computed by independent
formulas, never by the code under test."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from patchgan_segkit.errors import ConfigurationError, ShapeError
from patchgan_segkit.losses import (
    ConfusionSums,
    TverskyParams,
    confusion_sums,
    discriminator_loss,
    discriminator_loss_logits,
    focal_tversky_loss,
    generator_loss,
    generator_loss_logits,
    tversky_index,
    tversky_index_from_sums,
)

LN2 = math.log(2.0)  # BCE of a constant-0.5 map, either target


def exact_sums_pair() -> tuple[torch.Tensor, torch.Tensor]:
    # tp = 3 (both one), fn = 1 (pred 0, truth 1), fp = 1 (pred 1, truth 0)
    pred = torch.tensor([1.0, 1.0, 1.0, 0.0, 1.0], dtype=torch.float64)
    truth = torch.tensor([1.0, 1.0, 1.0, 1.0, 0.0], dtype=torch.float64)
    return pred, truth


def test_confusion_sums_exact():
    pred, truth = exact_sums_pair()
    sums = confusion_sums(pred, truth)
    assert sums == ConfusionSums(tp=3.0, fn=1.0, fp=1.0)


def test_tversky_index_closed_form():
    # 3 / (3 + 0.7*1 + 0.3*1) = 0.75, negligible smoothing
    pred, truth = exact_sums_pair()
    params = TverskyParams(alpha=0.7, beta=0.3, epsilon=1e-30)
    assert float(tversky_index(pred, truth, params)) == pytest.approx(0.75, abs=1e-9)


def test_focal_tversky_closed_form():
    # (1 - 0.75)^0.75 = 0.25^0.75 = 2^-1.5
    pred, truth = exact_sums_pair()
    params = TverskyParams(alpha=0.7, beta=0.3, gamma=0.75, epsilon=1e-30)
    expected = 2.0 ** -1.5
    assert float(focal_tversky_loss(pred, truth, params)) == pytest.approx(
        expected, abs=1e-9
    )


def test_perfect_prediction():
    truth = torch.tensor([[0.0, 1.0], [1.0, 1.0]], dtype=torch.float64)
    params = TverskyParams()
    assert float(tversky_index(truth, truth, params)) == pytest.approx(1.0, abs=1e-6)
    assert float(focal_tversky_loss(truth, truth, params)) == pytest.approx(
        0.0, abs=1e-5
    )


def test_dice_equivalence_alpha_beta_half():
    # At alpha = beta = 0.5 the index equals Dice; the oracle computes Dice
    # from raw area sums, not from the tp/fn/fp decomposition.
    params = TverskyParams(alpha=0.5, beta=0.5)
    rng = np.random.default_rng(7)
    for _ in range(1000):
        pred = torch.from_numpy(rng.uniform(0, 1, size=(6, 6)))
        truth = torch.from_numpy((rng.uniform(0, 1, size=(6, 6)) > 0.5).astype(float))
        ti = float(tversky_index(pred, truth, params))
        inter = float((pred * truth).sum())
        dice = (2 * inter + 2 * params.epsilon) / (
            float(pred.sum()) + float(truth.sum()) + 2 * params.epsilon
        )
        assert abs(ti - dice) < 1e-9


def test_monotonic_in_fp_and_fn():
    # Brute force over a grid of confusion sums.
    params = TverskyParams(alpha=0.7, beta=0.3)
    for tp in (0.5, 2.0, 10.0):
        for fn in (0.0, 1.0, 4.0):
            fps = np.linspace(0.0, 5.0, 11)
            tis = [float(tversky_index_from_sums(tp, fn, fp, params)) for fp in fps]
            assert all(a > b for a, b in zip(tis, tis[1:]))
        for fp in (0.0, 1.0, 4.0):
            fns = np.linspace(0.0, 5.0, 11)
            tis = [float(tversky_index_from_sums(tp, fn, fp, params)) for fn in fns]
            assert all(a > b for a, b in zip(tis, tis[1:]))


def test_gamma_one_reduces_to_plain_loss():
    rng = np.random.default_rng(3)
    pred = torch.from_numpy(rng.uniform(0, 1, size=(4, 4)))
    truth = torch.from_numpy((rng.uniform(0, 1, size=(4, 4)) > 0.6).astype(float))
    params = TverskyParams(gamma=1.0)
    ftl = float(focal_tversky_loss(pred, truth, params))
    tl = 1.0 - float(tversky_index(pred, truth, params))
    assert ftl == pytest.approx(tl, abs=1e-12)


@settings(deadline=None, max_examples=30)
@given(seed=st.integers(0, 10**6))
def test_ranges_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    pred = torch.from_numpy(rng.uniform(0, 1, size=64))
    truth = torch.from_numpy((rng.uniform(0, 1, size=64) > 0.5).astype(float))
    params = TverskyParams()
    ti = float(tversky_index(pred, truth, params))
    ftl = float(focal_tversky_loss(pred, truth, params))
    assert 0.0 < ti <= 1.0
    assert 0.0 <= ftl < 1.0
    perm = rng.permutation(64)
    ti_p = float(tversky_index(pred[perm], truth[perm], params))
    ftl_p = float(focal_tversky_loss(pred[perm], truth[perm], params))
    assert ti_p == pytest.approx(ti, rel=1e-12)
    assert ftl_p == pytest.approx(ftl, rel=1e-12)


def test_per_sample_reduction_differs_from_global():
    pred = torch.tensor([[[0.9, 0.1]], [[0.2, 0.8]]], dtype=torch.float64)
    truth = torch.tensor([[[1.0, 0.0]], [[0.0, 1.0]]], dtype=torch.float64)
    params = TverskyParams()
    global_ti = float(tversky_index(pred, truth, params))
    per_sample = float(tversky_index(pred, truth, params, per_sample=True))
    # identical per-sample structure, so they agree up to the smoothing term
    # (epsilon enters once per sample instead of once per batch)
    assert per_sample == pytest.approx(global_ti, abs=1e-5)
    # and on an asymmetric batch they are both defined and finite
    pred2 = torch.tensor([[[1.0, 1.0]], [[0.0, 0.0]]], dtype=torch.float64)
    truth2 = torch.tensor([[[1.0, 1.0]], [[1.0, 1.0]]], dtype=torch.float64)
    assert 0.0 < float(tversky_index(pred2, truth2, params, per_sample=True)) <= 1.0


def test_ftl_gradient_matches_finite_differences():
    # Central differences at 1e-4 in float64; cases with a nearly perfect
    # fit (TL < 1e-3) are excluded, where the focal exponent's slope blows up.
    params = TverskyParams()
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(100):
        pred0 = rng.uniform(0.02, 0.98, size=(8, 8))
        truth = torch.from_numpy((rng.uniform(0, 1, size=(8, 8)) > 0.5).astype(float))
        pred = torch.from_numpy(pred0).requires_grad_(True)
        loss = focal_tversky_loss(pred, truth, params)
        tl = 1.0 - float(tversky_index(pred.detach(), truth, params))
        if tl < 1e-3:
            continue
        loss.backward()
        i, j = rng.integers(0, 8, size=2)
        h = 1e-4
        for sign, store in ((1, "hi"), (-1, "lo")):
            shifted = pred0.copy()
            shifted[i, j] += sign * h
            val = float(
                focal_tversky_loss(torch.from_numpy(shifted), truth, params)
            )
            if store == "hi":
                hi = val
            else:
                lo = val
        fd = (hi - lo) / (2 * h)
        an = float(pred.grad[i, j])
        assert fd == pytest.approx(an, rel=1e-4, abs=1e-10)
        checked += 1
    assert checked >= 50


def test_discriminator_loss_half_is_ln2():
    maps = torch.full((2, 1, 3, 3), 0.5)
    assert float(discriminator_loss(maps, maps)) == pytest.approx(LN2, abs=1e-6)
    logits = torch.zeros((2, 1, 3, 3))
    assert float(discriminator_loss_logits(logits, logits)) == pytest.approx(
        LN2, abs=1e-6
    )


def test_discriminator_loss_perfect_limit():
    for delta in (1e-3, 1e-5):
        d_real = torch.full((4,), 1.0 - delta, dtype=torch.float64)
        d_fake = torch.full((4,), delta, dtype=torch.float64)
        assert float(discriminator_loss(d_real, d_fake)) == pytest.approx(
            -math.log(1.0 - delta), rel=1e-6
        )


def test_logit_form_is_finite_at_saturation():
    # sigmoid(+-100) rounds to exactly 1/0 in float32; the logit path stays finite.
    real = torch.full((3, 3), 100.0)
    fake = torch.full((3, 3), -100.0)
    assert torch.isfinite(discriminator_loss_logits(fake, real)).all()
    loss = float(discriminator_loss_logits(fake, real))
    assert loss == pytest.approx(100.0, rel=1e-6)


def test_logit_and_probability_paths_agree():
    rng = np.random.default_rng(5)
    logits = torch.from_numpy(rng.uniform(-4, 4, size=(2, 1, 5, 5)))
    probs = torch.sigmoid(logits)
    a = float(discriminator_loss(probs, probs))
    b = float(discriminator_loss_logits(logits, logits))
    assert a == pytest.approx(b, rel=1e-9)


def test_generator_loss_composition():
    rng = np.random.default_rng(9)
    pred = torch.from_numpy(rng.uniform(0, 1, size=(2, 1, 4, 4)))
    truth = torch.from_numpy((rng.uniform(0, 1, size=(2, 1, 4, 4)) > 0.5).astype(float))
    d_fake = torch.full((2, 1, 2, 2), 0.5, dtype=torch.float64)

    pure_seg = TverskyParams(lambda_adv=0.0, lambda_seg=1.0)
    total, parts = generator_loss(pred, truth, d_fake, pure_seg)
    assert float(total) == pytest.approx(
        float(focal_tversky_loss(pred, truth, pure_seg)), rel=1e-12
    )

    both = TverskyParams(lambda_adv=1.0, lambda_seg=1.0)
    total, parts = generator_loss(truth, truth, d_fake, both)
    assert float(parts["seg"]) == pytest.approx(0.0, abs=1e-5)
    assert float(total) == pytest.approx(LN2, abs=1e-6)

    pure_adv = TverskyParams(lambda_adv=1.0, lambda_seg=0.0)
    total, _ = generator_loss(pred, truth, d_fake, pure_adv)
    assert float(total) == pytest.approx(LN2, abs=1e-6)

    logits = torch.zeros((2, 1, 2, 2), dtype=torch.float64)
    total_l, _ = generator_loss_logits(pred, truth, logits, both)
    total_p, _ = generator_loss(pred, truth, d_fake, both)
    assert float(total_l) == pytest.approx(float(total_p), rel=1e-9)


def test_shape_and_value_errors():
    params = TverskyParams()
    with pytest.raises(ShapeError):
        tversky_index(torch.zeros(3), torch.zeros(4), params)
    with pytest.raises(ValueError):
        tversky_index(torch.full((3,), 1.5), torch.ones(3), params)
    with pytest.raises(ValueError):
        tversky_index(torch.full((3,), 0.5), torch.full((3,), 0.5), params)
    with pytest.raises(ShapeError):
        discriminator_loss(torch.full((2, 2), 0.5), torch.full((3, 3), 0.5))


def test_params_validation():
    TverskyParams().validate()
    with pytest.raises(ConfigurationError):
        TverskyParams(alpha=-0.1).validate()
    with pytest.raises(ConfigurationError):
        TverskyParams(alpha=0.0, beta=0.0).validate()
    with pytest.raises(ConfigurationError):
        TverskyParams(gamma=0.0).validate()
    with pytest.raises(ConfigurationError):
        TverskyParams(epsilon=0.0).validate()
    with pytest.raises(ConfigurationError):
        TverskyParams(lambda_adv=-1.0).validate()
