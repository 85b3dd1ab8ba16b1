"""Quick oracle and invariant battery behind the ``selftest``/``gradcheck`` commands."""

from __future__ import annotations

import numpy as np

from ..encoder import EncoderConfig, encode, init_encoder
from ..guidance import compound_loss, image_loss, patch_labels, patch_loss, training_loss
from ..head import (
    HeadConfig,
    aggregate,
    attend,
    classify_patches,
    forward_features,
    group_probability,
    init_head,
    removal_delta,
    removal_delta_closed_form,
)
from ..ndtensor import Tensor, avg_pool_patches, bilinear_upsample, conv2d, grad_check, max_pool2d


def _rand(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def gradcheck_battery(instances: int = 5, eps: float = 1e-5, seed: int = 0) -> list:
    """Finite-difference checks for every differentiable pipeline stage.

    Returns (name, max_relative_error) pairs; all should sit below 1e-4.
    """
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for _ in range(instances):
        x = _rand(rng, (1, 2, 5, 6))
        w = _rand(rng, (3, 2, 3, 3))
        b = _rand(rng, (3,))
        worst = max(worst, grad_check(
            lambda x, w, b: conv2d(x, w, b, stride=(2, 1), padding=(1, 1)).sum(), [x, w, b], eps))
    results.append(("conv2d", worst))

    worst = 0.0
    for _ in range(instances):
        u = _rand(rng, (4, 5, 3))
        worst = max(worst, grad_check(
            lambda u: (avg_pool_patches(u, (2, 2), (1, 2)) * 0.7).sum(), [u], eps))
    results.append(("avg_pool_patches", worst))

    worst = 0.0
    for _ in range(instances):
        m = _rand(rng, (3, 4))
        worst = max(worst, grad_check(
            lambda m: (bilinear_upsample(m, 2) ** 2).sum(), [m], eps))
    results.append(("bilinear_upsample", worst))

    worst = 0.0
    for _ in range(instances):
        u = _rand(rng, (3, 4, 5))
        o = _rand(rng, (5,))
        a = _rand(rng, (5, 3))
        bm = _rand(rng, (5, 3))
        c = _rand(rng, (3,))

        def head_loss(u, o, a, bm, c):
            p = avg_pool_patches(u, (2, 2), (1, 1))
            return aggregate(classify_patches(p, o), attend(p, a, bm, c), 1.0)

        worst = max(worst, grad_check(head_loss, [u, o, a, bm, c], eps))
    results.append(("head", worst))

    worst = 0.0
    for _ in range(instances):
        u = _rand(rng, (4, 4, 5))
        o = _rand(rng, (5,))
        a = _rand(rng, (5, 3))
        bm = _rand(rng, (5, 3))
        c = _rand(rng, (3,))
        mask = (rng.random((8, 8)) < 0.2).astype(np.uint8)
        mask[2, 3] = 1
        hcfg = HeadConfig(kernel=(1, 1), stride=(1, 1), k_min=1.0)
        labels = patch_labels(mask, (4, 4), hcfg.kernel, hcfg.stride)

        # The scale coefficients are constants by definition, so the
        # finite difference must hold them at their base-point values.
        base = training_loss(
            forward_features(u, {"o": o, "A": a, "B": bm, "c": c}, hcfg), 1, mask, hcfg)

        def loss_fn(u, o, a, bm, c, _alpha=base.alpha):
            pred = forward_features(u, {"o": o, "A": a, "B": bm, "c": c}, hcfg)
            l_img = image_loss(pred.y_hat, 1)
            lp = patch_loss(pred.y_tilde, labels)
            return compound_loss([("image", l_img), ("patch", lp)], alpha_override=_alpha).tensor

        assert abs(loss_fn(u, o, a, bm, c).item() - base.total) < 1e-9
        worst = max(worst, grad_check(loss_fn, [u, o, a, bm, c], eps))
    results.append(("training_loss", worst))
    return results


def run_selftest(log) -> bool:
    """Fast oracle/invariant suite; returns True when everything passes."""
    ok = True
    rng = np.random.default_rng(0)

    for name, err in gradcheck_battery(instances=3):
        passed = err < 1e-4
        ok &= passed
        log(f"gradcheck {name}: max_rel_err={err:.2e} {'PASS' if passed else 'FAIL'}")

    fails = 0
    for _ in range(200):
        k = int(rng.integers(1, 7))
        yt = rng.random(k)
        w = rng.random(k)
        k_min = float(rng.choice([0.0, 0.5, 1.0, 2.0]))
        got = float(aggregate(Tensor(yt), Tensor(w), k_min).data)
        want = float((w * yt).sum() / max(w.sum(), k_min)) if max(w.sum(), k_min) > 0 else 0.0
        if abs(got - want) > 1e-6:
            fails += 1
        i = int(rng.integers(k))
        keep = np.arange(k) != i
        denom_all = max(w.sum(), k_min)
        denom_rest = max(w[keep].sum(), k_min)
        want_d = ((w[keep] * yt[keep]).sum() / denom_rest if denom_rest > 0 else 0.0) - (
            (w * yt).sum() / denom_all if denom_all > 0 else 0.0)
        if abs(removal_delta(yt, w, i, k_min) - want_d) > 1e-6:
            fails += 1
    ok &= fails == 0
    log(f"aggregation oracle (200 random instances): {fails} mismatches {'PASS' if fails == 0 else 'FAIL'}")

    fails = 0
    for _ in range(200):
        k = int(rng.integers(1, 7))
        k_min = float(rng.uniform(0.5, 3.0))
        w = rng.random(k)
        w *= min(1.0, k_min / (w.sum() + 1e-12)) * rng.random()
        yt = rng.random(k)
        i = int(rng.integers(k))
        if abs(removal_delta(yt, w, i, k_min) - removal_delta_closed_form(yt, w, i, k_min)) > 1e-6:
            fails += 1
    ok &= fails == 0
    log(f"faithfulness regime (sum w <= k_min): {fails} mismatches {'PASS' if fails == 0 else 'FAIL'}")

    two_patch = abs(removal_delta([1.0, 1.0], [1.0, 1.0], 0, 1.0)) == 0.0
    ok &= two_patch
    log(f"two-positive-patch removal invariance: {'PASS' if two_patch else 'FAIL'}")

    pair_ok = True
    for _ in range(50):
        l1, l2 = rng.uniform(0.01, 2.0, 2)
        rep = compound_loss([("image", Tensor(np.float64(l1))), ("patch", Tensor(np.float64(l2)))])
        if abs(rep.total - 2 * max(l1, l2)) > 1e-6 or min(rep.alpha) != 1.0:
            pair_ok = False
    ok &= pair_ok
    log(f"compound loss scaling (total == 2 max): {'PASS' if pair_ok else 'FAIL'}")

    mp_ok = True
    for _ in range(50):
        mask = (rng.random((16, 24)) < 0.1).astype(np.uint8)
        got = patch_labels(mask, (4, 6), (2, 2), (1, 1))
        down = mask.reshape(4, 4, 6, 4).max(axis=(1, 3))
        want = max_pool2d(down, (2, 2), (1, 1))
        if not np.array_equal(got, want):
            mp_ok = False
    ok &= mp_ok
    log(f"patch label pipeline vs brute force: {'PASS' if mp_ok else 'FAIL'}")

    enc_cfg = EncoderConfig(stage_channels=(4, 6), stage_strides=(2, 2), input_channels=1)
    params = init_encoder(enc_cfg, seed=0)
    x = Tensor(rng.standard_normal((1, 8, 12)).astype(np.float32))
    u = encode(x, params, enc_cfg)
    shape_ok = u.data.shape == (6, 2, 3)
    ok &= shape_ok
    log(f"encoder stride arithmetic: {'PASS' if shape_ok else 'FAIL'}")

    return ok
