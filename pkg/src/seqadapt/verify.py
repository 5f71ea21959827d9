"""Finite-difference verification of every differentiable op and of the
fully assembled adversarial pipeline."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import dann as dn
from . import encoder as enc
from .autodiff import Tensor

TOLERANCE = 1e-4


def _away_from_zero(rng, shape, gap=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x) * gap + x, x)


def op_checks(seed: int = 0) -> dict[str, float]:
    """Max relative FD error per op, probed at a random non-kink point."""
    rng = np.random.default_rng(seed)
    errs: dict[str, float] = {}

    a = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((4, 2)))
    errs["matmul_lhs"] = ad.grad_check(
        lambda t: ad.sum_all(ad.matmul(t, b)), a)
    errs["matmul_rhs"] = ad.grad_check(
        lambda t: ad.sum_all(ad.matmul(a, t)), b)

    xr = Tensor(_away_from_zero(rng, (3, 5)))
    cr = Tensor(rng.standard_normal((3, 5)))
    errs["relu"] = ad.grad_check(
        lambda t: ad.sum_all(ad.mul(ad.relu(t), cr)), xr)

    x = Tensor(rng.standard_normal((4, 6)))
    c = Tensor(rng.standard_normal((4, 6)))
    errs["softmax_rows"] = ad.grad_check(
        lambda t: ad.sum_all(ad.mul(ad.softmax_rows(t), c)), x)

    gain = Tensor(rng.standard_normal(6) + 1.0)
    bias = Tensor(rng.standard_normal(6))
    errs["layer_norm_x"] = ad.grad_check(
        lambda t: ad.sum_all(ad.mul(ad.layer_norm(t, gain, bias), c)), x)
    errs["layer_norm_gain"] = ad.grad_check(
        lambda t: ad.sum_all(ad.mul(ad.layer_norm(x, t, bias), c)), gain)
    errs["layer_norm_bias"] = ad.grad_check(
        lambda t: ad.sum_all(ad.mul(ad.layer_norm(x, gain, t), c)), bias)

    wl = Tensor(rng.standard_normal((6, 3)))
    bl = Tensor(rng.standard_normal(3))
    errs["linear_w"] = ad.grad_check(
        lambda t: ad.sum_all(ad.linear(x, t, bl)), wl)
    errs["linear_b"] = ad.grad_check(
        lambda t: ad.sum_all(ad.linear(x, wl, t)), bl)

    logits = Tensor(rng.standard_normal((5, 4)))
    targets = rng.integers(0, 4, size=5)
    errs["cross_entropy"] = ad.grad_check(
        lambda t: ad.cross_entropy(t, targets), logits)

    spread = Tensor(rng.permutation(24).reshape(6, 4) / 4.0)
    cmax = Tensor(rng.standard_normal(4))
    errs["max_over_axis"] = ad.grad_check(
        lambda t: ad.sum_all(ad.mul(ad.max_over_axis(t, axis=-2)[0], cmax)),
        spread)

    q = Tensor(rng.standard_normal((5, 4)))
    k = Tensor(rng.standard_normal((5, 4)))
    v = Tensor(rng.standard_normal((5, 4)))
    errs["attention"] = ad.grad_check(
        lambda t: ad.sum_all(enc.attention(t, k, v)), q)

    layer = enc.init_encoder_params(
        enc.EncoderConfig(timesteps=5, bands=3, d_model=4, n_layers=1,
                          n_heads=2, d_inner=4),
        rng).layers[0]
    seq = Tensor(rng.standard_normal((5, 4)))
    errs["multi_head"] = ad.grad_check(
        lambda t: ad.sum_all(enc.multi_head(t, layer, 2)), seq)
    return errs


KINK_MARGIN = 1e-3


def _kink_margin(config, params, x) -> float:
    """Distance of the forward pass from the nearest ReLU or max-pool kink:
    the smallest |pre-activation| and smallest top-two pooling gap."""
    margin = np.inf
    h = enc.embed(Tensor(x), params.feature, config)
    for lp in params.feature.layers:
        attended = enc.multi_head(h, lp, config.n_heads)
        h = ad.layer_norm(ad.add(h, attended), lp.norm1_gain, lp.norm1_bias)
        pre = ad.linear(h, lp.w_ff1, lp.b_ff1)
        margin = min(margin, float(np.abs(pre.values).min()))
        ff = ad.linear(ad.relu(pre), lp.w_ff2, lp.b_ff2)
        h = ad.layer_norm(ad.add(h, ff), lp.norm2_gain, lp.norm2_bias)
    ordered = np.sort(h.values, axis=-2)
    margin = min(margin, float(
        (ordered[..., -1, :] - ordered[..., -2, :]).min()))
    token = enc.pool(h)
    for head in (params.label, params.domain):
        z = ad.layer_norm(token, head.norm_gain, head.norm_bias)
        pre = ad.linear(z, head.w1, head.b1)
        margin = min(margin, float(np.abs(pre.values).min()))
    return margin


def _tiny_setup(seed: int):
    config = enc.EncoderConfig(timesteps=4, bands=2, d_model=8, n_layers=2,
                               n_heads=2, d_inner=8)
    head = dn.HeadConfig(hidden=8, classes=3)
    rng = np.random.default_rng(seed)
    params = dn.init_dann_params(config, head, rng, with_domain_head=True)
    ys = np.array([0, 1, 2])
    # redraw inputs that land too close to a ReLU or pooling kink, so the
    # finite-difference probe never straddles one
    for _ in range(100):
        xs = rng.standard_normal((3, 4, 2))
        xt = rng.standard_normal((2, 4, 2))
        if min(_kink_margin(config, params, xs),
               _kink_margin(config, params, xt)) > KINK_MARGIN:
            break
    return config, params, xs, ys, xt


def full_model_check(seed: int = 0, lam: float = 0.3,
                     h: float = 1e-5) -> float:
    """FD the combined adversarial loss through every parameter of a small
    assembled model; returns the max relative error."""
    config, params, xs, ys, xt = _tiny_setup(seed)
    _, _, grads = dn.total_loss(xs, ys, xt, params, lam, config)
    scaled = grads.feature_domain_scaled()
    analytic = {}
    for name, _ in params.feature.named():
        analytic[f"feature/{name}"] = grads.feature_label[name] + scaled[name]
    for name, _ in params.label.named():
        analytic[f"label_head/{name}"] = grads.label[name]
    for name, _ in params.domain.named():
        analytic[f"domain_head/{name}"] = -lam * grads.domain[name]

    def loss_value() -> float:
        tok_s = enc.pool(enc.encode(Tensor(xs), params.feature, config))
        tok_t = enc.pool(enc.encode(Tensor(xt), params.feature, config))
        l_y = ad.cross_entropy(dn.head_logits(tok_s, params.label), ys)
        d_s = ad.cross_entropy(
            dn.head_logits(tok_s, params.domain),
            np.full(len(xs), dn.SOURCE_DOMAIN, dtype=np.int64))
        d_t = ad.cross_entropy(
            dn.head_logits(tok_t, params.domain),
            np.full(len(xt), dn.TARGET_DOMAIN, dtype=np.int64))
        return l_y.item() - lam * (d_s.item() + d_t.item())

    worst = 0.0
    for name, p in params.named():
        a = analytic[name].reshape(-1)
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(a[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a[i] - numeric) / denom)
    return worst


def run_suite(n_seeds: int = 3) -> list[tuple[str, float, bool]]:
    """Worst FD error per op over seeds, plus the full-model check."""
    worst: dict[str, float] = {}
    for seed in range(n_seeds):
        for name, err in op_checks(seed).items():
            worst[name] = max(worst.get(name, 0.0), err)
    results = [(name, err, err < TOLERANCE)
               for name, err in sorted(worst.items())]
    model_err = max(full_model_check(seed) for seed in range(n_seeds))
    results.append(("full_model", model_err, model_err < TOLERANCE))
    return results
