"""Domain-adversarial superstructure: gradient reversal, the two MLP heads,
and the combined adversarial loss with per-partition gradient delivery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from .autodiff import Tensor


@dataclass
class HeadConfig:
    hidden: int = 128
    classes: int = 9

    def __post_init__(self):
        if self.hidden < 1 or self.classes < 1:
            raise ValueError("head widths must be >= 1")


@dataclass
class HeadParams:
    norm_gain: Tensor
    norm_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self):
        for fname in ("norm_gain", "norm_bias", "w1", "b1", "w2", "b2"):
            yield fname, getattr(self, fname)


@dataclass
class DannParams:
    """The three parameter partitions. `domain` is None for a plain
    classifier; the partitions never share tensors."""

    feature: enc.EncoderParams
    label: HeadParams
    domain: HeadParams | None = None

    def named(self):
        for n, p in self.feature.named():
            yield f"feature/{n}", p
        for n, p in self.label.named():
            yield f"label_head/{n}", p
        if self.domain is not None:
            for n, p in self.domain.named():
                yield f"domain_head/{n}", p


def init_head_params(d_model: int, config: HeadConfig,
                     rng: np.random.Generator) -> HeadParams:
    return HeadParams(
        norm_gain=Tensor(np.ones(d_model)),
        norm_bias=Tensor(np.zeros(d_model)),
        w1=enc.uniform_fan_in(rng, d_model, (d_model, config.hidden)),
        b1=Tensor(np.zeros(config.hidden)),
        w2=enc.uniform_fan_in(rng, config.hidden,
                               (config.hidden, config.classes)),
        b2=Tensor(np.zeros(config.classes)),
    )


def init_dann_params(encoder_config: enc.EncoderConfig,
                     label_config: HeadConfig,
                     rng: np.random.Generator,
                     with_domain_head: bool = True) -> DannParams:
    """Draw feature, label and (optionally) domain parameters, in that order,
    so the feature/label initialization is identical with or without the
    domain branch."""
    feature = enc.init_encoder_params(encoder_config, rng)
    label = init_head_params(encoder_config.d_model, label_config, rng)
    domain = None
    if with_domain_head:
        domain = init_head_params(
            encoder_config.d_model,
            HeadConfig(hidden=label_config.hidden, classes=2), rng)
    return DannParams(feature=feature, label=label, domain=domain)


# ---------------------------------------------------------------------------
# gradient reversal


def grl_backward(upstream: np.ndarray) -> np.ndarray:
    """Exact negation of the upstream gradient."""
    return -upstream


def grl(x: Tensor) -> Tensor:
    """Identity forward (shares the input buffer, so bitwise), negation
    backward."""
    out = Tensor.__new__(Tensor)
    out.values = x.values
    out.grad = None
    out.node_id = next(ad._node_ids)
    return ad._record(out, (x,), lambda g: (grl_backward(g),))


# ---------------------------------------------------------------------------
# heads


def head_logits(token: Tensor, head: HeadParams) -> Tensor:
    """norm -> linear -> ReLU -> linear, on a (d,) token or (batch, d) stack."""
    h = ad.layer_norm(token, head.norm_gain, head.norm_bias)
    h = ad.relu(ad.linear(h, head.w1, head.b1))
    return ad.linear(h, head.w2, head.b2)


def predict_label(token: Tensor, head: HeadParams) -> Tensor:
    """Class probabilities for a pooled token."""
    return ad.softmax_rows(head_logits(token, head))


def predict_domain(token: Tensor, head: HeadParams) -> Tensor:
    """Source/target probabilities for a pooled token (binary head)."""
    if head.w2.shape[-1] != 2:
        raise ValueError(f"domain head must output 2 classes, has "
                         f"{head.w2.shape[-1]}")
    return ad.softmax_rows(head_logits(token, head))


# ---------------------------------------------------------------------------
# combined loss

SOURCE_DOMAIN = 0
TARGET_DOMAIN = 1


@dataclass
class DannGrads:
    """Per-partition gradients from one source/target step.

    `feature_domain` is the reversal-layer output, i.e. minus the gradient of
    the domain term with respect to the feature extractor; scaling it by the
    current adversarial weight gives the delivered adversarial component, so
    plain descent on `feature_label + lam * feature_domain` (and on `label` /
    `domain`) descends the label loss while ascending the domain loss.
    """

    feature_label: dict[str, np.ndarray]
    feature_domain: dict[str, np.ndarray]
    label: dict[str, np.ndarray]
    domain: dict[str, np.ndarray]
    lam: float

    def feature_domain_scaled(self) -> dict[str, np.ndarray]:
        return {n: self.lam * g for n, g in self.feature_domain.items()}


@dataclass
class LossParts:
    label_loss: float
    domain_loss_source: float
    domain_loss_target: float

    @property
    def domain_term(self) -> float:
        return self.domain_loss_source + self.domain_loss_target


def total_loss(source_x: np.ndarray, source_y: np.ndarray,
               target_x: np.ndarray, params: DannParams,
               lam: float, config: enc.EncoderConfig
               ) -> tuple[float, LossParts, DannGrads]:
    """One adversarial step's loss and gradients.

    Returns the scalar `label_loss - lam * domain_term`, its components, and
    the gradient partitions described on `DannGrads`.
    """
    if len(source_x) == 0 or len(target_x) == 0:
        raise ValueError("empty batch")
    if source_y is None or len(source_y) != len(source_x):
        raise ValueError("source batch must carry one class label per sample")
    if params.domain is None:
        raise ValueError("params carry no domain head")

    with ad.Graph() as g:
        tok_src = enc.pool(enc.encode(Tensor(source_x), params.feature, config))
        tok_tgt = enc.pool(enc.encode(Tensor(target_x), params.feature, config))
        label_loss = ad.cross_entropy(head_logits(tok_src, params.label),
                                      source_y)
        dom_src = ad.cross_entropy(
            head_logits(grl(tok_src), params.domain),
            np.full(len(source_x), SOURCE_DOMAIN, dtype=np.int64))
        dom_tgt = ad.cross_entropy(
            head_logits(grl(tok_tgt), params.domain),
            np.full(len(target_x), TARGET_DOMAIN, dtype=np.int64))
        domain_term = ad.add(dom_src, dom_tgt)

    label_grads = g.backward(label_loss)
    domain_grads = g.backward(domain_term)

    def collect(grads, named):
        out = {}
        for name, p in named:
            got = grads.get(p)
            out[name] = got if got is not None else np.zeros_like(p.values)
        return out

    grads = DannGrads(
        feature_label=collect(label_grads, params.feature.named()),
        feature_domain=collect(domain_grads, params.feature.named()),
        label=collect(label_grads, params.label.named()),
        domain=collect(domain_grads, params.domain.named()),
        lam=float(lam),
    )
    parts = LossParts(label_loss=label_loss.item(),
                      domain_loss_source=dom_src.item(),
                      domain_loss_target=dom_tgt.item())
    loss = parts.label_loss - float(lam) * parts.domain_term
    return loss, parts, grads
