"""Adam with bias correction, the dual-moment feature-extractor update, and
the training schedules (exponential lr decay, saturating adversarial weight)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-7


class NanGradientError(FloatingPointError):
    """A gradient block went non-finite; carries the block name."""


def _check_finite(name: str, g: np.ndarray):
    if not np.isfinite(g).all():
        raise NanGradientError(f"non-finite gradient in block '{name}'")


@dataclass
class AdamState:
    """Single-moment-pair Adam state for one parameter partition."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def named(self):
        for n in self.m:
            yield f"m/{n}", self.m[n]
        for n in self.v:
            yield f"v/{n}", self.v[n]


@dataclass
class FeatureAdamState:
    """Two moment pairs for the feature extractor: one fed by the label-loss
    gradients, one by the (reversed) domain-loss gradients."""

    m_label: dict[str, np.ndarray] = field(default_factory=dict)
    v_label: dict[str, np.ndarray] = field(default_factory=dict)
    m_domain: dict[str, np.ndarray] = field(default_factory=dict)
    v_domain: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def named(self):
        for prefix, d in (("m_label", self.m_label), ("v_label", self.v_label),
                          ("m_domain", self.m_domain),
                          ("v_domain", self.v_domain)):
            for n in d:
                yield f"{prefix}/{n}", d[n]


def _update_moments(m: dict, v: dict, name: str, g: np.ndarray):
    if name not in m:
        m[name] = np.zeros_like(g)
        v[name] = np.zeros_like(g)
    m[name] = BETA1 * m[name] + (1.0 - BETA1) * g
    v[name] = BETA2 * v[name] + (1.0 - BETA2) * (g * g)
    return m[name], v[name]


def adam_step(partition, grads: dict[str, np.ndarray],
              state: AdamState, lr: float):
    """Standard bias-corrected Adam step, in place, on (name, Tensor) pairs."""
    partition = list(partition)
    state.step += 1
    c1 = 1.0 - BETA1 ** state.step
    c2 = 1.0 - BETA2 ** state.step
    for name, p in partition:
        g = grads[name]
        _check_finite(name, g)
        m, v = _update_moments(state.m, state.v, name, g)
        # ratio first, then lr: keeps the arithmetic identical to the
        # dual-moment feature update so the degenerate cases match bitwise
        p.values -= lr * ((m / c1) / (np.sqrt(v / c2) + EPS))
    return partition


def adam_step_feature(partition, label_grads: dict[str, np.ndarray],
                      domain_grads_reversed: dict[str, np.ndarray],
                      lam: float, state: FeatureAdamState, lr: float):
    """Feature-extractor step with separate moment pairs per loss path.

    `domain_grads_reversed` is the reversal-layer output (minus the raw
    domain-loss gradient), so adding `lam` times its bias-corrected ratio
    moves the features toward confusing the domain head. Each moment pair is
    fed by its unscaled gradient stream; `lam` only weighs the update.
    """
    partition = list(partition)
    state.step += 1
    c1 = 1.0 - BETA1 ** state.step
    c2 = 1.0 - BETA2 ** state.step
    lam = float(lam)
    for name, p in partition:
        gl = label_grads[name]
        gd = domain_grads_reversed[name]
        _check_finite(name, gl)
        _check_finite(name, gd)
        ml, vl = _update_moments(state.m_label, state.v_label, name, gl)
        md, vd = _update_moments(state.m_domain, state.v_domain, name, gd)
        delta = (ml / c1) / (np.sqrt(vl / c2) + EPS)
        if lam != 0.0:
            delta = delta + lam * ((md / c1) / (np.sqrt(vd / c2) + EPS))
        p.values -= lr * delta
    return partition


@dataclass
class Schedules:
    base_lr: float = 0.001
    lr_decay: float = 0.99
    lambda_max: float = 0.2
    gamma: float = 10.0
    epochs: int = 250

    def __post_init__(self):
        # epochs 0 is allowed: training degenerates to returning the
        # initialization with an empty log
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")


def lambda_at(progress: float, lambda_max: float = 0.2,
              gamma: float = 10.0) -> float:
    """Adversarial weight at normalized training progress in [0, 1]:
    lambda_max * (2 / (1 + exp(-gamma * p)) - 1)."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress {progress} outside [0, 1]")
    return lambda_max * (2.0 / (1.0 + math.exp(-gamma * progress)) - 1.0)


def lr_at(epoch: int, base_lr: float = 0.001, decay: float = 0.99) -> float:
    """Exponentially decayed learning rate: base_lr * decay ** epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * decay ** epoch
