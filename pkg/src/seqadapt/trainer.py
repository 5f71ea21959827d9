"""Training loops for the plain classifier and the adversarial source/target
pair, plus evaluation with feature extraction."""

from __future__ import annotations

import contextlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import dann as dn
from . import data as dt
from . import encoder as enc
from . import metrics as mx
from . import optim as op
from .autodiff import Tensor

DETERMINISTIC_ENV = "SEQADAPT_DETERMINISTIC"


class TrainingAborted(RuntimeError):
    """Raised on non-finite loss/gradients; carries the last good checkpoint
    path when one was written."""

    def __init__(self, message: str, checkpoint_path: str | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class TrainConfig:
    mode: str = "baseline"                 # "baseline" | "dann"
    batch_size: int = 256
    seed: int = 0
    encoder: enc.EncoderConfig = field(default_factory=enc.EncoderConfig)
    head: dn.HeadConfig = field(default_factory=dn.HeadConfig)
    schedules: op.Schedules = field(default_factory=op.Schedules)
    source_path: str | None = None
    target_path: str | None = None
    out_dir: str | None = None
    deterministic: bool = True

    def __post_init__(self):
        if self.mode not in ("baseline", "dann"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def epochs(self) -> int:
        return self.schedules.epochs


@dataclass
class EpochRecord:
    epoch: int
    lam: float
    lr: float
    loss_y: float
    loss_d: float
    acc_train: float


RUNLOG_HEADER = "epoch,lambda,lr,loss_y,loss_d,acc_train"


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [RUNLOG_HEADER]
        for r in self.records:
            lines.append(f"{r.epoch},{r.lam!r},{r.lr!r},{r.loss_y!r},"
                         f"{r.loss_d!r},{r.acc_train!r}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


@dataclass
class Model:
    """Trained artifact: architecture, parameters, normalization statistics."""

    encoder_config: enc.EncoderConfig
    params: dn.DannParams
    norm_mean: np.ndarray
    norm_std: np.ndarray

    def save(self, path, optim_blocks=None):
        ckpt.save_model(path, self.encoder_config, self.params,
                        self.norm_mean, self.norm_std, optim_blocks)

    @classmethod
    def load(cls, path) -> "Model":
        config, params, mean, std, _ = ckpt.load_model(path)
        return cls(config, params, mean, std)


def _deterministic_limits(enabled: bool):
    """Single-threaded BLAS when the deterministic toggle is on."""
    if not enabled or os.environ.get(DETERMINISTIC_ENV, "1") == "0":
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=1)
    except ImportError:
        return contextlib.nullcontext()


def _check_dataset(config: TrainConfig, dataset: dt.Dataset, role: str):
    e = config.encoder
    if (dataset.timesteps, dataset.bands) != (e.timesteps, e.bands):
        raise ValueError(
            f"{role} dataset is (t={dataset.timesteps}, b={dataset.bands}) "
            f"but the encoder expects (t={e.timesteps}, b={e.bands})")
    if role == "source" and dataset.n_classes != config.head.classes:
        raise ValueError(
            f"source dataset has {dataset.n_classes} classes but the label "
            f"head is configured for {config.head.classes}")


def _forward_logits(x: np.ndarray, params: dn.DannParams,
                    config: enc.EncoderConfig) -> np.ndarray:
    tok = enc.pool(enc.encode(Tensor(x), params.feature, config))
    return dn.head_logits(tok, params.label).values


def _train_accuracy(dataset: dt.Dataset, model: Model,
                    batch_size: int) -> float:
    correct = 0
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        x = dt.normalize(dataset.values[start:stop], model.norm_mean,
                         model.norm_std)
        logits = _forward_logits(x, model.params, model.encoder_config)
        correct += int((logits.argmax(axis=1)
                        == dataset.labels[start:stop]).sum())
    return correct / len(dataset)


def _snapshot(params: dn.DannParams) -> dict[str, np.ndarray]:
    return {name: t.values.copy() for name, t in params.named()}


def _restore(params: dn.DannParams, snap: dict[str, np.ndarray]):
    for name, t in params.named():
        t.values = snap[name].copy()


def _abort(config: TrainConfig, model: Model, snap, reason: str):
    path = None
    if config.out_dir:
        _restore(model.params, snap)
        path = os.path.join(config.out_dir, "checkpoint-last-good.tdpt")
        model.save(path)
    raise TrainingAborted(
        f"training aborted: {reason}"
        + (f" (last good checkpoint: {path})" if path else ""), path)


def _source_batches(order: np.ndarray, batch_size: int):
    return [order[s:s + batch_size] for s in range(0, len(order), batch_size)]


def train_baseline(config: TrainConfig,
                   source: dt.Dataset | None = None
                   ) -> tuple[Model, RunLog]:
    """Train the feature extractor and label head with cross-entropy only.

    No validation split or model selection: the final-epoch parameters are
    the result. Deterministic given the seed.
    """
    if source is None:
        if not config.source_path:
            raise ValueError("no source dataset given")
        source = dt.load(config.source_path)
    _check_dataset(config, source, "source")
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    if (source.labels == dt.UNLABELED).any():
        raise ValueError("source dataset has unlabeled samples")

    init_ss, src_ss, _ = np.random.SeedSequence(config.seed).spawn(3)
    params = dn.init_dann_params(config.encoder, config.head,
                                 np.random.default_rng(init_ss),
                                 with_domain_head=False)
    mean, std = dt.compute_norm_stats(source)
    model = Model(config.encoder, params, mean, std)
    feat_state, label_state = op.AdamState(), op.AdamState()
    rng_src = np.random.default_rng(src_ss)
    log = RunLog()
    snap = _snapshot(params)

    with _deterministic_limits(config.deterministic):
        for epoch in range(config.epochs):
            lr = op.lr_at(epoch, config.schedules.base_lr,
                          config.schedules.lr_decay)
            order = rng_src.permutation(len(source))
            losses = []
            for idx in _source_batches(order, config.batch_size):
                x = dt.normalize(source.values[idx], mean, std)
                y = source.labels[idx].astype(np.int64)
                with ad.Graph() as g:
                    tok = enc.pool(enc.encode(Tensor(x), params.feature,
                                              config.encoder))
                    loss = ad.cross_entropy(
                        dn.head_logits(tok, params.label), y)
                if not math.isfinite(loss.item()):
                    _abort(config, model, snap, f"non-finite loss at epoch "
                                                f"{epoch}")
                grads = g.backward(loss)
                by_name = {n: grads.get(p, np.zeros_like(p.values))
                           for n, p in params.feature.named()}
                label_by_name = {n: grads.get(p, np.zeros_like(p.values))
                                 for n, p in params.label.named()}
                try:
                    op.adam_step(params.feature.named(), by_name,
                                 feat_state, lr)
                    op.adam_step(params.label.named(), label_by_name,
                                 label_state, lr)
                except op.NanGradientError as e:
                    _abort(config, model, snap, str(e))
                losses.append(loss.item())
            acc = _train_accuracy(source, model, config.batch_size)
            log.records.append(EpochRecord(
                epoch=epoch, lam=0.0, lr=lr,
                loss_y=float(np.mean(losses)), loss_d=0.0, acc_train=acc))
            snap = _snapshot(params)

    _write_outputs(config, model, log,
                   _baseline_optim_blocks(feat_state, label_state))
    return model, log


def _baseline_optim_blocks(feat_state, label_state):
    blocks = {}
    for prefix, state in (("feature", feat_state), ("label", label_state)):
        for n, arr in state.named():
            blocks[f"{prefix}/{n}"] = arr
        blocks[f"{prefix}/step"] = np.asarray(float(state.step))
    return blocks


def _dann_optim_blocks(feat_state, label_state, domain_state):
    blocks = {}
    for n, arr in feat_state.named():
        blocks[f"feature/{n}"] = arr
    blocks["feature/step"] = np.asarray(float(feat_state.step))
    for prefix, state in (("label", label_state), ("domain", domain_state)):
        for n, arr in state.named():
            blocks[f"{prefix}/{n}"] = arr
        blocks[f"{prefix}/step"] = np.asarray(float(state.step))
    return blocks


def train_dann(config: TrainConfig,
               source: dt.Dataset | None = None,
               target: dt.Dataset | None = None) -> tuple[Model, RunLog]:
    """Adversarial training on a source/target pair.

    Each step draws one labeled source batch and one unlabeled target batch;
    the adversarial weight follows the saturating schedule over normalized
    epoch progress. Target class labels, if present, are ignored.
    """
    if source is None:
        if not config.source_path:
            raise ValueError("no source dataset given")
        source = dt.load(config.source_path)
    if target is None:
        if not config.target_path:
            raise ValueError("adversarial mode needs a target dataset")
        target = dt.load(config.target_path)
    _check_dataset(config, source, "source")
    _check_dataset(config, target, "target")
    if len(source) == 0 or len(target) == 0:
        raise ValueError("empty dataset")
    if (source.labels == dt.UNLABELED).any():
        raise ValueError("source dataset has unlabeled samples")

    init_ss, src_ss, tgt_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = dn.init_dann_params(config.encoder, config.head,
                                 np.random.default_rng(init_ss),
                                 with_domain_head=True)
    mean, std = dt.compute_norm_stats(source)
    model = Model(config.encoder, params, mean, std)
    feat_state = op.FeatureAdamState()
    label_state, domain_state = op.AdamState(), op.AdamState()
    rng_src = np.random.default_rng(src_ss)
    rng_tgt = np.random.default_rng(tgt_ss)
    log = RunLog()
    snap = _snapshot(params)
    sched = config.schedules

    with _deterministic_limits(config.deterministic):
        for epoch in range(config.epochs):
            lr = op.lr_at(epoch, sched.base_lr, sched.lr_decay)
            lam = op.lambda_at(epoch / config.epochs, sched.lambda_max,
                               sched.gamma)
            src_batches = _paired_batches(rng_src, len(source),
                                          len(target), config.batch_size)
            tgt_batches = _paired_batches(rng_tgt, len(target),
                                          len(source), config.batch_size)
            losses_y, losses_d = [], []
            for src_idx, tgt_idx in zip(src_batches, tgt_batches):
                xs = dt.normalize(source.values[src_idx], mean, std)
                ys = source.labels[src_idx].astype(np.int64)
                xt = dt.normalize(target.values[tgt_idx], mean, std)
                try:
                    loss, parts, grads = dn.total_loss(
                        xs, ys, xt, params, lam, config.encoder)
                except FloatingPointError as e:
                    _abort(config, model, snap, f"epoch {epoch}: {e}")
                if not math.isfinite(loss):
                    _abort(config, model, snap,
                           f"non-finite loss at epoch {epoch}")
                try:
                    op.adam_step_feature(params.feature.named(),
                                         grads.feature_label,
                                         grads.feature_domain, lam,
                                         feat_state, lr)
                    op.adam_step(params.label.named(), grads.label,
                                 label_state, lr)
                    op.adam_step(params.domain.named(), grads.domain,
                                 domain_state, lr)
                except op.NanGradientError as e:
                    _abort(config, model, snap, str(e))
                losses_y.append(parts.label_loss)
                losses_d.append(parts.domain_term)
            acc = _train_accuracy(source, model, config.batch_size)
            log.records.append(EpochRecord(
                epoch=epoch, lam=lam, lr=lr,
                loss_y=float(np.mean(losses_y)),
                loss_d=float(np.mean(losses_d)), acc_train=acc))
            snap = _snapshot(params)

    _write_outputs(config, model, log,
                   _dann_optim_blocks(feat_state, label_state, domain_state))
    return model, log


def _paired_batches(rng: np.random.Generator, n_own: int, n_other: int,
                    batch_size: int) -> list[np.ndarray]:
    """Shuffled index batches; the step count is set by the larger dataset
    and the smaller one cycles its shuffled order to keep up."""
    order = rng.permutation(n_own)
    steps = math.ceil(max(n_own, n_other) / batch_size)
    if n_own >= n_other:
        return [order[s * batch_size:(s + 1) * batch_size]
                for s in range(steps)]
    tiled = np.resize(order, steps * batch_size)
    return [tiled[s * batch_size:(s + 1) * batch_size] for s in range(steps)]


def _write_outputs(config: TrainConfig, model: Model, log: RunLog,
                   optim_blocks):
    if not config.out_dir:
        return
    os.makedirs(config.out_dir, exist_ok=True)
    model.save(os.path.join(config.out_dir, "checkpoint.tdpt"), optim_blocks)
    log.save(os.path.join(config.out_dir, "runlog.csv"))


def train(config: TrainConfig, source=None, target=None):
    if config.mode == "dann":
        return train_dann(config, source, target)
    return train_baseline(config, source)


# ---------------------------------------------------------------------------
# evaluation


def feature_subset_indices(n: int, feature_subset: int,
                           subset_seed: int) -> np.ndarray:
    """Sorted seeded sample indices for feature extraction, capped at n."""
    subset = min(feature_subset, n)
    if subset <= 0:
        return np.zeros(0, dtype=np.int64)
    pick = np.random.default_rng(subset_seed).choice(n, size=subset,
                                                     replace=False)
    return np.sort(pick)


def evaluate(model: Model, dataset: dt.Dataset, feature_subset: int = 10000,
             subset_seed: int = 0, batch_size: int = 256
             ) -> tuple[np.ndarray, mx.MetricsRecord, np.ndarray]:
    """Run inference over `dataset`.

    Returns the confusion matrix, the metrics record, and pooled feature
    vectors for a seeded subset of at most `feature_subset` samples (the
    indices are `feature_subset_indices`).
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if (dataset.labels == dt.UNLABELED).any():
        raise ValueError("evaluation dataset has unlabeled samples")
    e = model.encoder_config
    if (dataset.timesteps, dataset.bands) != (e.timesteps, e.bands):
        raise ValueError(
            f"dataset is (t={dataset.timesteps}, b={dataset.bands}) but the "
            f"model expects (t={e.timesteps}, b={e.bands})")

    n = len(dataset)
    indices = feature_subset_indices(n, feature_subset, subset_seed)
    subset = len(indices)
    wanted = np.zeros(n, dtype=bool)
    wanted[indices] = True

    predictions = np.empty(n, dtype=np.int64)
    features = np.empty((subset, e.d_model))
    fpos = 0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        x = dt.normalize(dataset.values[start:stop], model.norm_mean,
                         model.norm_std)
        tok = enc.pool(enc.encode(Tensor(x), model.params.feature, e))
        logits = dn.head_logits(tok, model.params.label).values
        predictions[start:stop] = logits.argmax(axis=1)
        mask = wanted[start:stop]
        k = int(mask.sum())
        if k:
            features[fpos:fpos + k] = tok.values[mask]
            fpos += k

    cm = mx.confusion_matrix(dataset.labels.astype(np.int64), predictions,
                             dataset.n_classes)
    return cm, mx.compute_all(cm), features
