"""Training loop, rare-class sampling, loss composition, and metrics.

Per iteration (1-based), in this order: the source mixtures are refreshed
from the student's source embeddings, the source contrastive term fires once
past the distillation warm-up, priors update for both domains, the teacher
pseudo-labels the target batch, the target bank and prototypes refresh, the
target contrastive term fires (again past warm-up), and finally one combined
AdamW step over CE + contrastive gradients followed by the teacher EMA.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import Dataset
from .errors import ContractViolation, NotReady
from .gmm_bank import FifoBuffer, GmmBank
from .losses import (
    confidence_weight,
    proto_contrastive_loss_batch,
    weighted_cross_entropy,
)
from .model import AdamState, AdaptModel, ModelConfig, TeacherStudent, optimizer_step
from .numerics import softmax_stable
from .proto_align import (
    TargetPrototypes,
    batch_class_mean,
    select_prototypes_batch,
    update_target_bank,
    update_target_prototypes,
)
from .shift_priors import PriorTracker, assign_pseudo_labels_batch

DIAGNOSTIC_COLUMNS = (
    "iteration",
    "ce_source",
    "ce_target",
    "proto_source",
    "proto_target",
    "total",
    "confidence_weight",
    "proto_source_skipped",
    "proto_target_skipped",
    "ratio_clamped",
    "step_rejected",
)


@dataclass
class IterationRecord:
    iteration: int
    ce_source: float
    ce_target: float
    proto_source: float
    proto_target: float
    total: float
    confidence_weight: float
    proto_source_skipped: bool
    proto_target_skipped: bool
    ratio_clamped: bool
    step_rejected: bool

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.iteration),
                repr(float(self.ce_source)),
                repr(float(self.ce_target)),
                repr(float(self.proto_source)),
                repr(float(self.proto_target)),
                repr(float(self.total)),
                repr(float(self.confidence_weight)),
                str(int(self.proto_source_skipped)),
                str(int(self.proto_target_skipped)),
                str(int(self.ratio_clamped)),
                str(int(self.step_rejected)),
            ]
        )


def records_to_csv(records: list[IterationRecord]) -> str:
    lines = [",".join(DIAGNOSTIC_COLUMNS)]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"


class RcsSampler:
    """Rare-class sampling: P(c) proportional to exp((1 - freq_c)/T), then a
    uniform instance of the drawn class."""

    def __init__(self, labels: np.ndarray, n_classes: int, temperature: float):
        labels = np.asarray(labels)
        self.class_indices = [np.flatnonzero(labels == c) for c in range(n_classes)]
        empty = [c for c, idx in enumerate(self.class_indices) if idx.size == 0]
        if empty:
            raise ContractViolation(f"source classes {empty} have no samples")
        freq = np.bincount(labels, minlength=n_classes) / labels.size
        self.class_probs = softmax_stable((1.0 - freq) / temperature)
        self.n_classes = n_classes

    def sample(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        classes = rng.choice(self.n_classes, size=batch, p=self.class_probs)
        out = np.empty(batch, dtype=np.int64)
        for c in range(self.n_classes):
            mask = classes == c
            k = int(mask.sum())
            if k:
                pool = self.class_indices[c]
                out[mask] = pool[rng.integers(0, pool.size, size=k)]
        return out


def rcs_sample(
    dataset: Dataset, batch: int, temperature: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One-shot convenience wrapper returning (inputs, labels)."""
    sampler = RcsSampler(dataset.labels, dataset.n_classes, temperature)
    idx = sampler.sample(rng, batch)
    return dataset.inputs[idx], dataset.labels[idx]


@dataclass
class TrainState:
    cfg: TrainConfig
    n_classes: int
    ts: TeacherStudent
    opt: AdamState
    bank: GmmBank
    priors: PriorTracker
    target_bank: FifoBuffer
    protos: TargetPrototypes
    rng_rcs: np.random.Generator
    rng_target: np.random.Generator
    iteration: int = 0
    last_trace: list[str] = field(default_factory=list)

    @property
    def student(self) -> AdaptModel:
        return self.ts.student

    @property
    def teacher(self) -> AdaptModel:
        return self.ts.teacher


def init_state(cfg: TrainConfig, n_classes: int, input_dim: int) -> TrainState:
    cfg.validate(n_classes)
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    model_cfg = ModelConfig(
        input_dim=input_dim,
        hidden_dims=cfg.encoder_hidden,
        proj_hidden=cfg.proj_hidden,
        proj_dim=cfg.proj_dim,
        n_classes=n_classes,
    )
    ts = TeacherStudent.create(model_cfg, seed=seeds[0], ema_beta=cfg.teacher_beta)
    return TrainState(
        cfg=cfg,
        n_classes=n_classes,
        ts=ts,
        opt=AdamState.zeros_like(ts.student.params),
        bank=GmmBank(
            n_classes=n_classes,
            n_components=cfg.n_components,
            dim=cfg.proj_dim,
            momentum=cfg.gmm_momentum,
            sinkhorn_iters=cfg.sinkhorn_iters,
            variance_floor=cfg.variance_floor,
            memory_capacity=cfg.source_memory_capacity,
            seed=seeds[1],
        ),
        priors=PriorTracker.uniform(n_classes, alpha=cfg.alpha),
        target_bank=FifoBuffer(n_classes, cfg.proj_dim, cfg.target_bank_capacity),
        protos=TargetPrototypes.empty(n_classes, cfg.proj_dim),
        rng_rcs=np.random.default_rng(seeds[2]),
        rng_target=np.random.default_rng(seeds[3]),
    )


def _learning_rate(cfg: TrainConfig, iteration: int) -> float:
    if cfg.warmup_iters > 0:
        return cfg.lr * min(1.0, iteration / cfg.warmup_iters)
    return cfg.lr


def train_iteration(
    state: TrainState, src_x: np.ndarray, src_y: np.ndarray, tgt_x: np.ndarray
) -> IterationRecord:
    """Run one full iteration; returns the diagnostics record."""
    cfg = state.cfg
    it = state.iteration + 1
    contrast_gate = it > cfg.resolved_iter_dist and cfg.lambda_contrast > 0
    trace = []

    # source pass and generative update (EM owns the mixtures, not backprop)
    logits_s, f_s, cache_s = state.student.forward(src_x)
    state.bank.em_update(f_s, src_y, per_image_cap=cfg.memory_per_batch_cap)
    trace.append("gmm_update")

    proto_s_val, grad_fs = 0.0, None
    if contrast_gate:
        try:
            pos, negs = select_prototypes_batch(state.bank, f_s, src_y)
            proto_s_val, grad_fs = proto_contrastive_loss_batch(f_s, pos, negs, cfg.tau)
            trace.append("contrast_source")
        except NotReady:
            pass

    state.priors.update_prior(src_y, "source")
    trace.append("prior_source")

    # teacher supplies target pseudo-labels and the batch confidence weight
    t_logits, _, _ = state.teacher.forward(tgt_x)
    t_probs = softmax_stable(t_logits, axis=1)
    pseudo = np.argmax(t_probs, axis=1)
    w_conf = confidence_weight(t_probs, cfg.beta_conf)
    trace.append("teacher_pseudo_labels")
    state.priors.update_prior(pseudo, "target")
    trace.append("prior_target")

    # target-side state refresh from student embeddings
    logits_t, f_t, cache_t = state.student.forward(tgt_x)
    means, present = batch_class_mean(f_t, pseudo, state.n_classes)
    update_target_bank(state.target_bank, f_t, pseudo, means, present, cfg.target_bank_top_k)
    trace.append("bank_update")
    if cfg.proto_mean_mode == "bank-mean":
        proto_means = means.copy()
        for c in np.flatnonzero(present):
            proto_means[c] = state.target_bank.contents(int(c)).mean(axis=0)
    else:
        proto_means = means
    update_target_prototypes(state.protos, proto_means, present, cfg.alpha)
    trace.append("prototype_update")

    proto_t_val, grad_ft = 0.0, None
    ratio_clamped = False
    if contrast_gate:
        try:
            y_hat, _ = assign_pseudo_labels_batch(f_t, state.bank, state.priors, state.protos)
            ratio_clamped = bool(state.priors.ratio()[1].any())
            pos_t, negs_t = select_prototypes_batch(state.bank, f_t, y_hat)
            proto_t_val, grad_ft = proto_contrastive_loss_batch(f_t, pos_t, negs_t, cfg.tau)
            trace.append("contrast_target")
        except NotReady:
            pass

    # discriminative terms
    ce_s = weighted_cross_entropy(logits_s, src_y, 1.0)
    if cfg.use_target_ce:
        ce_t = weighted_cross_entropy(logits_t, pseudo, w_conf)
        ce_t_val, grad_logits_t = ce_t.value, ce_t.grad
    else:
        ce_t_val, grad_logits_t = 0.0, None
    trace.append("cross_entropy")

    # one combined step
    lam = cfg.lambda_contrast
    grads = state.student.backward(
        cache_s, ce_s.grad, lam * grad_fs if grad_fs is not None else None
    )
    if grad_logits_t is not None or grad_ft is not None:
        grads_t = state.student.backward(
            cache_t, grad_logits_t, lam * grad_ft if grad_ft is not None else None
        )
        for k in grads:
            grads[k] += grads_t[k]
    trace.append("backward")

    applied = optimizer_step(
        state.student.params,
        grads,
        state.opt,
        lr=_learning_rate(cfg, it),
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )
    state.student.bump()
    trace.append("optimizer_step")
    state.ts.ema_teacher_update()
    trace.append("teacher_ema")

    state.iteration = it
    state.last_trace = trace
    total = ce_s.value + ce_t_val + lam * (proto_s_val + proto_t_val)
    return IterationRecord(
        iteration=it,
        ce_source=ce_s.value,
        ce_target=ce_t_val,
        proto_source=proto_s_val,
        proto_target=proto_t_val,
        total=total,
        confidence_weight=w_conf,
        proto_source_skipped="contrast_source" not in trace,
        proto_target_skipped="contrast_target" not in trace,
        ratio_clamped=ratio_clamped,
        step_rejected=not applied,
    )


def train(
    cfg: TrainConfig, source: Dataset, target: Dataset
) -> tuple[TrainState, list[IterationRecord]]:
    """Full training run; the target's labels, if any, are never read."""
    if np.any(source.labels < 0):
        raise ContractViolation("source dataset must be fully labeled")
    if source.dim != target.dim:
        raise ContractViolation("source/target input dims differ")
    state = init_state(cfg, source.n_classes, source.dim)
    sampler = RcsSampler(source.labels, source.n_classes, cfg.rcs_temperature)
    records: list[IterationRecord] = []
    for _ in range(cfg.n_iter):
        src_idx = sampler.sample(state.rng_rcs, cfg.batch_source)
        tgt_idx = state.rng_target.integers(0, len(target), size=cfg.batch_target)
        records.append(
            train_iteration(state, source.inputs[src_idx], source.labels[src_idx], target.inputs[tgt_idx])
        )
    return state, records


# -- evaluation ------------------------------------------------------------


@dataclass
class MetricsRecord:
    confusion: np.ndarray  # (C, C), rows ground truth, columns prediction
    iou: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    present: np.ndarray  # classes with ground-truth support
    miou: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float

    def to_csv(self) -> str:
        lines = ["class,iou,precision,recall,f1,support"]
        support = self.confusion.sum(axis=1)
        for c in range(self.confusion.shape[0]):
            cells = [float(self.iou[c]), float(self.precision[c]), float(self.recall[c]), float(self.f1[c])]
            lines.append(f"{c}," + ",".join(repr(v) for v in cells) + f",{int(support[c])}")
        macro = [self.miou, self.macro_precision, self.macro_recall, self.macro_f1]
        lines.append("macro," + ",".join(repr(float(v)) for v in macro) + f",{int(support.sum())}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        rows = [f"{'class':>8} {'IoU':>8} {'P':>8} {'R':>8} {'F1':>8}"]
        for c in range(self.confusion.shape[0]):
            rows.append(
                f"{c:>8} {self.iou[c]:>8.4f} {self.precision[c]:>8.4f} "
                f"{self.recall[c]:>8.4f} {self.f1[c]:>8.4f}"
            )
        rows.append(
            f"{'macro':>8} {self.miou:>8.4f} {self.macro_precision:>8.4f} "
            f"{self.macro_recall:>8.4f} {self.macro_f1:>8.4f}"
        )
        rows.append(f"accuracy {self.accuracy:.4f}   mIoU {self.miou:.4f}")
        return "\n".join(rows)


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ContractViolation("prediction/label length mismatch")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> MetricsRecord:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp

    def safe_div(num, den):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    iou = safe_div(tp, tp + fp + fn)
    precision = safe_div(tp, tp + fp)
    recall = safe_div(tp, tp + fn)
    f1 = safe_div(2 * precision * recall, precision + recall)
    present = cm.sum(axis=1) > 0
    if not present.any():
        raise ContractViolation("empty evaluation set")
    total = cm.sum()
    return MetricsRecord(
        confusion=cm,
        iou=iou,
        precision=precision,
        recall=recall,
        f1=f1,
        present=present,
        miou=float(iou[present].mean()),
        macro_precision=float(precision[present].mean()),
        macro_recall=float(recall[present].mean()),
        macro_f1=float(f1[present].mean()),
        accuracy=float(tp.sum() / total),
    )


def predict(state: TrainState, inputs: np.ndarray, predictor: str = "head") -> np.ndarray:
    """Class predictions from the classifier head or the corrected generative posterior."""
    from .shift_priors import corrected_posterior_batch

    if predictor == "head":
        logits, _, _ = state.student.forward(inputs)
        return np.argmax(logits, axis=1)
    if predictor == "gmm":
        _, f, _ = state.student.forward(inputs)
        post = corrected_posterior_batch(f, state.bank, state.priors)
        return np.argmax(post, axis=1)
    raise ContractViolation(f"unknown predictor {predictor!r}")


def evaluate(
    state: TrainState, inputs: np.ndarray, labels: np.ndarray, predictor: str = "head"
) -> MetricsRecord:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    labels = np.asarray(labels)
    if inputs.shape[0] == 0:
        raise ContractViolation("empty evaluation set")
    if np.any(labels < 0):
        raise ContractViolation("evaluation labels must be non-negative")
    preds = predict(state, inputs, predictor)
    return metrics_from_confusion(confusion_matrix(labels, preds, state.n_classes))
