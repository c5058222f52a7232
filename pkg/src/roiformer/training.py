"""Loss, Adam, the training loop, and the diagnostic metric suite.

Training runs one subject forward at a time (segments differ per subject, so
there is no tensor batching; a batch is a group of subjects whose mean loss
drives one optimizer step).  Each epoch draws fresh random segments per
subject (augmentation), shuffles, steps, then scores the validation split on
deterministic center segments.  The checkpoint returned is the epoch that
maximizes the selection metric on validation, earlier epoch winning ties.

All randomness flows from TrainConfig.seed through named rng streams, so a
rerun with the same inputs reproduces losses, metrics, and parameters bit
for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import (PhenoStats, SubjectData, SubjectSample, center_segment,
                   compute_pheno_stats, encode_phenotype, random_segment)
from .model import ModelConfig, ForwardResult, model_forward
from .rng import RngStreams
from .tensor import (NumericsError, Tensor, add, backward, clip, concat, log,
                     neg, reduce_mean)


class UndefinedMetricError(ValueError):
    """Metric has no value on this sample set (for AUC: one class absent)."""


PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-5
    batch_size: int = 128
    segment_length: int = 60
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    selection_metric: str = "acc"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.segment_length < 1:
            raise ValueError("segment_length must be >= 1")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.selection_metric not in ("acc", "auc"):
            raise ValueError(f"selection_metric must be 'acc' or 'auc', "
                             f"got {self.selection_metric!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# -- loss and optimizer ---------------------------------------------------------


def bce_loss(prob: Tensor, label: int) -> Tensor:
    """Binary cross-entropy with the probability clamped to
    [1e-7, 1 - 1e-7] before the logs."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    p = clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if label == 1:
        return neg(log(p))
    return neg(log(add(neg(p), 1.0)))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()},
                   t=0)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> tuple[Mapping[str, Tensor],
                                                           AdamState]:
    """One bias-corrected Adam update, in place; a missing or None gradient
    counts as zero."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter {name!r} shape {p.data.shape}")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params, state


# -- metrics ---------------------------------------------------------------------


def auc_score(probs: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outscores a random negative,
    ties counting one half (the rank-sum formulation)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if probs.shape != labels.shape or probs.ndim != 1:
        raise ValueError("probs and labels must be equal-length 1-D sequences")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auc undefined: only one class present")
    ranks = rankdata(probs)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int
    acc: float
    spe: float
    sen: float
    auc: float | None
    threshold: float
    auc_defined: bool

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
                "acc": self.acc, "spe": self.spe, "sen": self.sen,
                "auc": self.auc, "threshold": self.threshold,
                "auc_defined": self.auc_defined}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls(tp=int(d["tp"]), tn=int(d["tn"]), fp=int(d["fp"]),
                   fn=int(d["fn"]), acc=float(d["acc"]), spe=float(d["spe"]),
                   sen=float(d["sen"]),
                   auc=None if d["auc"] is None else float(d["auc"]),
                   threshold=float(d["threshold"]),
                   auc_defined=bool(d["auc_defined"]))


def metrics_report(probs: Sequence[float], labels: Sequence[int],
                   threshold: float = 0.5) -> MetricsReport:
    """Confusion counts and rate metrics at the given threshold; AUC comes
    from the raw probabilities and is flagged undefined on one-class sets.

    A rate whose denominator class is absent is reported as 0.0; the counts
    carry the full information either way."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if probs.shape != labels.shape or probs.ndim != 1 or probs.size == 0:
        raise ValueError("probs and labels must be equal-length non-empty "
                         "1-D sequences")
    pred = (probs >= threshold).astype(int)
    tp = int(((pred == 1) & (labels == 1)).sum())
    tn = int(((pred == 0) & (labels == 0)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    acc = (tp + tn) / probs.size
    sen = tp / (tp + fn) if tp + fn else 0.0
    spe = tn / (tn + fp) if tn + fp else 0.0
    try:
        auc = auc_score(probs, labels)
        auc_defined = True
    except UndefinedMetricError:
        auc = None
        auc_defined = False
    return MetricsReport(tp=tp, tn=tn, fp=fp, fn=fn, acc=acc, spe=spe, sen=sen,
                         auc=auc, threshold=threshold, auc_defined=auc_defined)


# -- samples and evaluation --------------------------------------------------------


def center_samples(subjects: Sequence[SubjectData], stats: PhenoStats,
                   segment_length: int) -> list[SubjectSample]:
    """Deterministic evaluation samples: center crops plus encoded phenotypes."""
    return [SubjectSample(segment=center_segment(s.series, segment_length),
                          pheno=encode_phenotype(s.record, stats),
                          label=s.label) for s in subjects]


def predict_proba(params: Mapping[str, Tensor], config: ModelConfig,
                  sample: SubjectSample) -> float:
    return model_forward(params, config, sample.segment, sample.pheno,
                         mode="eval").prob.item()


def evaluate(params: Mapping[str, Tensor], config: ModelConfig,
             samples: Sequence[SubjectSample],
             threshold: float = 0.5) -> MetricsReport:
    """Eval-mode scoring; parameters are never mutated."""
    probs = [predict_proba(params, config, s) for s in samples]
    labels = [s.label for s in samples]
    return metrics_report(probs, labels, threshold)


# -- training loop -----------------------------------------------------------------


@dataclass
class Checkpoint:
    epoch: int
    params: dict[str, Tensor]
    val_report: MetricsReport


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val: MetricsReport


def save_history(path, history: Sequence[EpochRecord]) -> None:
    """One row per epoch: epoch, mean train loss, validation acc/spe/sen/auc
    (auc written as NA when undefined)."""
    with open(path, "w") as fh:
        fh.write("epoch\ttrain_loss\tval_acc\tval_spe\tval_sen\tval_auc\n")
        for rec in history:
            auc = "NA" if not rec.val.auc_defined else "%.17g" % rec.val.auc
            fh.write("%d\t%.17g\t%.17g\t%.17g\t%.17g\t%s\n"
                     % (rec.epoch, rec.train_loss, rec.val.acc, rec.val.spe,
                        rec.val.sen, auc))


def _copy_params(params: Mapping[str, Tensor]) -> dict[str, Tensor]:
    return {name: Tensor(p.data.copy(), requires_grad=True)
            for name, p in params.items()}


def _selection_key(report: MetricsReport, metric: str) -> tuple[float, float]:
    acc = report.acc
    auc = report.auc if report.auc_defined else -1.0
    return (auc, acc) if metric == "auc" else (acc, auc)


def _chunks(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train(params: dict[str, Tensor], train_subjects: Sequence[SubjectData],
          val_subjects: Sequence[SubjectData], model_config: ModelConfig,
          train_config: TrainConfig, stats: PhenoStats | None = None,
          log: Callable[[str], None] | None = None,
          ) -> tuple[Checkpoint, list[EpochRecord]]:
    """Optimize ``params`` in place and return (best checkpoint, history).

    Phenotype statistics default to ones computed from the training split
    (never from validation).  With epochs=0 the initial parameters come back
    as a checkpoint tagged epoch -1 together with their validation report.
    A non-finite loss aborts with the offending epoch and batch.
    """
    if train_config.segment_length != model_config.segment_len:
        raise ValueError(f"train segment_length {train_config.segment_length} "
                         f"does not match model segment_len "
                         f"{model_config.segment_len}")
    if not train_subjects or not val_subjects:
        raise ValueError("both train and validation splits must be non-empty")
    overlap = ({s.subject_id for s in train_subjects}
               & {s.subject_id for s in val_subjects})
    if overlap:
        raise ValueError(f"subjects in both splits: {sorted(overlap)}")
    for s in list(train_subjects) + list(val_subjects):
        if s.series.n_rois != model_config.n_rois:
            raise ValueError(f"subject {s.subject_id} has {s.series.n_rois} "
                             f"ROIs but the model expects {model_config.n_rois}")

    if stats is None:
        stats = compute_pheno_stats([s.record for s in train_subjects])
    train_sorted = sorted(train_subjects, key=lambda s: s.subject_id)
    train_pheno = [encode_phenotype(s.record, stats) for s in train_sorted]
    train_labels = [s.label for s in train_sorted]
    val_samples = center_samples(val_subjects, stats, train_config.segment_length)
    streams = RngStreams(train_config.seed)
    metric = train_config.selection_metric

    if train_config.epochs == 0:
        report = evaluate(params, model_config, val_samples)
        return Checkpoint(epoch=-1, params=_copy_params(params),
                          val_report=report), []

    state = AdamState.for_params(params)
    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    best_key: tuple[float, float] | None = None
    for epoch in range(train_config.epochs):
        aug_rng = streams.stream("augmentation", epoch)
        segments = [random_segment(s.series, train_config.segment_length, aug_rng)
                    for s in train_sorted]
        order = streams.stream("shuffle", epoch).permutation(len(train_sorted))
        batch_losses: list[float] = []
        for b, batch in enumerate(_chunks(order, train_config.batch_size)):
            drop_rng = streams.stream("dropout", epoch, b)
            try:
                terms = []
                for idx in batch:
                    result: ForwardResult = model_forward(
                        params, model_config, segments[idx], train_pheno[idx],
                        mode="train", rng=drop_rng)
                    terms.append(bce_loss(result.prob, train_labels[idx]))
                loss = reduce_mean(concat(terms, axis=0))
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericsError("non-finite training loss")
                backward(loss)
            except NumericsError as exc:
                raise NumericsError(f"{exc} (epoch {epoch}, batch {b})") from exc
            grads = {name: p.grad for name, p in params.items()}
            adam_step(params, grads, state, train_config)
            for p in params.values():
                p.zero_grad()
            batch_losses.append(value)
        train_loss = float(np.mean(batch_losses))
        report = evaluate(params, model_config, val_samples)
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val=report))
        if log is not None:
            auc = "NA" if not report.auc_defined else f"{report.auc:.4f}"
            log(f"epoch {epoch}: loss {train_loss:.6f} "
                f"val acc {report.acc:.4f} auc {auc}")
        key = _selection_key(report, metric)
        if best_key is None or key > best_key:
            best = Checkpoint(epoch=epoch, params=_copy_params(params),
                              val_report=report)
            best_key = key
    return best, history
