"""Stage 1: class-wise visual-linguistic pre-training.

Positives are class-level: every text of the batch sharing the image's
class counts, and each image gets a freshly sampled same-class sentence
every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClassCorpus, LongTailDataset, SqrtSampler
from .encoders import CvlpModel, TeacherPair
from .errors import NumericError, ShapeMismatch, ValidationError
from .optim import AdamW, LrSchedule, cosine_lr
from .tensor import Tensor, as_tensor, log_softmax


@dataclass
class PretrainConfig:
    epochs: int
    batch_size: int
    base_lr: float
    lam: float = 0.5
    weight_decay: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lam must be in [0, 1], got {self.lam}")


def ccl_loss(S: Tensor, labels, tau):
    """Class-wise contrastive loss over a similarity matrix.

    Returns (L_vis, L_lin, L_ccl): the row-softmax (image-anchored) term,
    the column-softmax (text-anchored) term, and their sum. Each term is
    averaged over its positive set and then over the batch.
    """
    S = as_tensor(S)
    labels = np.asarray(labels, dtype=np.int64)
    n = S.shape[0]
    if S.ndim != 2 or S.shape != (n, n) or labels.shape != (n,):
        raise ShapeMismatch(
            f"ccl_loss: need square S and matching labels, "
            f"got S {S.shape}, labels {labels.shape}"
        )
    pos = (labels[:, None] == labels[None, :]).astype(np.float64)
    pos_sizes = pos.sum(axis=1)
    if (pos_sizes == 0).any():
        raise ValidationError("ccl_loss: empty positive set")
    logits = S / as_tensor(tau)
    pos_t = Tensor(pos)
    inv_sizes = Tensor(1.0 / pos_sizes)
    l_vis = -(((log_softmax(logits, axis=1) * pos_t).sum(axis=1)
               * inv_sizes).mean())
    l_lin = -(((log_softmax(logits, axis=0) * pos_t).sum(axis=0)
               * inv_sizes).mean())
    return l_vis, l_lin, l_vis + l_lin


def distill_loss(S: Tensor, S_teacher, tau, tau_teacher: float, labels=None):
    """Teacher's positive-pair probability weighting the student's
    positive-pair log-probability, in both softmax directions,
    batch-averaged. No gradient flows through the teacher matrix."""
    S = as_tensor(S)
    St = np.asarray(S_teacher, dtype=np.float64)
    if S.shape != St.shape or S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatch(
            f"distill_loss: need matching square matrices, "
            f"got {S.shape} vs {St.shape}"
        )
    n = S.shape[0]
    idx = np.arange(n)

    def diag_softmax(mat, t, axis):
        z = mat / t
        z = z - z.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return (e / e.sum(axis=axis, keepdims=True))[idx, idx]

    w_text = Tensor(diag_softmax(St, tau_teacher, axis=1))
    w_img = Tensor(diag_softmax(St, tau_teacher, axis=0))
    logits = S / as_tensor(tau)
    log_p_text = log_softmax(logits, axis=1)[idx, idx]
    log_p_img = log_softmax(logits, axis=0)[idx, idx]
    return -((w_text * log_p_text).mean()) - ((w_img * log_p_img).mean())


def pretrain_loss(S: Tensor, S_teacher, labels, tau, tau_teacher: float,
                  lam: float):
    """lam * L_ccl + (1 - lam) * L_dis; the teacher side is skipped
    entirely at lam == 1. Returns (loss, l_ccl, l_dis) scalars."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"pretrain_loss: lam must be in [0, 1], got {lam}")
    _, _, l_ccl = ccl_loss(S, labels, tau)
    if lam == 1.0:
        return l_ccl, l_ccl, None
    l_dis = distill_loss(S, S_teacher, tau, tau_teacher, labels)
    if lam == 0.0:
        return l_dis, l_ccl, l_dis
    return lam * l_ccl + (1.0 - lam) * l_dis, l_ccl, l_dis


def sample_paired_batch(dataset: LongTailDataset, corpus: ClassCorpus,
                        sampler: SqrtSampler, rng: np.random.Generator,
                        batch_size: int):
    """Square-root sampled images plus one fresh same-class sentence each."""
    idx = sampler.draw(batch_size)
    images = dataset.X[idx].astype(np.float64)
    labels = dataset.y[idx]
    sequences = []
    for c in labels:
        options = corpus.for_class(int(c))
        sequences.append(options[int(rng.integers(len(options)))].tokens)
    return images, sequences, labels


def run_pretrain(dataset: LongTailDataset, corpus: ClassCorpus,
                 model: CvlpModel, teacher: TeacherPair | None,
                 cfg: PretrainConfig):
    """Train the encoder pair; returns a per-step trace list.

    Trace entries are (epoch, step, l_ccl, l_dis, l_pre, tau). At
    lam == 1 the teacher is never evaluated and l_dis is logged as 0.
    """
    if cfg.lam < 1.0 and teacher is None:
        raise ValidationError("run_pretrain: lam < 1 requires a teacher")
    steps_per_epoch = max(1, int(np.ceil(len(dataset.y) / cfg.batch_size)))
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    sched = LrSchedule(cfg.base_lr, 0.0, total_steps)
    opt = AdamW(model.params(), cfg.base_lr, weight_decay=cfg.weight_decay)
    sampler = SqrtSampler(dataset.counts, seed=cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x9E7]))
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        for _ in range(steps_per_epoch):
            images, sequences, labels = sample_paired_batch(
                dataset, corpus, sampler, rng, cfg.batch_size)
            S = model.similarity(images, sequences)
            S_teacher = (teacher.similarity(images, sequences)
                         if cfg.lam < 1.0 else None)
            tau_teacher = teacher.tau if cfg.lam < 1.0 else 1.0
            loss, l_ccl, l_dis = pretrain_loss(
                S, S_teacher, labels, model.tau, tau_teacher, cfg.lam)
            if not np.isfinite(loss.data):
                raise NumericError(f"run_pretrain: non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr=cosine_lr(sched, step))
            model.clamp_tau()
            trace.append((epoch, step, float(l_ccl.data),
                          float(l_dis.data) if l_dis is not None else 0.0,
                          float(loss.data), float(model.tau.data)))
            step += 1
    return trace


def save_trace(path, trace):
    with open(path, "w", encoding="utf-8") as f:
        for epoch, step, l_ccl, l_dis, l_pre, tau in trace:
            f.write(f"{epoch}\t{step}\t{l_ccl!r}\t{l_dis!r}\t{l_pre!r}\t{tau!r}\n")
