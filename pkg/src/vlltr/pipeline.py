"""End-to-end stage orchestration over an output directory.

Stages couple through content hashes: each checkpoint records the
SHA-256 of the data files it was trained on, anchor files record the
checkpoint they were scored under, and the embedding cache records the
checkpoint its text embeddings came from. A stage refuses inputs whose
hashes disagree.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .anchors import AnchorSet, load_anchors, save_anchors, select_anchors
from .config import RunConfig
from .data import (corpus_stats, gen_corpus, gen_pareto_counts, gen_synthetic,
                   load_corpus, load_dataset, save_corpus, save_dataset,
                   save_stats, split_shots)
from .encoders import CvlpModel, TeacherPair, VisualEncoder
from .errors import StaleArtifactError, ValidationError
from .evaluation import EvalReport, evaluate
from .head import (FcParams, FinetuneConfig, LgrParams,
                   compute_anchor_embeddings, classify_dataset,
                   load_anchor_embeddings, run_finetune,
                   save_anchor_embeddings)
from .pretrain import PretrainConfig, run_pretrain, save_trace

FILES = {
    "dataset": "dataset.bin",
    "corpus": "corpus.tsv",
    "stats": "stats.json",
    "teacher": "teacher.ck",
    "teacher_trace": "teacher_trace.tsv",
    "student": "student.ck",
    "pretrain_trace": "pretrain_trace.tsv",
    "anchors": "anchors.tsv",
    "final": "final.ck",
    "finetune_trace": "finetune_trace.tsv",
    "cache": "anchor_cache.vlae",
    "predictions": "predictions.tsv",
    "report": "report.json",
}


def artifact(out_dir, name) -> Path:
    return Path(out_dir) / FILES[name]


def _meta_sections(cfg: RunConfig, out_dir) -> dict:
    sections = {"__fingerprint__": ckpt.hash_to_floats(cfg.fingerprint())}
    for name, key in (("dataset", "__dataset_hash__"),
                      ("corpus", "__corpus_hash__")):
        path = artifact(out_dir, name)
        if path.exists():
            sections[key] = ckpt.hash_to_floats(ckpt.file_sha256(path))
    return sections


def _check_data_hashes(sections: dict, cfg: RunConfig, out_dir):
    for name, key in (("dataset", "__dataset_hash__"),
                      ("corpus", "__corpus_hash__")):
        if key not in sections:
            continue
        actual = ckpt.file_sha256(artifact(out_dir, name))
        if ckpt.floats_to_hash(sections[key]) != actual:
            raise StaleArtifactError(
                f"checkpoint was trained on a different {name} file"
            )


# ---- stages -----------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = gen_pareto_counts(cfg.classes, cfg.n_max, cfg.n_min, cfg.alpha)
    dataset = gen_synthetic(cfg.classes, counts, cfg.d_img, cfg.noise_sigma,
                            cfg.seed, cfg.test_per_class, alpha=cfg.alpha)
    corpus, _ = gen_corpus(cfg.classes, cfg.sentences_per_class,
                           cfg.prompt_count, cfg.vocab_size,
                           cfg.noise_fraction, cfg.seed, cfg.max_tokens)
    save_dataset(artifact(out_dir, "dataset"), dataset)
    save_corpus(artifact(out_dir, "corpus"), corpus)
    save_stats(artifact(out_dir, "stats"), corpus_stats(corpus))
    return dataset, corpus


def _load_data(cfg: RunConfig, out_dir):
    dataset = load_dataset(artifact(out_dir, "dataset"))
    corpus = load_corpus(artifact(out_dir, "corpus"), cfg.vocab_size,
                         cfg.max_tokens)
    return dataset, corpus


def cmd_make_teacher(cfg: RunConfig, out_dir):
    """Pre-train a frozen teacher pair on the balanced variant of the
    synthetic task (every class at n_max, same prototypes)."""
    _, corpus = _load_data(cfg, out_dir)
    balanced = gen_synthetic(cfg.classes, [cfg.n_max] * cfg.classes,
                             cfg.d_img, cfg.noise_sigma, cfg.seed,
                             cfg.test_per_class, alpha=cfg.alpha)
    model = CvlpModel(cfg.d_img, cfg.embed_dim, cfg.vocab_size,
                      seed=cfg.seed + 7, tau_init=cfg.tau_init,
                      max_tokens=cfg.max_tokens)
    pcfg = PretrainConfig(epochs=cfg.teacher_epochs,
                          batch_size=cfg.pretrain_batch,
                          base_lr=cfg.pretrain_lr, lam=1.0,
                          weight_decay=cfg.weight_decay, seed=cfg.seed + 7)
    trace = run_pretrain(balanced, corpus, model, None, pcfg)
    ckpt.write_checkpoint(artifact(out_dir, "teacher"),
                          {**model.state(), **_meta_sections(cfg, out_dir)})
    save_trace(artifact(out_dir, "teacher_trace"), trace)
    return trace


def cmd_pretrain(cfg: RunConfig, out_dir):
    dataset, corpus = _load_data(cfg, out_dir)
    teacher = None
    if cfg.lam < 1.0:
        teacher_path = artifact(out_dir, "teacher")
        if not teacher_path.exists():
            raise ValidationError(
                "pretrain: lam < 1 needs a teacher checkpoint; "
                "run make-teacher first")
        teacher = TeacherPair.from_checkpoint(
            teacher_path, cfg.d_img, cfg.embed_dim, cfg.vocab_size,
            cfg.max_tokens)
    model = CvlpModel(cfg.d_img, cfg.embed_dim, cfg.vocab_size,
                      seed=cfg.seed, tau_init=cfg.tau_init,
                      max_tokens=cfg.max_tokens)
    pcfg = PretrainConfig(epochs=cfg.pretrain_epochs,
                          batch_size=cfg.pretrain_batch,
                          base_lr=cfg.pretrain_lr, lam=cfg.lam,
                          weight_decay=cfg.weight_decay, seed=cfg.seed)
    trace = run_pretrain(dataset, corpus, model, teacher, pcfg)
    ckpt.write_checkpoint(artifact(out_dir, "student"),
                          {**model.state(), **_meta_sections(cfg, out_dir)})
    save_trace(artifact(out_dir, "pretrain_trace"), trace)
    return trace


def _load_student(cfg: RunConfig, out_dir) -> CvlpModel:
    path = artifact(out_dir, "student")
    sections = ckpt.read_checkpoint(path)
    _check_data_hashes(sections, cfg, out_dir)
    model = CvlpModel(cfg.d_img, cfg.embed_dim, cfg.vocab_size, seed=0,
                      max_tokens=cfg.max_tokens)
    model.load_state(sections)
    return model


def cmd_select_anchors(cfg: RunConfig, out_dir) -> AnchorSet:
    dataset, corpus = _load_data(cfg, out_dir)
    model = _load_student(cfg, out_dir)
    student_hash = ckpt.file_sha256(artifact(out_dir, "student"))
    anchors = select_anchors(corpus, dataset, model, cfg.anchor_m,
                             mode=cfg.anchor_mode, cap=cfg.probe_cap,
                             seed=cfg.seed, checkpoint_hash=student_hash)
    save_anchors(artifact(out_dir, "anchors"), anchors)
    return anchors


def cmd_finetune(cfg: RunConfig, out_dir):
    dataset, corpus = _load_data(cfg, out_dir)
    model = _load_student(cfg, out_dir)
    anchors = load_anchors(artifact(out_dir, "anchors"))
    student_hash = ckpt.file_sha256(artifact(out_dir, "student"))
    fcfg = FinetuneConfig(epochs=cfg.finetune_epochs,
                          batch_size=cfg.finetune_batch,
                          base_lr=cfg.finetune_lr,
                          weight_decay=cfg.weight_decay, seed=cfg.seed,
                          head=cfg.head)
    head_params, _, trace = run_finetune(
        dataset, anchors, corpus, model, fcfg,
        expected_checkpoint_hash=student_hash)
    sections = {**model.state(), **_meta_sections(cfg, out_dir)}
    if head_params is not None:
        sections.update({k: v.data.copy()
                         for k, v in head_params.params().items()})
    ckpt.write_checkpoint(artifact(out_dir, "final"), sections)
    with open(artifact(out_dir, "finetune_trace"), "w", encoding="utf-8") as f:
        for epoch, step, loss in trace:
            f.write(f"{epoch}\t{step}\t{loss!r}\n")
    return trace


def cmd_precompute_cache(cfg: RunConfig, out_dir):
    """Write the offline anchor text-embedding cache, keyed by the final
    checkpoint's content hash."""
    _, corpus = _load_data(cfg, out_dir)
    final_path = artifact(out_dir, "final")
    sections = ckpt.read_checkpoint(final_path)
    model = CvlpModel(cfg.d_img, cfg.embed_dim, cfg.vocab_size, seed=0,
                      max_tokens=cfg.max_tokens)
    model.load_state(sections)
    anchors = load_anchors(artifact(out_dir, "anchors"))
    emb = compute_anchor_embeddings(anchors, corpus, model)
    save_anchor_embeddings(artifact(out_dir, "cache"), emb,
                           ckpt.file_sha256(final_path))
    return emb


def load_inference_head(cfg: RunConfig, out_dir):
    """Load only what cache-based inference needs from the final
    checkpoint: the visual encoder, head parameters, and temperature.
    Linguistic-encoder sections are never materialized."""
    final_path = artifact(out_dir, "final")
    sections = ckpt.read_checkpoint(
        final_path, names=lambda n: not n.startswith(("lin.", "__")))
    vis = VisualEncoder(cfg.d_img, cfg.embed_dim,
                        np.random.default_rng(0))
    for k, v in vis.params().items():
        v.data = sections[k].copy()
    tau = None
    head_params = None
    if cfg.head == "lgr":
        head_params = LgrParams(cfg.embed_dim, cfg.classes, cfg.tau_init,
                                np.random.default_rng(0))
        head_params.load_state(sections)
    elif cfg.head == "fc":
        head_params = FcParams(cfg.embed_dim, cfg.classes,
                               np.random.default_rng(0))
        head_params.load_state(sections)
    else:
        from .tensor import Tensor
        tau = Tensor(sections["tau"].copy())
    return vis, head_params, tau


def cmd_eval(cfg: RunConfig, out_dir) -> EvalReport:
    dataset, _ = _load_data(cfg, out_dir)
    cache_path = artifact(out_dir, "cache")
    if not cache_path.exists():
        cmd_precompute_cache(cfg, out_dir)
    anchor_emb, cache_hash = load_anchor_embeddings(cache_path)
    final_hash = ckpt.file_sha256(artifact(out_dir, "final"))
    if cache_hash != final_hash:
        raise StaleArtifactError(
            "eval: anchor cache was built from a different checkpoint")
    vis, head_params, tau = load_inference_head(cfg, out_dir)
    preds, p_i, p_t = classify_dataset(dataset.test_X, vis, cfg.head,
                                       head_params, anchor_emb, tau=tau)
    bands = split_shots(dataset.counts)
    report = evaluate(preds, dataset.test_y, bands,
                      config_fingerprint=cfg.fingerprint().hex())
    with open(artifact(out_dir, "report"), "w", encoding="utf-8") as f:
        f.write(report.to_json())
    with open(artifact(out_dir, "predictions"), "w", encoding="utf-8") as f:
        for i, (true, pred) in enumerate(zip(dataset.test_y, preds)):
            f.write(f"{i}\t{true}\t{pred}\t{p_i[i]!r}\t{p_t[i]!r}\n")
    return report


def run_all(cfg: RunConfig, out_dir) -> EvalReport:
    """The full two-stage pipeline in one call."""
    cmd_gen_data(cfg, out_dir)
    if cfg.lam < 1.0:
        cmd_make_teacher(cfg, out_dir)
    cmd_pretrain(cfg, out_dir)
    cmd_select_anchors(cfg, out_dir)
    cmd_finetune(cfg, out_dir)
    return cmd_eval(cfg, out_dir)
