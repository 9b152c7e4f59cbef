"""Overall and per-shot-band top-1 accuracy, concept retrieval, and the
ablation table renderer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import ShotBands
from .encoders import CvlpModel
from .errors import ValidationError

BAND_ORDER = ("many", "medium", "few")


@dataclass
class EvalReport:
    overall: float
    bands: dict            # band -> accuracy; empty bands are absent
    band_counts: dict      # band -> sample count (only non-empty bands)
    per_class: list        # per-class accuracy (None for classes unseen in eval)
    total: int
    correct: int
    config_fingerprint: str = ""

    def to_json(self) -> str:
        doc = {
            "overall": self.overall,
            "many": self.bands.get("many"),
            "medium": self.bands.get("medium"),
            "few": self.bands.get("few"),
            "band_counts": self.band_counts,
            "per_class": self.per_class,
            "total": self.total,
            "correct": self.correct,
            "config_fingerprint": self.config_fingerprint,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def evaluate(predictions, labels, bands: ShotBands,
             config_fingerprint: str = "") -> EvalReport:
    """Micro-averaged overall accuracy plus exact per-band ratios."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValidationError(
            f"evaluate: {len(predictions)} predictions vs {len(labels)} labels"
        )
    C = len(bands.bands)
    if labels.size and labels.max() >= C:
        raise ValidationError(
            f"evaluate: label {int(labels.max())} has no shot band"
        )
    correct = predictions == labels
    band_hits = {b: [0, 0] for b in BAND_ORDER}
    class_hits = [[0, 0] for _ in range(C)]
    for ok, lab in zip(correct, labels):
        band = bands[int(lab)]
        band_hits[band][0] += int(ok)
        band_hits[band][1] += 1
        class_hits[lab][0] += int(ok)
        class_hits[lab][1] += 1
    band_acc = {b: h / n for b, (h, n) in band_hits.items() if n}
    band_counts = {b: n for b, (h, n) in band_hits.items() if n}
    per_class = [h / n if n else None for h, n in class_hits]
    total = int(labels.size)
    return EvalReport(
        overall=int(correct.sum()) / total if total else 0.0,
        bands=band_acc, band_counts=band_counts, per_class=per_class,
        total=total, correct=int(correct.sum()),
        config_fingerprint=config_fingerprint,
    )


def concept_retrieval(query_tokens, images: np.ndarray, model: CvlpModel,
                      k: int) -> list:
    """Top-k image ids by cosine similarity to the query sentence,
    descending, smaller id on ties."""
    if k > len(images):
        raise ValidationError(
            f"concept_retrieval: k={k} exceeds set size {len(images)}"
        )
    text = model.lin([query_tokens]).data[0]
    text = text / np.linalg.norm(text)
    emb = model.vis(np.asarray(images, dtype=np.float64)).data
    emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    sims = emb @ text
    order = sorted(range(len(images)), key=lambda i: (-sims[i], i))
    return order[:k]


def ablation_report(entries) -> str:
    """Aligned plain-text table over (label, EvalReport) rows."""
    if not entries:
        raise ValidationError("ablation_report: need at least one entry")
    headers = ["config", "overall", "many", "medium", "few"]
    rows = []
    for label, report in entries:
        cells = [label, f"{report.overall:.4f}"]
        for band in BAND_ORDER:
            acc = report.bands.get(band)
            cells.append("-" if acc is None else f"{acc:.4f}")
        rows.append(cells)
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows))
              for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for cells in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"
