"""Evaluation: span EM / token F1, logical-form exact and relaxed scores,
and evidence-classification scores."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import LOGICAL_FORMS

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class MetricError(ValueError):
    pass


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def span_em(pred_text: str, gold_text: str) -> int:
    return int(normalize_answer(pred_text) == normalize_answer(gold_text))


def token_f1(pred_text: str, gold_text: str) -> float:
    pred = normalize_answer(pred_text).split()
    gold = normalize_answer(gold_text).split()
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    common = Counter(pred) & Counter(gold)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


@dataclass
class PRF:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0


def _prf_from_counts(tp: float, fp: float, fn: float) -> PRF:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(p, r, f)


def _per_class_prf(preds, golds, classes) -> tuple[dict, dict]:
    support = Counter(golds)
    per_class = {}
    for c in classes:
        tp = sum(1 for p, g in zip(preds, golds) if p == c and g == c)
        fp = sum(1 for p, g in zip(preds, golds) if p == c and g != c)
        fn = sum(1 for p, g in zip(preds, golds) if p != c and g == c)
        per_class[c] = _prf_from_counts(tp, fp, fn)
    return per_class, support


def _averaged(per_class: dict, support: Counter, weighted: bool) -> PRF:
    classes = [c for c in per_class if support[c] > 0] if weighted \
        else list(per_class)
    if not classes:
        return PRF()
    if weighted:
        total = sum(support[c] for c in classes)
        w = {c: support[c] / total for c in classes}
    else:
        w = {c: 1.0 / len(classes) for c in classes}
    return PRF(
        precision=sum(w[c] * per_class[c].precision for c in classes),
        recall=sum(w[c] * per_class[c].recall for c in classes),
        f1=sum(w[c] * per_class[c].f1 for c in classes),
    )


def lf_exact_scores(preds, golds, num_classes: int | None = None,
                    weighted: bool = True) -> PRF:
    """Support-weighted per-class P/R/F1 over logical-form class ids."""
    preds, golds = list(preds), list(golds)
    if not preds or len(preds) != len(golds):
        raise MetricError(
            f"need equal non-empty prediction/gold lists, got "
            f"{len(preds)}/{len(golds)}")
    if num_classes is None:
        num_classes = len(LOGICAL_FORMS)
    for v in list(preds) + list(golds):
        if not 0 <= v < num_classes:
            raise MetricError(f"unknown class id {v}")
    per_class, support = _per_class_prf(preds, golds, range(num_classes))
    return _averaged(per_class, support, weighted)


def lf_relaxed_scores(preds, golds, lf_inventory=None) -> PRF:
    """Per-example multiset overlap between predicted and gold LF tokens,
    averaged over examples."""
    preds, golds = list(preds), list(golds)
    if not preds or len(preds) != len(golds):
        raise MetricError("need equal non-empty prediction/gold lists")
    if lf_inventory is None:
        lf_inventory = LOGICAL_FORMS
    tokens = {lf.lf_id: lf.lf_tokens for lf in lf_inventory}
    for v in list(preds) + list(golds):
        if v not in tokens:
            raise MetricError(f"class {v} has no tokenization")
    ps, rs, fs = [], [], []
    for p, g in zip(preds, golds):
        pt, gt = tokens[p], tokens[g]
        overlap = sum((pt & gt).values())
        prec = overlap / sum(pt.values()) if pt else 0.0
        rec = overlap / sum(gt.values()) if gt else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        ps.append(prec)
        rs.append(rec)
        fs.append(f1)
    return PRF(float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs)))


def evidence_scores(pred_labels, gold_labels, weighted: bool = True) -> PRF:
    """Binary P/R/F1, support-weighted across the two classes."""
    preds, golds = list(pred_labels), list(gold_labels)
    if not preds or len(preds) != len(golds):
        raise MetricError("need equal non-empty prediction/gold lists")
    for v in list(preds) + list(golds):
        if v not in (0, 1):
            raise MetricError(f"evidence label must be 0 or 1, got {v}")
    per_class, support = _per_class_prf(preds, golds, (0, 1))
    return _averaged(per_class, support, weighted)


def confusion_matrix(preds, golds, num_classes: int) -> np.ndarray:
    m = np.zeros((num_classes, num_classes), dtype=int)
    for p, g in zip(preds, golds):
        m[g, p] += 1
    return m


@dataclass
class EvalReport:
    """Scores for one dataset split; all fields live in [0, 1]."""

    n_examples: int = 0
    em: float | None = None
    token_f1: float | None = None
    lf_exact: PRF | None = None
    lf_exact_macro: PRF | None = None
    lf_relaxed: PRF | None = None
    evidence: PRF | None = None
    per_lf: dict = field(default_factory=dict)
    confusion: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    def save_confusion_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            n = len(self.confusion)
            fh.write("gold\\pred," + ",".join(str(i) for i in range(n)) + "\n")
            for g, row in enumerate(self.confusion):
                fh.write(f"{g}," + ",".join(str(v) for v in row) + "\n")
