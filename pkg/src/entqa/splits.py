"""Train/val/test splitting with paraphrase-template partitioning.

Two modes: "pl" holds 30% of each logical form's question templates out
of training entirely (unseen-paraphrase evaluation), "r" lets training
see every template. Notes are partitioned disjointly in both modes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class SplitError(ValueError):
    pass


@dataclass
class SplitAssignment:
    mode: str                      # "pl" | "r"
    seed: int
    train_frac: float
    train_notes: set
    val_notes: set
    test_notes: set
    templates_train: dict = field(default_factory=dict)  # lf_id -> [tid]
    templates_eval: dict = field(default_factory=dict)   # lf_id -> [tid]

    def to_json(self) -> dict:
        return {
            "mode": self.mode, "seed": self.seed, "train_frac": self.train_frac,
            "train_notes": sorted(self.train_notes),
            "val_notes": sorted(self.val_notes),
            "test_notes": sorted(self.test_notes),
            "templates_train": {str(k): sorted(v)
                                for k, v in self.templates_train.items()},
            "templates_eval": {str(k): sorted(v)
                               for k, v in self.templates_eval.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitAssignment":
        return cls(
            mode=obj["mode"], seed=obj["seed"], train_frac=obj["train_frac"],
            train_notes=set(obj["train_notes"]),
            val_notes=set(obj["val_notes"]),
            test_notes=set(obj["test_notes"]),
            templates_train={int(k): list(v)
                             for k, v in obj["templates_train"].items()},
            templates_eval={int(k): list(v)
                            for k, v in obj["templates_eval"].items()},
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def split_notes(note_ids, ratios: tuple, seed: int):
    """Seeded shuffle then proportional cut into train/val/test id sets."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {ratios}")
    note_ids = sorted(note_ids)
    n = len(note_ids)
    if n < sum(1 for r in ratios if r > 0):
        raise SplitError(f"only {n} notes for {len(ratios)} splits")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = round(ratios[0] * n)
    n_val = round(ratios[1] * n)
    shuffled = [note_ids[i] for i in order]
    train = set(shuffled[:n_train])
    val = set(shuffled[n_train:n_train + n_val])
    test = set(shuffled[n_train + n_val:])
    return train, val, test


def partition_templates(templates_by_lf: dict, train_frac: float, seed: int):
    """Per logical form, assign floor(frac * n) templates to training.

    Clamped so both sides are non-empty whenever the form has >= 2
    templates; a single-template form goes entirely to training.
    """
    if not 0.0 < train_frac < 1.0:
        raise SplitError(f"train_frac must be in (0, 1), got {train_frac}")
    rng = np.random.default_rng(seed)
    qt_train, qt_eval = {}, {}
    for lf_id in sorted(templates_by_lf):
        tids = sorted(templates_by_lf[lf_id])
        n = len(tids)
        k = math.floor(train_frac * n)
        if n >= 2:
            k = min(max(k, 1), n - 1)
        else:
            k = n
        order = rng.permutation(n)
        shuffled = [tids[i] for i in order]
        qt_train[lf_id] = sorted(shuffled[:k])
        qt_eval[lf_id] = sorted(shuffled[k:])
    return qt_train, qt_eval


def make_assignment(notes, templates, mode: str, seed: int,
                    ratios=(0.7, 0.15, 0.15), train_frac: float = 0.7
                    ) -> SplitAssignment:
    if mode not in ("pl", "r"):
        raise SplitError(f"unknown split mode {mode!r}")
    note_ids = [n.note_id for n in notes]
    train_n, val_n, test_n = split_notes(note_ids, ratios, seed)
    by_lf: dict[int, list] = {}
    for t in templates:
        by_lf.setdefault(t.lf_id, []).append(t.template_id)
    qt_train, qt_eval = partition_templates(by_lf, train_frac, seed)
    return SplitAssignment(
        mode=mode, seed=seed, train_frac=train_frac,
        train_notes=train_n, val_notes=val_n, test_notes=test_n,
        templates_train=qt_train, templates_eval=qt_eval)


def filter_examples(examples, assignment: SplitAssignment):
    """Route examples to train/val/test per the assignment.

    pl mode drops train-note examples whose template is held out (and
    vice versa); r mode trains on every template. Val/test always use
    held-out templates only, so the two modes share an evaluation set.
    """
    train_tids = {tid for tids in assignment.templates_train.values()
                  for tid in tids}
    eval_tids = {tid for tids in assignment.templates_eval.values()
                 for tid in tids}
    known = train_tids | eval_tids
    train, val, test = [], [], []
    for ex in examples:
        if ex.question_template_id not in known:
            raise SplitError(
                f"example {ex.id} references unknown template "
                f"{ex.question_template_id!r}")
        if ex.note_id in assignment.train_notes:
            if assignment.mode == "r" or ex.question_template_id in train_tids:
                train.append(ex)
        elif ex.note_id in assignment.val_notes:
            if ex.question_template_id in eval_tids:
                val.append(ex)
        elif ex.note_id in assignment.test_notes:
            if ex.question_template_id in eval_tids:
                test.append(ex)
    return train, val, test


def leakage_audit(train, evals, assignment: SplitAssignment) -> dict:
    """Counts of template/note overlap between train and eval sets."""
    train_templates = {ex.question_template_id for ex in train}
    eval_templates = {ex.question_template_id for ex in evals}
    train_note_ids = {ex.note_id for ex in train}
    eval_note_ids = {ex.note_id for ex in evals}
    report = {
        "mode": assignment.mode,
        "note_overlap": len(train_note_ids & eval_note_ids),
        "template_overlap": (len(train_templates & eval_templates)
                             if assignment.mode == "pl" else None),
    }
    return report
