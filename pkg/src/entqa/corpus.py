"""Synthetic clinical-style QA corpus: notes, facts, templates, logical forms.

Stands in for licensed EMR QA data with the same schema: each note is a
list of sentences realizing structured facts, questions are produced by
slot-filling paraphrase templates tied to logical forms, and answers are
character spans inside the evidence sentence.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .textpipe import Gazetteer

# ---------------------------------------------------------------------------
# Logical form inventory: eight relation forms plus the dosage form.
# ---------------------------------------------------------------------------

LF_STRINGS = [
    "MedicationEvent (|medication|) [dosage=x]",
    "MedicationEvent (|medication|) [sig=x]",
    "MedicationEvent (|medication|) causes {ConditionEvent (x) OR SymptomEvent (x)}",
    "MedicationEvent (|medication|) given {ConditionEvent (x) OR SymptomEvent (x)}",
    "[ProcedureEvent (|treatment|) given/conducted {ConditionEvent (x) OR "
    "SymptomEvent (x)}] OR [MedicationEvent (|treatment|) given {ConditionEvent (x) "
    "OR SymptomEvent (x)}]",
    "{MedicationEvent (x) CheckIfNull ([enddate]) OR MedicationEvent (x) "
    "[enddate>currentDate] OR ProcedureEvent (x) [date=x]} given {ConditionEvent "
    "(|problem|) OR SymptomEvent (|problem|)}",
    "{MedicationEvent (x) CheckIfNull ([enddate]) OR MedicationEvent (x) "
    "[enddate>currentDate]} given {ConditionEvent (|problem|) OR SymptomEvent "
    "(|problem|)}",
    "{MedicationEvent (|treatment|) OR ProcedureEvent (|treatment|)} given "
    "{ConditionEvent (x) OR SymptomEvent (x)}",
    "{MedicationEvent (|treatment|) OR ProcedureEvent (|treatment|)} "
    "improves/worsens/causes {ConditionEvent (x) OR SymptomEvent (x)}",
]

NUM_LF = len(LF_STRINGS)

_LF_TOKEN_RE = re.compile(r"\|[^|\s]+\||[^\s()\[\]{}=,]+")


def lf_tokenize(lf_string: str) -> Counter:
    """Token multiset of a logical-form string.

    Splits on whitespace and the delimiters ( ) [ ] { } = , while
    keeping |slot| markers as single tokens; empty fragments dropped.
    """
    return Counter(_LF_TOKEN_RE.findall(lf_string))


@dataclass(frozen=True)
class LogicalForm:
    lf_id: int
    lf_string: str

    @property
    def lf_tokens(self) -> Counter:
        return lf_tokenize(self.lf_string)


LOGICAL_FORMS = [LogicalForm(i, s) for i, s in enumerate(LF_STRINGS)]


# ---------------------------------------------------------------------------
# Slot vocabularies (every surface form is a gazetteer member).
# ---------------------------------------------------------------------------

MEDICATIONS = [
    "aspirin", "lisinopril", "metformin", "atorvastatin", "warfarin", "insulin",
    "amoxicillin", "penicillin", "ibuprofen", "acetaminophen", "prednisone",
    "albuterol", "omeprazole", "simvastatin", "levothyroxine", "amlodipine",
    "metoprolol", "furosemide", "gabapentin", "hydrochlorothiazide",
    "sertraline", "citalopram", "tramadol", "clopidogrel", "losartan",
    "pantoprazole", "azithromycin", "ciprofloxacin", "doxycycline", "naproxen",
    "digoxin", "heparin",
]

CONDITIONS = [
    "hypertension", "diabetes", "pneumonia", "asthma", "anemia",
    "hyperlipidemia", "hypothyroidism", "osteoporosis", "depression",
    "arthritis", "bronchitis", "cellulitis", "gout", "obesity", "insomnia",
]

SYMPTOMS = [
    "nausea", "headache", "dizziness", "fatigue", "cough", "fever",
    "vomiting", "rash", "chest pain", "shortness of breath", "diarrhea",
    "constipation", "palpitations", "itching", "swelling",
]

PROCEDURES_DIAP = [
    "chest x ray", "ct scan", "mri scan", "echocardiogram", "colonoscopy",
    "ultrasound", "biopsy",
]
PROCEDURES_LBPR = [
    "blood culture", "urinalysis", "lipid panel", "complete blood count",
]
PROCEDURES_TOPP = [
    "physical therapy", "dialysis", "chemotherapy", "radiation therapy",
    "wound debridement",
]
PROCEDURES = PROCEDURES_DIAP + PROCEDURES_LBPR + PROCEDURES_TOPP

DOSE_AMOUNTS = [5, 10, 20, 25, 40, 50, 75, 100, 150, 250, 500]
DOSE_UNITS = ["mg", "mcg", "units"]
DOSAGES = [f"{a} {u}" for a in DOSE_AMOUNTS for u in DOSE_UNITS]

SIGS = [
    "once daily", "twice daily", "three times daily", "every morning",
    "every night at bedtime", "every six hours", "as needed", "with meals",
]


def build_gazetteer() -> Gazetteer:
    """Gazetteer over every slot surface form, keyed by semantic type."""
    entries: dict[str, str] = {}
    for m in MEDICATIONS:
        entries[m] = "clnd"
    for c in CONDITIONS:
        entries[c] = "fndg"
    for s in SYMPTOMS:
        entries[s] = "sosy"
    for p in PROCEDURES_DIAP:
        entries[p] = "diap"
    for p in PROCEDURES_LBPR:
        entries[p] = "lbpr"
    for p in PROCEDURES_TOPP:
        entries[p] = "topp"
    for d in DOSAGES:
        entries[d] = "qnco"
    return Gazetteer(entries)


# ---------------------------------------------------------------------------
# Fact kinds: one per logical form. Each fact maps to one sentence and the
# logical form designates which slot is the answer.
# ---------------------------------------------------------------------------

# kind -> (question slot name, answer slot name)
FACT_KINDS = {
    "dosage": ("medication", "dose"),
    "sig": ("medication", "sig"),
    "adverse": ("medication", "symptom"),
    "med_for": ("medication", "problem"),
    "proc_for": ("treatment", "problem"),
    "care_plan": ("problem", "treatment"),
    "med_current": ("problem", "medication"),
    "treat_for": ("treatment", "problem"),
    "treat_effect": ("treatment", "symptom"),
}
KIND_ORDER = list(FACT_KINDS)
KIND_TO_LF = {kind: i for i, kind in enumerate(KIND_ORDER)}

# Paired fact kinds share one template family so the sentence alone never
# reveals which slot is being asked about; the question has to decide.
_MED_DOSE_SIG = [
    "the patient was started on {medication} {dose} {sig} .",
    "{medication} {dose} {sig} was prescribed at discharge .",
    "current regimen includes {medication} {dose} taken {sig} .",
]
_MED_PROBLEM_SYMPTOM = [
    "{medication} was given for {problem} but caused {symptom} .",
    "the patient is on {medication} for {problem} and developed {symptom} .",
    "{medication} , prescribed to control {problem} , was linked to {symptom} .",
]
_TREAT_PROBLEM_SYMPTOM = [
    "{treatment} administered to treat {problem} improved the {symptom} .",
    "after {treatment} for {problem} the patient's {symptom} resolved .",
    "{treatment} , provided in response to {problem} , helped the {symptom} .",
]

SENTENCE_TEMPLATES = {
    "dosage": _MED_DOSE_SIG,
    "sig": _MED_DOSE_SIG,
    "adverse": _MED_PROBLEM_SYMPTOM,
    "med_for": _MED_PROBLEM_SYMPTOM,
    "proc_for": [
        "{treatment} was conducted for {problem} .",
        "the patient underwent {treatment} for evaluation of {problem} .",
        "{treatment} was ordered because of {problem} .",
    ],
    "care_plan": [
        "for {problem} the plan is to continue {treatment} .",
        "{problem} will be managed with {treatment} .",
        "the team decided to treat {problem} with {treatment} .",
    ],
    "med_current": [
        "for {problem} the patient remains on {medication} .",
        "ongoing {problem} is controlled with {medication} .",
        "{medication} continues to be taken for the patient's {problem} .",
    ],
    "treat_for": _TREAT_PROBLEM_SYMPTOM,
    "treat_effect": _TREAT_PROBLEM_SYMPTOM,
}

DISTRACTOR_TEMPLATES = [
    "family history is notable for {condition} .",
    "allergies include {medication} .",
    "{medication} was discontinued last year .",
    "the patient denies {symptom} .",
    "review of systems is negative for {symptom} .",
    "{procedure} from a prior admission was unremarkable .",
    "there is a remote history of {condition} .",
    "the patient previously declined {procedure} .",
]


# ---------------------------------------------------------------------------
# Question templates: eight paraphrases per logical form.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuestionTemplate:
    template_id: str
    lf_id: int
    pattern: str  # contains exactly one |slot| marker

    @property
    def slot(self) -> str:
        m = re.search(r"\|([^|]+)\|", self.pattern)
        return m.group(1)

    def fill(self, value: str) -> str:
        return self.pattern.replace(f"|{self.slot}|", value)


_QUESTION_PATTERNS = {
    0: [
        "what is the dosage of |medication| ?",
        "what dose of |medication| does the patient take ?",
        "how much |medication| does the patient take per day ?",
        "what is the current dose of |medication| ?",
        "what was the dosage prescribed of |medication| ?",
        "what amount of |medication| is the patient on ?",
        "at what strength is |medication| given ?",
        "how many milligrams of |medication| are prescribed ?",
    ],
    1: [
        "how often does the patient take |medication| ?",
        "what is the sig of |medication| ?",
        "when should the patient take |medication| ?",
        "what is the dosing schedule for |medication| ?",
        "how frequently is |medication| taken ?",
        "what are the instructions for taking |medication| ?",
        "on what schedule is |medication| administered ?",
        "how is the patient supposed to take |medication| ?",
    ],
    2: [
        "what adverse reaction did |medication| cause ?",
        "what side effect did the patient have from |medication| ?",
        "what reaction was attributed to |medication| ?",
        "what symptom appeared after starting |medication| ?",
        "what problem did |medication| lead to ?",
        "what did |medication| cause ?",
        "which complaint followed the start of |medication| ?",
        "what adverse event is linked to |medication| ?",
    ],
    3: [
        "why is the patient on |medication| ?",
        "what is |medication| given for ?",
        "what condition is treated with |medication| ?",
        "for what reason was |medication| prescribed ?",
        "what diagnosis led to |medication| ?",
        "what is the indication for |medication| ?",
        "why was |medication| started ?",
        "what does |medication| treat in this patient ?",
    ],
    4: [
        "why was |treatment| conducted ?",
        "what was the reason for the |treatment| ?",
        "what condition prompted the |treatment| ?",
        "for what was the |treatment| performed ?",
        "what was |treatment| done to evaluate ?",
        "what finding led to the |treatment| ?",
        "why did the patient undergo |treatment| ?",
        "what is the indication for the |treatment| ?",
    ],
    5: [
        "what is the plan for |problem| ?",
        "how will |problem| be managed ?",
        "what treatment is planned for |problem| ?",
        "what is being done about |problem| ?",
        "how is |problem| being addressed ?",
        "what therapy was chosen for |problem| ?",
        "what is the management strategy for |problem| ?",
        "what will the patient receive for |problem| ?",
    ],
    6: [
        "what medication is the patient on for |problem| ?",
        "which drug controls the patient's |problem| ?",
        "what does the patient take for |problem| ?",
        "what is prescribed for the |problem| ?",
        "which medication manages |problem| ?",
        "what current medication addresses |problem| ?",
        "what is the patient taking for |problem| ?",
        "which agent is used for |problem| ?",
    ],
    7: [
        "what was |treatment| administered for ?",
        "what problem did |treatment| address ?",
        "what was the |treatment| meant to treat ?",
        "which condition was |treatment| given for ?",
        "what was treated with |treatment| ?",
        "what illness required |treatment| ?",
        "what was the target of the |treatment| ?",
        "for which complaint did the patient receive |treatment| ?",
    ],
    8: [
        "what symptom did |treatment| improve ?",
        "which complaint changed after |treatment| ?",
        "what got better with |treatment| ?",
        "what symptom responded to |treatment| ?",
        "which symptom was affected by |treatment| ?",
        "what complaint did the |treatment| help ?",
        "which symptom did the |treatment| alter ?",
        "what improved after the patient received |treatment| ?",
    ],
}


def build_templates() -> list[QuestionTemplate]:
    out = []
    for lf_id, patterns in _QUESTION_PATTERNS.items():
        for j, pat in enumerate(patterns):
            out.append(QuestionTemplate(f"lf{lf_id}_t{j}", lf_id, pat))
    return out


# ---------------------------------------------------------------------------
# Notes and facts.
# ---------------------------------------------------------------------------

@dataclass
class Fact:
    kind: str
    slots: dict            # slot name -> surface form
    sentence_idx: int
    answer_char_span: tuple  # (start, end) within the realizing sentence

    @property
    def answer_text(self) -> str:
        return self.slots[FACT_KINDS[self.kind][1]]


@dataclass
class Note:
    note_id: int
    sentences: list
    facts: list


class ConfigurationError(ValueError):
    pass


_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def _render(template: str, values: dict, answer_key: str) -> tuple[str, tuple]:
    """Fill a sentence template, returning the answer's char span."""
    out = []
    pos = 0
    span = None
    last = 0
    for m in _PLACEHOLDER_RE.finditer(template):
        lit = template[last:m.start()]
        out.append(lit)
        pos += len(lit)
        val = values[m.group(1)]
        if m.group(1) == answer_key:
            span = (pos, pos + len(val))
        out.append(val)
        pos += len(val)
        last = m.end()
    out.append(template[last:])
    return "".join(out), span


def _sample_entity(rng, pool, used: set) -> str:
    """Draw from pool avoiding already-used surfaces where possible."""
    free = [x for x in pool if x not in used]
    choices = free if free else pool
    pick = choices[rng.integers(len(choices))]
    used.add(pick)
    return pick


def _make_fact_values(kind: str, rng, used: dict) -> dict:
    vals = {}
    if kind in ("dosage", "sig", "adverse", "med_for"):
        vals["medication"] = _sample_entity(rng, MEDICATIONS, used["med"])
    if kind in ("dosage", "sig"):
        vals["dose"] = DOSAGES[rng.integers(len(DOSAGES))]
        vals["sig"] = SIGS[rng.integers(len(SIGS))]
    if kind in ("adverse", "med_for", "treat_for", "treat_effect"):
        vals["symptom"] = _sample_entity(rng, SYMPTOMS, used["prob"])
    if kind in ("adverse", "med_for", "proc_for", "care_plan", "med_current",
                "treat_for", "treat_effect"):
        vals["problem"] = _sample_entity(rng, CONDITIONS, used["prob"])
    if kind == "proc_for":
        vals["treatment"] = _sample_entity(rng, PROCEDURES, used["proc"])
    if kind in ("care_plan", "treat_for", "treat_effect"):
        if rng.random() < 0.5:
            vals["treatment"] = _sample_entity(rng, MEDICATIONS, used["med"])
        else:
            vals["treatment"] = _sample_entity(rng, PROCEDURES, used["proc"])
    if kind == "med_current":
        vals["medication"] = _sample_entity(rng, MEDICATIONS, used["med"])
    return vals


def _make_distractor(rng, used: dict) -> str:
    tpl = DISTRACTOR_TEMPLATES[rng.integers(len(DISTRACTOR_TEMPLATES))]
    vals = {}
    if "{condition}" in tpl:
        vals["condition"] = _sample_entity(rng, CONDITIONS, used["prob"])
    if "{medication}" in tpl:
        vals["medication"] = _sample_entity(rng, MEDICATIONS, used["med"])
    if "{symptom}" in tpl:
        vals["symptom"] = _sample_entity(rng, SYMPTOMS, used["prob"])
    if "{procedure}" in tpl:
        vals["procedure"] = _sample_entity(rng, PROCEDURES, used["proc"])
    sent, _ = _render(tpl, vals, answer_key="__none__")
    return sent


def generate_corpus(seed: int, num_notes: int, facts_per_note: int = 6,
                    distractor_rate: float = 0.4) -> list[Note]:
    """Deterministically generate `num_notes` synthetic notes.

    Each fact is realized by exactly one sentence; distractor sentences
    mention gazetteer entities but answer no question. The number of
    distractors per note is binomial with mean
    facts_per_note * rate / (1 - rate).
    """
    if num_notes < 1:
        raise ConfigurationError("num_notes must be >= 1")
    if not 0.0 <= distractor_rate < 1.0:
        raise ConfigurationError("distractor_rate must be in [0, 1)")
    if not (MEDICATIONS and CONDITIONS and SYMPTOMS and PROCEDURES):
        raise ConfigurationError("empty slot vocabulary")
    rng = np.random.default_rng(seed)
    notes = []
    for note_id in range(num_notes):
        used = {"med": set(), "prob": set(), "proc": set()}
        kinds = [KIND_ORDER[rng.integers(len(KIND_ORDER))]
                 for _ in range(facts_per_note)]
        rendered = []
        for kind in kinds:
            vals = _make_fact_values(kind, rng, used)
            tpls = SENTENCE_TEMPLATES[kind]
            tpl = tpls[rng.integers(len(tpls))]
            answer_key = FACT_KINDS[kind][1]
            # slot key inside the sentence template for the answer value
            sent_key = {"dose": "dose", "sig": "sig", "symptom": "symptom",
                        "problem": "problem", "treatment": "treatment",
                        "medication": "medication"}[answer_key]
            sent, span = _render(tpl, vals, sent_key)
            rendered.append((kind, vals, sent, span))
        if distractor_rate > 0:
            n_trials = max(1, round(2 * facts_per_note * distractor_rate
                                    / (1 - distractor_rate)))
            n_distractors = int(rng.binomial(n_trials, 0.5))
        else:
            n_distractors = 0
        sentences = [sent for _, _, sent, _ in rendered]
        fact_slots = list(range(len(sentences)))
        for _ in range(n_distractors):
            sentences.append(_make_distractor(rng, used))
        order = rng.permutation(len(sentences))
        placed = {old: new for new, old in enumerate(order)}
        sentences = [sentences[old] for old in order]
        facts = [Fact(kind=kind, slots=vals, sentence_idx=placed[i],
                      answer_char_span=span)
                 for i, (kind, vals, sent, span) in enumerate(rendered)]
        facts.sort(key=lambda f: f.sentence_idx)
        notes.append(Note(note_id=note_id, sentences=sentences, facts=facts))
    return notes


# ---------------------------------------------------------------------------
# QA examples.
# ---------------------------------------------------------------------------

@dataclass
class QAExample:
    id: str
    note_id: int
    question: str
    question_template_id: str
    lf_id: int
    context_sentences: list
    evidence_idx: int
    answer: dict   # {sentence_index, char_start, char_end, text}
    question_tags: list = field(default_factory=list)  # [type, start, end]
    context_tags: list = field(default_factory=list)

    @property
    def context_text(self) -> str:
        return " ".join(self.context_sentences)

    def answer_char_span_in_context(self) -> tuple[int, int]:
        offset = sum(len(s) + 1 for s in
                     self.context_sentences[:self.answer["sentence_index"]])
        return (offset + self.answer["char_start"],
                offset + self.answer["char_end"])

    def to_json(self) -> dict:
        return {
            "id": self.id, "note_id": self.note_id, "question": self.question,
            "question_template_id": self.question_template_id,
            "lf_id": self.lf_id, "context_sentences": self.context_sentences,
            "evidence_idx": self.evidence_idx, "answer": self.answer,
            "question_tags": self.question_tags,
            "context_tags": self.context_tags,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QAExample":
        return cls(**obj)


def _tags_as_lists(gazetteer: Gazetteer, text: str) -> list:
    return [[t.semantic_type, t.char_start, t.char_end]
            for t in gazetteer.tag(text)]


def instantiate_questions(notes: list[Note], templates: list[QuestionTemplate],
                          gazetteer: Gazetteer | None = None) -> list[QAExample]:
    """Sentence-setting examples: one per (fact, compatible template)."""
    if gazetteer is None:
        gazetteer = build_gazetteer()
    by_lf: dict[int, list[QuestionTemplate]] = {}
    for t in templates:
        by_lf.setdefault(t.lf_id, []).append(t)
    missing = set(range(NUM_LF)) - set(by_lf)
    if missing:
        raise ConfigurationError(f"templates missing for LFs {sorted(missing)}")
    examples = []
    skipped = 0
    for note in notes:
        for fi, fact in enumerate(note.facts):
            lf_id = KIND_TO_LF[fact.kind]
            slot_name, _ = FACT_KINDS[fact.kind]
            slot_value = fact.slots.get(slot_name)
            sentence = note.sentences[fact.sentence_idx]
            for tpl in by_lf[lf_id]:
                if tpl.slot != slot_name or slot_value is None:
                    skipped += 1
                    continue
                question = tpl.fill(slot_value)
                cs, ce = fact.answer_char_span
                ex = QAExample(
                    id=f"n{note.note_id}-f{fi}-{tpl.template_id}",
                    note_id=note.note_id,
                    question=question,
                    question_template_id=tpl.template_id,
                    lf_id=lf_id,
                    context_sentences=[sentence],
                    evidence_idx=0,
                    answer={"sentence_index": 0, "char_start": cs,
                            "char_end": ce, "text": sentence[cs:ce]},
                    question_tags=_tags_as_lists(gazetteer, question),
                    context_tags=_tags_as_lists(gazetteer, sentence),
                )
                examples.append(ex)
    return examples


def build_paragraph_context(example: QAExample, note: Note,
                            rng: np.random.Generator,
                            gazetteer: Gazetteer | None = None,
                            min_len: int = 15, max_len: int = 20) -> QAExample:
    """Paragraph-setting variant: the evidence sentence at a random offset
    inside a window of `l_para` sentences drawn from the note.

    Draws l_para uniform in [min_len, max_len] and l_pre uniform in
    [0, l_para - 1]; the context is l_pre sentences before the evidence
    sentence, the evidence sentence, then l_para - l_pre - 1 after,
    padding with distractors where the note runs short.
    """
    if gazetteer is None:
        gazetteer = build_gazetteer()
    ev_sent = example.context_sentences[example.evidence_idx]
    ev_in_note = None
    for i, s in enumerate(note.sentences):
        if s == ev_sent:
            ev_in_note = i
            break
    if ev_in_note is None:
        raise ValueError(f"evidence sentence not found in note {note.note_id}")
    l_para = int(rng.integers(min_len, max_len + 1))
    l_pre = int(rng.integers(0, l_para))
    l_post = l_para - l_pre - 1

    used = {"med": set(), "prob": set(), "proc": set()}
    before = note.sentences[max(0, ev_in_note - l_pre):ev_in_note]
    while len(before) < l_pre:
        before.insert(0, _make_distractor(rng, used))
    after = note.sentences[ev_in_note + 1:ev_in_note + 1 + l_post]
    while len(after) < l_post:
        after.append(_make_distractor(rng, used))
    sentences = before + [ev_sent] + after
    answer = dict(example.answer)
    answer["sentence_index"] = l_pre
    out = QAExample(
        id=example.id, note_id=example.note_id, question=example.question,
        question_template_id=example.question_template_id, lf_id=example.lf_id,
        context_sentences=sentences, evidence_idx=l_pre, answer=answer,
        question_tags=example.question_tags,
        context_tags=_tags_as_lists(gazetteer, " ".join(sentences)),
    )
    return out


# ---------------------------------------------------------------------------
# Dataset serialization: JSON Lines, streaming reads.
# ---------------------------------------------------------------------------

REQUIRED_FIELDS = [
    "id", "note_id", "question", "question_template_id", "lf_id",
    "context_sentences", "evidence_idx", "answer",
    "question_tags", "context_tags",
]


class DatasetError(ValueError):
    pass


def write_dataset(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), sort_keys=True) + "\n")


def read_dataset(path):
    """Yield QAExamples one line at a time; validates each record."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"malformed JSON at line {lineno}: {e}") from e
            for key in REQUIRED_FIELDS:
                if key not in obj:
                    raise DatasetError(
                        f"line {lineno}: missing required field '{key}'")
            yield QAExample.from_json(obj)
