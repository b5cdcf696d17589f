"""Train three small systems on a paraphrase-level split and compare them
on unseen question phrasings: a plain encoder, the entity-fused encoder,
and the multi-task model with the logical-form auxiliary loss.

A single seed is shown here to keep the runtime down (roughly five
minutes on a laptop CPU); expect some seed-to-seed noise in the gaps.
"""

import numpy as np

from entqa.corpus import build_templates, generate_corpus, instantiate_questions
from entqa.model import ModelConfig
from entqa.splits import filter_examples, make_assignment
from entqa.textpipe import Vocab
from entqa.trainer import TrainConfig, encode_examples, evaluate_pairs, train

# ---------------------------------------------------------------------------
# Data: sentence-setting corpus, pl split (unseen paraphrases at eval).
# ---------------------------------------------------------------------------
notes = generate_corpus(seed=0, num_notes=110)
examples = instantiate_questions(notes, build_templates())
vocab = Vocab.build([ex.question for ex in examples]
                    + [ex.context_text for ex in examples])
assignment = make_assignment(notes, build_templates(), "pl", seed=0)
train_ex, val_ex, test_ex = filter_examples(examples, assignment)
print(f"{len(train_ex)} train / {len(val_ex)} val / {len(test_ex)} test "
      f"(vocab {len(vocab)})")

model_config = ModelConfig(vocab_size=len(vocab), hidden_dim=48, layers=1,
                           heads=2, entity_dim=12, entity_heads=2,
                           max_seq_len=48, ffn_mult=2, omega=0.3)
train_pairs = encode_examples(train_ex, vocab, model_config.max_seq_len)
val_pairs = encode_examples(val_ex, vocab, model_config.max_seq_len)
test_pairs = encode_examples(test_ex, vocab, model_config.max_seq_len)

# ---------------------------------------------------------------------------
# Train each system with the same seed and budget.
# ---------------------------------------------------------------------------
scores = {}
for system in ("baseline", "fused", "multitask"):
    config = TrainConfig(lr=5e-4, epochs=4, batch_size=32, patience=2,
                         seed=0, system=system)
    result = train(train_pairs, val_pairs, model_config, config)
    report = evaluate_pairs(result.params, result.model_config, test_pairs)
    scores[system] = report
    extra = ""
    if report.lf_exact is not None:
        extra = (f"  LF exact F1 {report.lf_exact.f1:.3f}"
                 f"  relaxed F1 {report.lf_relaxed.f1:.3f}")
    print(f"{system:<10} EM {report.em:.3f}  span F1 {report.token_f1:.3f}"
          + extra)

def gain(a, b, attr):
    return 100 * (getattr(scores[a], attr) - getattr(scores[b], attr))

print(f"\nentity fusion gain: {gain('fused', 'baseline', 'token_f1'):+.1f} "
      f"F1 / {gain('fused', 'baseline', 'em'):+.1f} EM points")
print(f"multi-task gain over fused: "
      f"{gain('multitask', 'fused', 'token_f1'):+.1f} F1 / "
      f"{gain('multitask', 'fused', 'em'):+.1f} EM points")
print("(single seed; the acceptance suite averages three)")
