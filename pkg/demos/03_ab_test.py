"""Head-to-head A/B comparison of the DNN and the Text-CNN.

Both architectures run k-fold cross-validation on the same folds; a per-class
one-way ANOVA on the logit-transformed F-beta samples decides where the
difference is statistically significant, and the per-class winners are tallied
into an overall recommendation.
"""

from hscls.abtest import NeuralLearner, aggregate, anova_by_class, overall_winner, recommend, run_cv
from hscls.models import DNN_PRESETS, TEXTCNN_PRESETS, TrainConfig
from hscls.synth import generate_synthetic_corpus

SEED = 0
K = 3
ALPHA = 0.05
corpus = generate_synthetic_corpus(n_classes=4, per_class=40, noise_fraction=0.25, seed=SEED)

model_cfgs = {"dnn": DNN_PRESETS["paper_final"], "text_cnn": TEXTCNN_PRESETS["prose_345"]}
results = []
for kind, cfg in model_cfgs.items():
    def factory(kind=kind, cfg=cfg):
        return NeuralLearner(kind, cfg, TrainConfig(epochs=3, batch_size=32, seed=SEED),
                             max_len=16, vocab_size=1500)

    cv = run_cv(factory, kind, corpus, k=K, seed=SEED)
    for fold_idx, message in cv.failures:
        print(f"  warning: {kind} fold {fold_idx} failed: {message}")
    results.append(cv)

table = aggregate(results)
anova = anova_by_class(results, metric="f_beta")
recs = recommend(table, anova, alpha=ALPHA, metric="f_beta")

print(f"{'class':8s}  {'dnn':>6s}  {'text_cnn':>9s}  {'p':>8s}  winner")
for rec in recs:
    label = rec.class_label
    dnn_f = table.values[("dnn", label, "f_beta", "mean")]
    cnn_f = table.values[("text_cnn", label, "f_beta", "mean")]
    p = "-" if rec.p_value is None else f"{rec.p_value:.4f}"
    flag = "*" if rec.significant else " "
    print(f"{label:8s}  {dnn_f:6.3f}  {cnn_f:9.3f}  {p:>8s}  {rec.winner}{flag}")

n_sig = sum(r.significant for r in recs)
print(f"\nmean accuracy: " + "  ".join(f"{m}={a:.3f}" for m, a in table.accuracies.items()))
print(f"overall winner: {overall_winner(recs, table)} "
      f"({n_sig} of {len(recs)} classes significant at alpha={ALPHA})")
