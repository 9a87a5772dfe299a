"""Gaussian-process hyperparameter search over the DNN architecture knobs.

The objective trains a small DNN on a synthetic corpus and returns validation
accuracy. Budget is deliberately tiny so the demo finishes in about a minute;
raise `budget` for a real search.
"""

from hscls._seeds import derive_seed
from hscls.corpus import SplitConfig, build_vocabulary, combined_text, encode_dataset, stratified_split
from hscls.models import DnnConfig, TrainConfig, build_dnn, train
from hscls.synth import generate_synthetic_corpus
from hscls.tuner import Dimension, HyperParamSpace, tune

SEED = 0

corpus = generate_synthetic_corpus(n_classes=5, per_class=60, noise_fraction=0.2, seed=SEED)
train_ds, _ = stratified_split(corpus, SplitConfig(test_fraction=0.2, seed=SEED))
fit_ds, valid_ds = stratified_split(train_ds, SplitConfig(test_fraction=0.15, seed=SEED))

vocab = build_vocabulary([combined_text(r) for r in train_ds.records], max_size=1500)
classes = train_ds.classes()
fit = encode_dataset(fit_ds, vocab, 16, class_list=classes)
valid = encode_dataset(valid_ds, vocab, 16, class_list=classes)

space = HyperParamSpace((
    Dimension("initial_neurons", "integer", 8, 64),
    Dimension("neuron_shrink", "continuous", 0.2, 0.8),
    Dimension("dropout", "continuous", 0.0, 0.5),
    Dimension("embedding_dim", "integer", 16, 96),
))


def objective(point):
    cfg = DnnConfig(
        initial_neurons=point["initial_neurons"],
        neuron_pct=1.0,
        neuron_shrink=point["neuron_shrink"],
        dropout=point["dropout"],
        embedding_dim=point["embedding_dim"],
        n_layer_cap=4,
    )
    model = build_dnn(cfg, len(vocab), len(classes), 16, seed=derive_seed(SEED, "demo/tune"))
    _, history = train(model, fit, valid,
                       TrainConfig(epochs=4, batch_size=32, seed=SEED, early_stop_patience=4))
    return max(row["valid_accuracy"] for row in history)


result = tune(space, objective, budget=10, n_init=6, seed=SEED)

print("trial log:")
for i, t in enumerate(result.history):
    mark = " <- best" if t is result.best else ""
    shown = {k: (round(v, 3) if isinstance(v, float) else v) for k, v in t.point.items()}
    print(f"  #{i:02d} {shown}  objective={t.objective:.3f}{mark}")
print(f"\nbest point: {result.best.point}")
print(f"best validation accuracy: {result.best.objective:.3f}")
for diag in result.round_diagnostics:
    print(f"  round {diag['round']}: ei_max={diag['ei_max']:.2e} length_scale={diag['length_scale']:.3f}")
