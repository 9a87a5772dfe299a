"""Train a Text-CNN on a synthetic corpus and classify a few held-out records.

Everything here goes through the library API; see 05_cli_walkthrough.sh for the
same flow driven from the command line.
"""

from hscls._seeds import derive_seed
from hscls.corpus import SplitConfig, build_vocabulary, combined_text, encode_dataset, stratified_split
from hscls.models import TEXTCNN_PRESETS, TrainConfig, build_text_cnn, predict, train
from hscls.synth import generate_synthetic_corpus

SEED = 0

corpus = generate_synthetic_corpus(n_classes=6, per_class=80, noise_fraction=0.2, seed=SEED)
print(f"corpus: {len(corpus)} records, {len(corpus.classes())} codes")

train_ds, test_ds = stratified_split(corpus, SplitConfig(test_fraction=0.2, seed=SEED))
fit_ds, valid_ds = stratified_split(train_ds, SplitConfig(test_fraction=0.1, seed=SEED))

vocab = build_vocabulary([combined_text(r) for r in train_ds.records], max_size=2000)
classes = train_ds.classes()
max_len = 16
fit = encode_dataset(fit_ds, vocab, max_len, class_list=classes)
valid = encode_dataset(valid_ds, vocab, max_len, class_list=classes)
test = encode_dataset(test_ds, vocab, max_len, class_list=classes)

model = build_text_cnn(TEXTCNN_PRESETS["prose_345"], len(vocab), len(classes), max_len,
                       seed=derive_seed(SEED, "demo/cnn"))
weights, history = train(model, fit, valid,
                         TrainConfig(epochs=12, batch_size=32, seed=SEED, early_stop_patience=3),
                         vocab_hash=vocab.content_hash(), class_list=classes)
for row in history:
    print(f"  epoch {row['epoch']:2d}  loss {row['train_loss']:.4f}  valid_acc {row['valid_accuracy']:.3f}")

preds = predict(weights, test)
acc = sum(p.code == classes[s.label_id] for p, s in zip(preds, test)) / len(test)
print(f"test accuracy: {acc:.3f}")

print("\nsample predictions:")
for rec, pred in list(zip(test_ds.records, preds))[:5]:
    top = ", ".join(f"{c}:{p:.2f}" for c, p in zip(pred.top_codes, pred.top_probs))
    print(f"  {rec.record_id}  true={rec.hs_code}  pred={pred.code}  band={pred.band}  top=[{top}]")
