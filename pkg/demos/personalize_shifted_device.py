"""
Training, domain shift and personalization
==========================================

A general model is trained on a few synthetic subjects, then tested on
a subject recorded with a rotated, rescaled and noisier device. Fine-tuning
on the first 30 s of that subject (dense layers first, then the whole
network at a smaller rate) recovers most of the lost accuracy.

Takes about ten seconds on one core.
"""

from stepnet.counting import evaluate
from stepnet.ingest import SHIFTED_DEVICE, synth_cohort
from stepnet.model import AdaptConfig, TrainConfig, adapt, split_adaptation, train_general
from stepnet.signal import prepare

source = [prepare(r) for r, _ in synth_cohort(4, 180, seed=7)]
target = prepare(synth_cohort(1, 180, seed=8, shift=SHIFTED_DEVICE, prefix="T")[0][0])

net = train_general(source, TrainConfig(epochs=4))
print("loss per epoch:", [round(v, 4) for v in net.loss_history])

for ws in source[:2]:
    r = evaluate(net, ws)
    print(f"{r.subject_id} (same device): class {r.accuracy_class:5.1f}%  steps {r.accuracy_steps:5.1f}%")

adapt_part, test_part = split_adaptation(target, 30)
before = evaluate(net, test_part)
print(f"{before.subject_id} (shifted) before: class {before.accuracy_class:5.1f}%  steps {before.accuracy_steps:5.1f}%")

tuned = adapt(net, target, AdaptConfig())
after = evaluate(tuned, test_part)
print(f"{after.subject_id} (shifted) after {len(adapt_part)} windows: "
      f"class {after.accuracy_class:5.1f}%  steps {after.accuracy_steps:5.1f}%")
