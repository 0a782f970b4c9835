"""
How much target audio does fine-tuning need?
============================================

A model trained on array SA is fine-tuned with growing amounts of SB
audio.  The reference is a model trained on SB alone.
"""

from pathlib import Path

import torch

from replayarray.dataset import load_manifest
from replayarray.evaluation import budget_curve, write_budget_curve
from replayarray.model import ModelConfig
from replayarray.synth import contrast_spec, generate_corpus
from replayarray.training import FinetuneConfig, TrainConfig, train

torch.set_num_threads(1)
out = Path("demo_output/finetune")
generate_corpus(contrast_spec(), seed=1, out_dir=out / "corpus")
data = load_manifest(out / "corpus" / "manifest.csv")

cfg = TrainConfig(train_channels=(2, 3), epochs=10, model=ModelConfig.compact())
source = train(cfg, data)
print("source final loss %.4f" % source.history[-1])

# One entry is one second of analysed audio, so 0.25 min = 15 recordings.
template = FinetuneConfig(source, target_channels=(12, 13), budget_minutes=0.25, train=cfg)
curve = budget_curve(template, [0.25, 0.5, 1.0], data, n_runs=2)
for budget, iv in zip(curve.budgets, curve.intervals):
    print("%5.2f min  EER %s" % (budget, iv))
print("SB only    EER %s" % curve.lower_bound)

for path in write_budget_curve(curve, out, emit_image=True):
    print("wrote", path)
