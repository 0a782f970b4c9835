"""
Training on one array, testing on another
=========================================

Two synthetic 16 kHz arrays whose microphones colour the sound very
differently.  A detector trained on one array does well on it and much
worse on the other.  Short training keeps the demo to a few minutes.
"""

from pathlib import Path

import numpy as np
import torch

from replayarray.dataset import load_manifest
from replayarray.evaluation import mismatch_matrix, write_matrix
from replayarray.model import ModelConfig
from replayarray.synth import contrast_spec, generate_corpus
from replayarray.training import TrainConfig

torch.set_num_threads(1)
out = Path("demo_output/mismatch")

generate_corpus(contrast_spec(), seed=1, out_dir=out / "corpus")
data = load_manifest(out / "corpus" / "manifest.csv")
print(len(data.filter(split="train")), "training and", len(data.filter(split="test")), "test recordings over both arrays")

configs = [(2, 3), (12, 13)]
base = TrainConfig(epochs=10, model=ModelConfig.compact())
matrix = mismatch_matrix(configs, configs, base, data, n_runs=2)

print("rows train, columns test; mean EER")
for row, values in zip(configs, matrix.mean_table()):
    print(row, np.round(values, 3))

# A partially overlapping pair would leak a training microphone.
leaky = mismatch_matrix([(12, 13)], [(13, 2)], base, data, n_runs=2)
print("(12,13) -> (13,2):", leaky[(12, 13), (13, 2)].reason)

for path in write_matrix(matrix, out, emit_image=True):
    print("wrote", path)
