"""
Checking gradients by central differences
=========================================

Every operation in the autodiff engine can be compared against finite
differences.  Here the full training objective of a tiny model is checked
with respect to every parameter.
"""

import numpy as np

from mgmra import numerics as nx
from mgmra.encoder import EncoderConfig, EncoderParams
from mgmra.losses import LossWeights
from mgmra.memory import MemoryConfig, PrototypeMemory
from mgmra.trainer import ModelParams, batch_losses

rng = nx.make_rng(0)
encoder = EncoderParams.init(EncoderConfig(input_dim=5, hidden_dim=4, feature_dim=3, num_stripes=2), 2, rng)
memory = PrototypeMemory.init(MemoryConfig(num_classes=2, feature_dim=3, parts_per=2, instances_per=2), rng)
model = ModelParams(encoder, memory)

x = rng.uniform(-2, 2, size=(8, 2, 5))
labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
modalities = np.array([0, 0, 1, 1, 0, 0, 1, 1])

report = batch_losses(model, x, labels, modalities, LossWeights())
print({k: round(v, 4) for k, v in report.values().items()})

err = nx.grad_check(lambda: batch_losses(model, x, labels, modalities, LossWeights()).total,
                    list(model.tensors().values()))
print(f"max relative gradient error: {err:.2e}")
