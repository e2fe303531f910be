"""
Reading a prototype memory
==========================

A query attends over prototype rows by cosine similarity; the softmax of
those similarities are the addressing weights and the readout is the
weighted sum of rows.  Three levels are chained: parts, instances (gated
means of parts) and semantics (gated means of instances).
"""

import numpy as np

from mgmra import MemoryConfig, PrototypeMemory, make_rng, mg_mra_forward, sg_mra_read

# Two orthogonal prototypes; a query aligned with the first one.
h, w = sg_mra_read(np.array([[1.0, 0.0]]), np.eye(2))
print("weights", w.value.round(4), "readout", h.value.round(4))

# Scaling the query leaves the weights alone.
_, w5 = sg_mra_read(np.array([[5.0, 0.0]]), np.eye(2))
print("same weights after scaling:", np.allclose(w.value, w5.value))

# A full hierarchy with the default counts: 6 parts, 5 instances, 1 semantic per class.
cfg = MemoryConfig(num_classes=4, feature_dim=16)
mem = PrototypeMemory.init(cfg, make_rng(0))
print("rows per level:", cfg.level_sizes)

readout = mg_mra_forward(make_rng(1).standard_normal((3, 16)), mem)
for name, weights in zip(("part", "instance", "semantic"), readout.weights):
    print(f"{name:9s} weights {weights.shape}, row sums {weights.value.sum(axis=1).round(12)}")
