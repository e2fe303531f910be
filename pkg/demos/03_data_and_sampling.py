"""
Synthetic two-modality data and PK batches
==========================================

Each identity has a per-stripe signature; the second modality sees it through
a fixed random linear distortion.  Batches hold P identities with K samples
from each modality.
"""

import tempfile
from pathlib import Path

import numpy as np

from mgmra import SynthConfig, generate, make_rng, pk_sample, read_dataset, write_dataset

train, query, gallery = generate(SynthConfig(seed=0))
print(f"train {len(train)} records, {np.unique(train.identities).size} identities")
print(f"query {len(query)} (modality 1), gallery {len(gallery)} (modality 0)")

batch = pk_sample(train, P=4, K=2, rng=make_rng(0, 2))
print("batch identities:", batch.identities.tolist())
print("batch modalities:", batch.modalities.tolist())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "train.mgmr"
    write_dataset(path, train)
    print(f"{path.stat().st_size} bytes on disk, roundtrip equal: {read_dataset(path) == train}")
