"""
Baseline versus memory-regulated training
=========================================

Both arms share encoder initialization and batch order; only the memory
branch differs.  Pass a number of epochs on the command line for a quicker
run (the default of 30 takes about a minute per seed).
"""

import sys

from mgmra.experiments import ablate
from mgmra.trainer import TrainConfig

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
runs = ablate(range(2), cfg=TrainConfig(epochs=epochs))
print("seed  rank1_base  rank1_mgmra  map_base  map_mgmra")
for run in runs:
    r = run.row()
    print(f"{r['seed']:4d}  {r['rank1_base']:10.3f}  {r['rank1_mgmra']:11.3f}  {r['map_base']:8.3f}  {r['map_mgmra']:9.3f}")
