"""Paired baseline-vs-memory runs over several seeds."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

from .data import SynthConfig, generate
from .evaluation import RankingResult, evaluate
from .trainer import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ("seed", "rank1_base", "rank1_mgmra", "map_base", "map_mgmra")


@dataclass
class SeedRun:
    seed: int
    baseline: TrainResult
    mgmra: TrainResult
    base_eval: RankingResult
    mgmra_eval: RankingResult
    seconds: float

    def row(self) -> dict[str, float]:
        return {
            "seed": self.seed,
            "rank1_base": self.base_eval.rank1,
            "rank1_mgmra": self.mgmra_eval.rank1,
            "map_base": self.base_eval.map,
            "map_mgmra": self.mgmra_eval.map,
        }


def paired_run(seed: int, synth: SynthConfig, cfg: TrainConfig, eval_seeds=range(10)) -> SeedRun:
    """Train both arms on the dataset drawn with ``seed`` and evaluate in main mode.

    Both arms share the encoder initialization and batch order, so the only
    difference is the memory branch.
    """
    start = time.perf_counter()
    train_set, query, gallery = generate(replace(synth, seed=seed))
    base = train(replace(cfg, seed=seed, mgmra_enabled=False), train_set)
    full = train(replace(cfg, seed=seed, mgmra_enabled=True), train_set)
    run = SeedRun(
        seed,
        base,
        full,
        evaluate(base.model, query, gallery, "main", eval_seeds),
        evaluate(full.model, query, gallery, "main", eval_seeds),
        time.perf_counter() - start,
    )
    log.info("seed %d: %s (%.1fs)", seed, run.row(), run.seconds)
    return run


def ablate(seeds, synth: SynthConfig = SynthConfig(), cfg: TrainConfig = TrainConfig(), eval_seeds=range(10)):
    return [paired_run(s, synth, cfg, eval_seeds) for s in seeds]


def write_ablation_csv(path, runs) -> None:
    lines = [",".join(ABLATION_COLUMNS)]
    for run in runs:
        row = run.row()
        lines.append(",".join([str(row["seed"])] + [repr(float(row[k])) for k in ABLATION_COLUMNS[1:]]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
