"""
Cross-modality retrieval evaluation: ranking, CMC, mAP.

Two descriptor modes are available.  ``main`` uses the concatenated
normalized stripe features of the encoder alone; the prototype memory is
never touched.  ``proto`` describes each image by its addressing weights over
all three prototype levels, concatenated across stripes, and ranks by the
cosine between those weight profiles.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import RecordSet
from .encoder import encode, pooled_descriptor
from .errors import ContractError, DegenerateInputError, DimensionError
from .memory import mg_mra_forward
from .numerics import NORM_EPS, make_rng
from .trainer import Checkpoint, ModelParams, load_encoder, load_model

log = logging.getLogger(__name__)

MODES = ("main", "proto")


@dataclass
class RankingResult:
    rankings: np.ndarray
    cmc: np.ndarray
    map: float
    per_seed: list[RankingResult] = field(default_factory=list)

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])


def _unit_rows(x, what):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    bad = np.flatnonzero(norms[:, 0] <= NORM_EPS)
    if bad.size:
        raise DegenerateInputError(f"{what} descriptor {bad[0]} has zero norm")
    return x / norms


def rank_gallery(query, gallery) -> np.ndarray:
    """Gallery indices per query by descending cosine; ties keep ascending index."""
    query, gallery = np.atleast_2d(query), np.atleast_2d(gallery)
    if gallery.shape[0] == 0:
        raise ContractError("rank_gallery: empty gallery")
    if query.shape[1] != gallery.shape[1]:
        raise DimensionError(f"rank_gallery: descriptor dims {query.shape[1]} vs {gallery.shape[1]}")
    sims = _unit_rows(query, "query") @ _unit_rows(gallery, "gallery").T
    return np.argsort(-sims, axis=1, kind="stable")


def _match_matrix(rankings, query_ids, gallery_ids):
    rankings = np.asarray(rankings)
    query_ids, gallery_ids = np.asarray(query_ids), np.asarray(gallery_ids)
    matches = gallery_ids[rankings] == query_ids[:, None]
    valid = matches.any(axis=1)
    missing = int((~valid).sum())
    if missing:
        warnings.warn(f"{missing} queries have no matching gallery identity and were excluded", stacklevel=3)
    return matches[valid]


def compute_cmc(rankings, query_ids, gallery_ids, max_rank: int | None = None) -> np.ndarray:
    """``cmc[r-1]`` = fraction of queries whose first correct match is at rank <= r."""
    n_gallery = np.asarray(rankings).shape[1]
    max_rank = n_gallery if max_rank is None else max_rank
    if max_rank > n_gallery:
        raise ContractError(f"compute_cmc: max_rank {max_rank} exceeds gallery size {n_gallery}")
    matches = _match_matrix(rankings, query_ids, gallery_ids)
    if matches.shape[0] == 0:
        return np.zeros(max_rank)
    first_hit = matches.argmax(axis=1)
    hits = np.bincount(first_hit, minlength=n_gallery).cumsum()[:max_rank]
    return hits / matches.shape[0]


def compute_map(rankings, query_ids, gallery_ids) -> float:
    matches = _match_matrix(rankings, query_ids, gallery_ids)
    if matches.shape[0] == 0:
        return 0.0
    positions = np.arange(1, matches.shape[1] + 1)
    precision = matches.cumsum(axis=1) / positions
    ap = (precision * matches).sum(axis=1) / matches.sum(axis=1)
    return float(ap.mean())


def _ranking_result(rankings, query_ids, gallery_ids, max_rank=None) -> RankingResult:
    return RankingResult(
        rankings,
        compute_cmc(rankings, query_ids, gallery_ids, max_rank),
        compute_map(rankings, query_ids, gallery_ids),
    )


# ---------------------------------------------------------------- descriptors


def main_descriptors(model: ModelParams, records: RecordSet) -> np.ndarray:
    sb = encode(records.features(), records.modalities.astype(np.int64), model.encoder)
    return pooled_descriptor(sb)


def proto_descriptors(model: ModelParams, records: RecordSet) -> np.ndarray:
    """Per stripe ``w_part ++ w_ins ++ w_sem``, concatenated over stripes."""
    if model.memory is None:
        raise ContractError("proto descriptors need a model with a prototype memory")
    sb = encode(records.features(), records.modalities.astype(np.int64), model.encoder)
    blocks = []
    for f in sb.features:
        readout = mg_mra_forward(f, model.memory)
        blocks += [w.value for w in readout.weights]
    return np.concatenate(blocks, axis=1)


def _descriptors(model, records, mode):
    if mode == "main":
        return main_descriptors(model, records)
    if mode == "proto":
        return proto_descriptors(model, records)
    raise ContractError(f"unknown evaluation mode {mode!r}; expected one of {MODES}")


def proto_index_retrieve(query: RecordSet, gallery: RecordSet, model: ModelParams, max_rank=None) -> RankingResult:
    q, g = proto_descriptors(model, query), proto_descriptors(model, gallery)
    return _ranking_result(rank_gallery(q, g), query.identities, gallery.identities, max_rank)


def main_retrieve(query: RecordSet, gallery: RecordSet, model: ModelParams, max_rank=None) -> RankingResult:
    q, g = main_descriptors(model, query), main_descriptors(model, gallery)
    return _ranking_result(rank_gallery(q, g), query.identities, gallery.identities, max_rank)


def single_shot_indices(gallery: RecordSet, seed: int) -> np.ndarray:
    """One randomly chosen gallery sample per identity, in ascending identity order."""
    rng = make_rng(seed)
    return np.array(
        [rng.choice(np.flatnonzero(gallery.identities == i)) for i in np.unique(gallery.identities)],
        dtype=np.int64,
    )


def evaluate(
    model: ModelParams | Checkpoint,
    query: RecordSet,
    gallery: RecordSet,
    mode: str = "main",
    seeds: Iterable[int] = range(10),
    report_path=None,
    dump_rankings: bool = False,
) -> RankingResult:
    """Single-shot evaluation averaged over gallery-sampling seeds.

    In ``main`` mode a checkpoint is loaded without its memory tensors, so the
    output cannot depend on them.
    """
    if mode not in MODES:
        raise ContractError(f"unknown evaluation mode {mode!r}; expected one of {MODES}")
    if isinstance(model, Checkpoint):
        model = ModelParams(load_encoder(model)) if mode == "main" else load_model(model)
    cfg = model.encoder.config
    for name, rs in (("query", query), ("gallery", gallery)):
        if (rs.num_stripes, rs.input_dim) != (cfg.num_stripes, cfg.input_dim):
            raise DimensionError(
                f"{name} set has {rs.num_stripes}x{rs.input_dim} stripes, "
                f"model expects {cfg.num_stripes}x{cfg.input_dim}"
            )

    q_desc = _descriptors(model, query, mode)
    g_desc = _descriptors(model, gallery, mode)
    per_seed = []
    for seed in seeds:
        pick = single_shot_indices(gallery, seed)
        rankings = rank_gallery(q_desc, g_desc[pick])
        per_seed.append(_ranking_result(rankings, query.identities, gallery.identities[pick]))
    if not per_seed:
        raise ContractError("evaluate: no evaluation seeds")
    result = RankingResult(
        np.stack([r.rankings for r in per_seed]),
        np.mean([r.cmc for r in per_seed], axis=0),
        float(np.mean([r.map for r in per_seed])),
        per_seed,
    )
    log.info("%s mode: rank1=%.4f mAP=%.4f", mode, result.rank1, result.map)
    if report_path is not None:
        write_report(report_path, result, dump_rankings)
    return result


def write_report(path, result: RankingResult, dump_rankings: bool = False) -> None:
    lines = ["rank,cmc"]
    lines += [f"{r},{float(c)!r}" for r, c in enumerate(result.cmc, start=1)]
    lines.append(f"mAP,{result.map!r}")
    Path(path).write_text("\n".join(lines) + "\n")
    if dump_rankings:
        dump = Path(path).with_suffix(".rankings.csv")
        rows = ["seed,query," + "ordered_gallery_indices"]
        for s, r in enumerate(result.per_seed or [result]):
            rows += [f"{s},{q}," + " ".join(map(str, order)) for q, order in enumerate(r.rankings)]
        dump.write_text("\n".join(rows) + "\n")
