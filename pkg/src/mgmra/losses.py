"""Training objectives.  Every function returns a scalar :class:`Tensor`."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import ContractError, NumericHealthError, SamplingError
from .numerics import Tensor

ENTROPY_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 1.0
    margin_tri: float = 0.3
    margin_sem: float = 0.3
    # Accepted for completeness; no term is scaled by it.
    beta: float = 0.05

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ContractError(f"LossWeights.{name} must be nonnegative")


@dataclass
class LossReport:
    id: Tensor
    hc_tri: Tensor
    mem_sparsity: Tensor
    ins: Tensor
    sem: Tensor
    total: Tensor

    COLUMNS = ("id", "hc_tri", "mem_sparsity", "ins", "sem", "total")

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name).item() for f in fields(self)}


def _labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ContractError(f"expected {n} labels, got shape {labels.shape}")
    return labels


def identity_ce(logits: Sequence[Tensor], labels) -> Tensor:
    """Cross-entropy averaged over stripes and samples; one logit matrix per stripe."""
    if not logits:
        raise ContractError("identity_ce: no logit matrices")
    n, num_classes = logits[0].shape
    labels = _labels(labels, n)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ContractError(f"identity_ce: labels must lie in [0, {num_classes})")
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), labels] = 1.0
    per_stripe = [nx.sum(nx.mul(nx.log_softmax_rows(z), onehot)) for z in logits]
    return nx.scale(_add_all(per_stripe), -1.0 / (n * len(logits)))


def _add_all(terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = nx.add(total, t)
    return total


def hetero_center_triplet(features, labels, modalities, margin: float = 0.3) -> Tensor:
    """Hinge on per-(identity, modality) feature centers.

    For each center the positive is the other-modality center of the same
    identity and the negative is the nearest center of any other identity.
    """
    f = nx.constant(features)
    n = f.shape[0]
    labels = _labels(labels, n)
    modalities = _labels(modalities, n)
    ids = np.unique(labels)
    if ids.size < 2:
        raise SamplingError("hetero_center_triplet: need at least two identities")
    groups = []
    for i in ids:
        for m in (0, 1):
            members = (labels == i) & (modalities == m)
            if not members.any():
                raise SamplingError(f"hetero_center_triplet: identity {i} has no modality-{m} sample")
            groups.append(members / members.sum())
    centers = nx.matmul(np.array(groups), f)
    dist = nx.pairwise_distances(centers)
    center_id = np.repeat(ids, 2)
    k = center_id.size
    partner = np.arange(k) ^ 1
    pos_mask = np.zeros((k, k))
    pos_mask[np.arange(k), partner] = 1.0
    d_pos = nx.sum(nx.mul(dist, pos_mask), axis=1)
    d_neg = nx.masked_min(dist, center_id[:, None] != center_id[None, :], axis=1)
    hinge = nx.relu(nx.add(nx.sub(d_pos, d_neg), margin))
    return nx.mean(hinge)


def instance_consistency(h_ins_set: Sequence[Tensor], rng: np.random.Generator) -> Tensor:
    """MSE between two random halves of the per-stripe instance readouts.

    The stripes are shuffled with ``rng`` and the k-th member of the first
    half is paired with the k-th member of the second half; with an odd count
    the last shuffled stripe is dropped.
    """
    if len(h_ins_set) < 2:
        raise ContractError("instance_consistency: need at least two stripes")
    order = rng.permutation(len(h_ins_set))
    half = len(order) // 2
    first = nx.concat_rows([h_ins_set[i] for i in order[:half]])
    second = nx.concat_rows([h_ins_set[i] for i in order[half : 2 * half]])
    diff = nx.sub(first, second)
    return nx.mean(nx.mul(diff, diff))


def semantic_triplet(h, labels, margin: float = 0.3) -> Tensor:
    """Batch-all Euclidean triplet loss, averaged over every valid (a, p, n)."""
    h = nx.constant(h)
    n = h.shape[0]
    labels = _labels(labels, n)
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(n, dtype=bool)
    valid = pos[:, :, None] & ~same[:, None, :]
    count = int(valid.sum())
    if count == 0:
        raise ContractError("semantic_triplet: batch has no valid (anchor, positive, negative) triplet")
    d = nx.pairwise_distances(h)
    gap = nx.sub(nx.reshape(d, (n, n, 1)), nx.reshape(d, (n, 1, n)))
    hinge = nx.relu(nx.add(gap, margin))
    return nx.scale(nx.sum(nx.mul(hinge, valid)), 1.0 / count)


def memory_sparsity(weights: Sequence[Tensor]) -> Tensor:
    """Addressing entropy: per matrix the mean row entropy, then averaged over matrices."""
    if isinstance(weights, Tensor):
        weights = [weights]
    per_level = []
    for w in weights:
        ent = nx.mul(w, nx.log(nx.add(w, ENTROPY_EPS)))
        per_level.append(nx.scale(nx.sum(ent), -1.0 / w.shape[0]))
    return nx.scale(_add_all(per_level), 1.0 / len(per_level))


def total_loss(
    id: Tensor,  # noqa: A002
    hc_tri: Tensor,
    mem_sparsity: Tensor,
    ins: Tensor,
    sem: Tensor,
    weights: LossWeights = LossWeights(),
) -> LossReport:
    parts = dict(id=id, hc_tri=hc_tri, mem_sparsity=mem_sparsity, ins=ins, sem=sem)
    parts = {k: nx.constant(v) for k, v in parts.items()}
    for name, t in parts.items():
        if not math.isfinite(t.item()):
            raise NumericHealthError(f"total_loss: component '{name}' is not finite")
    total = nx.add(parts["id"], parts["hc_tri"])
    for name, lam in (("mem_sparsity", weights.lambda1), ("ins", weights.lambda2), ("sem", weights.lambda3)):
        total = nx.add(total, nx.scale(parts[name], lam))
    return LossReport(total=total, **parts)
