"""
Two-stream stripe encoder.

Each stripe of a sample is a ``D_in`` vector.  A modality-specific affine
layer (one per modality) is followed by a shared ``H -> H -> C`` stage, so
both streams land in one common feature space.  All stripes share the
network; each stripe has its own linear identity classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, ContractError, DegenerateInputError, DimensionError
from .numerics import NORM_EPS, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 32
    hidden_dim: int = 64
    feature_dim: int = 32
    num_stripes: int = 6

    def __post_init__(self):
        if self.num_stripes < 2:
            raise ConfigurationError("EncoderConfig.num_stripes must be >= 2")
        if min(self.input_dim, self.hidden_dim, self.feature_dim) < 1:
            raise ConfigurationError("EncoderConfig dimensions must be positive")


@dataclass
class EncoderParams:
    config: EncoderConfig
    modality_w: list[Tensor]
    modality_b: list[Tensor]
    shared_w1: Tensor
    shared_b1: Tensor
    shared_w2: Tensor
    shared_b2: Tensor
    classifiers: list[Tensor] = field(default_factory=list)

    @classmethod
    def init(cls, config: EncoderConfig, num_classes: int, rng: np.random.Generator) -> EncoderParams:
        def affine(fan_in, fan_out, bias=True):
            bound = 1.0 / np.sqrt(fan_in)
            w = nx.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            b = nx.parameter(rng.uniform(-bound, bound, size=(1, fan_out))) if bias else None
            return w, b

        d, h, c = config.input_dim, config.hidden_dim, config.feature_dim
        mod = [affine(d, h) for _ in range(2)]
        w1, b1 = affine(h, h)
        w2, b2 = affine(h, c)
        classifiers = [affine(c, num_classes, bias=False)[0] for _ in range(config.num_stripes)]
        return cls(config, [w for w, _ in mod], [b for _, b in mod], w1, b1, w2, b2, classifiers)

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for m in range(2):
            out[f"encoder.modality{m}.w"] = self.modality_w[m]
            out[f"encoder.modality{m}.b"] = self.modality_b[m]
        out.update({
            "encoder.shared.w1": self.shared_w1,
            "encoder.shared.b1": self.shared_b1,
            "encoder.shared.w2": self.shared_w2,
            "encoder.shared.b2": self.shared_b2,
        })
        for s, w in enumerate(self.classifiers):
            out[f"classifier.stripe{s}.w"] = w
        return out


@dataclass
class StripeBatch:
    """Per-stripe features (``num_stripes`` tensors of shape batch x C) plus labels."""

    features: list[Tensor]
    labels: np.ndarray | None
    modalities: np.ndarray

    @property
    def num_stripes(self) -> int:
        return len(self.features)

    def stacked(self) -> Tensor:
        """All stripes as one (num_stripes * batch) x C matrix, stripe-major."""
        return nx.concat_rows(self.features)


def encode(x, modalities, params: EncoderParams, labels=None) -> StripeBatch:
    """Run the two-stream encoder on raw stripes ``x`` of shape (batch, S, D_in)."""
    x = np.asarray(x, dtype=np.float64)
    cfg = params.config
    if x.ndim != 3 or x.shape[1:] != (cfg.num_stripes, cfg.input_dim):
        raise DimensionError(
            f"encode: input shape {x.shape}, expected (batch, {cfg.num_stripes}, {cfg.input_dim})"
        )
    modalities = np.asarray(modalities)
    b, s, d = x.shape
    if modalities.shape != (b,):
        raise ContractError(f"encode: {b} samples but {modalities.shape} modality ids")
    if not np.isin(modalities, (0, 1)).all():
        raise ContractError(f"encode: unknown modality id(s) {sorted(set(modalities.tolist()) - {0, 1})}")

    rows = x.transpose(1, 0, 2).reshape(s * b, d)
    is_ir = np.tile(modalities == 1, s)[:, None].astype(np.float64)
    # Masked sum keeps the two streams' parameters and gradients disjoint.
    stage = [nx.relu(nx.add(nx.matmul(rows, params.modality_w[m]), params.modality_b[m])) for m in (0, 1)]
    z = nx.add(nx.mul(stage[0], 1.0 - is_ir), nx.mul(stage[1], is_ir))
    z = nx.relu(nx.add(nx.matmul(z, params.shared_w1), params.shared_b1))
    f = nx.add(nx.matmul(z, params.shared_w2), params.shared_b2)
    feats = [nx.take_rows(f, slice(i * b, (i + 1) * b)) for i in range(s)]
    return StripeBatch(feats, None if labels is None else np.asarray(labels), modalities)


def stripe_logits(batch: StripeBatch, params: EncoderParams) -> list[Tensor]:
    return [nx.matmul(f, w) for f, w in zip(batch.features, params.classifiers)]


def pooled_descriptor(features) -> np.ndarray:
    """Concatenate L2-normalized stripe features into one retrieval descriptor per sample.

    ``features`` is a :class:`StripeBatch` or a sequence of (batch x C) arrays.
    """
    if isinstance(features, StripeBatch):
        features = [t.value for t in features.features]
    blocks = []
    for s, f in enumerate(features):
        f = np.asarray(f.value if isinstance(f, Tensor) else f, dtype=np.float64)
        norms = np.linalg.norm(f, axis=1, keepdims=True)
        bad = np.flatnonzero(norms[:, 0] <= NORM_EPS)
        if bad.size:
            raise DegenerateInputError(f"pooled_descriptor: sample {bad[0]} stripe {s} has zero norm")
        blocks.append(f / norms)
    return np.concatenate(blocks, axis=1)
