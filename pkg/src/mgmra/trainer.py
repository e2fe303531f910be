"""
SGD-with-momentum training of encoder, classifiers and prototype memory.

Checkpoint layout (little-endian)::

    "MGCK" | u32 version=1 | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u32 rows | u32 cols | rows*cols float64
    trailer:    u32 epoch | u32 config length | UTF-8 "key = value" lines
"""

from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import numerics as nx
from .data import RecordSet, pk_sample
from .encoder import EncoderConfig, EncoderParams, encode, stripe_logits
from .errors import BadMagicError, ContractError, NumericHealthError, TruncatedPayloadError, VersionMismatchError
from .losses import (
    LossReport,
    LossWeights,
    hetero_center_triplet,
    identity_ce,
    instance_consistency,
    memory_sparsity,
    semantic_triplet,
    total_loss,
)
from .memory import MemoryConfig, PrototypeMemory, mg_mra_forward, residual_compose

log = logging.getLogger(__name__)

CKPT_MAGIC = b"MGCK"
CKPT_VERSION = 1

# Independent RNG substreams, so that switching the memory branch on or off
# leaves encoder initialization and batch order untouched.
STREAM_ENCODER, STREAM_MEMORY, STREAM_SAMPLER, STREAM_SPLIT = range(4)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batches_per_epoch: int = 8
    P: int = 8
    K: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    parts_per: int = 6
    instances_per: int = 5
    semantics_per: int = 1
    hidden_dim: int = 64
    feature_dim: int = 32
    seed: int = 0
    mgmra_enabled: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError(f"TrainConfig.lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ContractError(f"TrainConfig.momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 0 or self.batches_per_epoch < 1 or self.P < 2 or self.K < 1:
            raise ContractError("TrainConfig: epochs >= 0, batches_per_epoch >= 1, P >= 2, K >= 1 required")

    def to_dict(self) -> dict[str, str]:
        out = {k: v for k, v in asdict(self).items() if k != "weights"}
        out.update(asdict(self.weights))
        return {k: str(v) for k, v in out.items()}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> TrainConfig:
        kinds = {f.name: f.type for f in fields(cls)}
        wkeys = {f.name for f in fields(LossWeights)}
        kw, wkw = {}, {}
        for k, v in d.items():
            if k in wkeys:
                wkw[k] = float(v)
            elif k in kinds and k != "weights":
                default = getattr(cls(), k)
                kw[k] = _parse_like(default, v)
        return cls(weights=LossWeights(**wkw), **kw)


def _parse_like(default, text):
    if isinstance(default, bool):
        return str(text).strip().lower() in ("1", "true", "on", "yes")
    return type(default)(text)


@dataclass
class ModelParams:
    encoder: EncoderParams
    memory: PrototypeMemory | None = None
    class_ids: np.ndarray | None = None

    def tensors(self) -> dict[str, nx.Tensor]:
        out = dict(self.encoder.tensors())
        if self.memory is not None:
            out.update(self.memory.tensors())
        return out


def init_model(cfg: TrainConfig, num_classes: int, input_dim: int, num_stripes: int) -> ModelParams:
    enc_cfg = EncoderConfig(input_dim, cfg.hidden_dim, cfg.feature_dim, num_stripes)
    encoder = EncoderParams.init(enc_cfg, num_classes, nx.make_rng(cfg.seed, STREAM_ENCODER))
    memory = None
    if cfg.mgmra_enabled:
        mem_cfg = MemoryConfig(num_classes, cfg.feature_dim, cfg.parts_per, cfg.instances_per, cfg.semantics_per)
        memory = PrototypeMemory.init(mem_cfg, nx.make_rng(cfg.seed, STREAM_MEMORY))
    return ModelParams(encoder, memory)


def batch_losses(
    model: ModelParams,
    x,
    labels,
    modalities,
    weights: LossWeights,
    split_rng: np.random.Generator | None = None,
) -> LossReport:
    """Forward one batch and assemble the full objective.

    The main branch (stripe features) feeds the identity and hetero-center
    losses.  When the model has a memory, every stripe feature is also read
    through the prototype hierarchy; the residual output drives the semantic
    triplet and the instance readouts drive the consistency term.
    """
    labels = np.asarray(labels)
    sb = encode(x, modalities, model.encoder, labels)
    l_id = identity_ce(stripe_logits(sb, model.encoder), labels)
    hc = [hetero_center_triplet(f, labels, modalities, weights.margin_tri) for f in sb.features]
    l_hc = nx.scale(_add_all(hc), 1.0 / len(hc))
    if model.memory is None:
        zero = nx.constant(np.zeros(()))
        return total_loss(l_id, l_hc, zero, zero, zero, weights)

    b, s = len(labels), sb.num_stripes
    queries = sb.stacked()
    readout = mg_mra_forward(queries, model.memory)
    aux = residual_compose(queries, readout)
    stripe = [slice(i * b, (i + 1) * b) for i in range(s)]
    rng = split_rng if split_rng is not None else nx.make_rng(0, STREAM_SPLIT)
    l_ins = instance_consistency([nx.take_rows(readout.h_ins, sl) for sl in stripe], rng)
    sem = [semantic_triplet(nx.take_rows(aux, sl), labels, weights.margin_sem) for sl in stripe]
    l_sem = nx.scale(_add_all(sem), 1.0 / s)
    l_m = memory_sparsity(readout.weights)
    return total_loss(l_id, l_hc, l_m, l_ins, l_sem, weights)


def _add_all(terms):
    total = terms[0]
    for t in terms[1:]:
        total = nx.add(total, t)
    return total


def sgd_step(params, grads, velocity, lr: float, momentum: float):
    """In-place ``v <- momentum*v - lr*g; theta <- theta + v`` for every array.

    All three arguments are parallel sequences (or dicts with equal keys).
    Returns ``(params, velocity)``.
    """
    if isinstance(params, dict):
        keys = list(params)
        if set(keys) != set(grads) or set(keys) != set(velocity):
            raise ContractError("sgd_step: params, grads and velocity have different keys")
        seq = [(params[k], grads[k], velocity[k]) for k in keys]
    else:
        if not len(params) == len(grads) == len(velocity):
            raise ContractError("sgd_step: params, grads and velocity differ in length")
        seq = list(zip(params, grads, velocity))
    for theta, g, v in seq:
        if not theta.shape == g.shape == v.shape:
            raise ContractError(f"sgd_step: shape mismatch {theta.shape}, {g.shape}, {v.shape}")
    for theta, g, v in seq:
        v *= momentum
        v -= lr * g
        theta += v
    return params, velocity


def relabel(identities, class_ids: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(class_ids, identities)
    if np.any(idx >= class_ids.size) or np.any(class_ids[np.minimum(idx, class_ids.size - 1)] != identities):
        raise ContractError("relabel: identity not among training classes")
    return idx


@dataclass
class TrainResult:
    model: ModelParams
    history: list[dict[str, float]]
    config: TrainConfig

    def checkpoint(self, extra_config: dict[str, str] | None = None) -> Checkpoint:
        return make_checkpoint(self.model, self.config, epoch=len(self.history), extra_config=extra_config)


def train(
    cfg: TrainConfig,
    dataset: RecordSet,
    on_epoch: Callable[[int, dict[str, float]], None] | None = None,
) -> TrainResult:
    """Train from scratch; deterministic given ``cfg.seed``."""
    class_ids = np.unique(dataset.identities)
    model = init_model(cfg, class_ids.size, dataset.input_dim, dataset.num_stripes)
    model.class_ids = class_ids
    params = model.tensors()
    velocity = {k: np.zeros_like(t.value) for k, t in params.items()}
    sampler = nx.make_rng(cfg.seed, STREAM_SAMPLER)
    splitter = nx.make_rng(cfg.seed, STREAM_SPLIT)

    history = []
    for epoch in range(cfg.epochs):
        sums = dict.fromkeys(LossReport.COLUMNS, 0.0)
        for step in range(cfg.batches_per_epoch):
            batch = pk_sample(dataset, cfg.P, cfg.K, sampler)
            labels = relabel(batch.identities, class_ids)
            try:
                report = batch_losses(
                    model, batch.features(), labels, batch.modalities.astype(np.int64), cfg.weights, splitter
                )
            except NumericHealthError as exc:
                raise NumericHealthError(f"epoch {epoch} batch {step}: {exc}") from exc
            values = report.values()
            if not np.isfinite(values["total"]):
                raise NumericHealthError(f"epoch {epoch} batch {step}: non-finite loss {values}")
            for t in params.values():
                t.zero_grad()
            report.total.backward()
            grads = {k: t.grad for k, t in params.items()}
            sgd_step({k: t.value for k, t in params.items()}, grads, velocity, cfg.lr, cfg.momentum)
            for k in sums:
                sums[k] += values[k]
        row = {k: v / cfg.batches_per_epoch for k, v in sums.items()}
        history.append(row)
        log.info("epoch %d total=%.5f id=%.5f hc_tri=%.5f", epoch, row["total"], row["id"], row["hc_tri"])
        if on_epoch is not None:
            on_epoch(epoch, row)
    return TrainResult(model, history, cfg)


def write_loss_csv(path, history) -> None:
    lines = ["epoch," + ",".join(LossReport.COLUMNS)]
    for epoch, row in enumerate(history):
        lines.append(",".join([str(epoch)] + [repr(float(row[k])) for k in LossReport.COLUMNS]))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict[str, str]
    epoch: int = 0

    def to_bytes(self) -> bytes:
        out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(self.tensors))]
        for name, arr in self.tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            if arr.ndim != 2:
                raise ContractError(f"checkpoint tensor {name} is not 2-D: {arr.shape}")
            enc = name.encode("utf-8")
            out += [struct.pack("<I", len(enc)), enc, struct.pack("<II", *arr.shape), arr.tobytes()]
        text = "".join(f"{k} = {v}\n" for k, v in sorted(self.config.items())).encode("utf-8")
        out += [struct.pack("<II", self.epoch, len(text)), text]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> Checkpoint:
        if raw[:4] != CKPT_MAGIC:
            raise BadMagicError(f"not a checkpoint (magic {raw[:4]!r})")
        pos = 4

        def take(n):
            nonlocal pos
            if pos + n > len(raw):
                raise TruncatedPayloadError("checkpoint payload truncated")
            chunk = raw[pos : pos + n]
            pos += n
            return chunk

        version, count = struct.unpack("<II", take(8))
        if version != CKPT_VERSION:
            raise VersionMismatchError(f"checkpoint version {version}, expected {CKPT_VERSION}")
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", take(4))
            name = take(n).decode("utf-8")
            rows, cols = struct.unpack("<II", take(8))
            tensors[name] = np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64)
        epoch, n = struct.unpack("<II", take(8))
        config = {}
        for line in take(n).decode("utf-8").splitlines():
            k, _, v = line.partition("=")
            config[k.strip()] = v.strip()
        return cls(tensors, config, epoch)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Checkpoint:
        return cls.from_bytes(Path(path).read_bytes())

    def without_memory(self) -> Checkpoint:
        return replace(self, tensors={k: v for k, v in self.tensors.items() if not k.startswith("memory.")})


def make_checkpoint(model: ModelParams, cfg: TrainConfig, epoch: int = 0, extra_config=None) -> Checkpoint:
    tensors = {k: t.value.copy() for k, t in model.tensors().items()}
    if model.class_ids is not None:
        tensors["meta.class_ids"] = model.class_ids.astype(np.float64).reshape(1, -1)
    config = cfg.to_dict()
    config.update(extra_config or {})
    return Checkpoint(tensors, config, epoch)


def load_encoder(ckpt: Checkpoint) -> EncoderParams:
    """Rebuild encoder and classifiers only; memory tensors are never read."""
    t = ckpt.tensors
    w0, w2 = t["encoder.modality0.w"], t["encoder.shared.w2"]
    num_stripes = sum(1 for k in t if k.startswith("classifier.stripe"))
    cfg = EncoderConfig(w0.shape[0], w0.shape[1], w2.shape[1], num_stripes)
    p = lambda k: nx.parameter(t[k])  # noqa: E731
    return EncoderParams(
        cfg,
        [p("encoder.modality0.w"), p("encoder.modality1.w")],
        [p("encoder.modality0.b"), p("encoder.modality1.b")],
        p("encoder.shared.w1"),
        p("encoder.shared.b1"),
        p("encoder.shared.w2"),
        p("encoder.shared.b2"),
        [p(f"classifier.stripe{s}.w") for s in range(num_stripes)],
    )


def load_model(ckpt: Checkpoint, with_memory: bool = True) -> ModelParams:
    encoder = load_encoder(ckpt)
    memory = None
    if with_memory and "memory.part_rows" in ckpt.tensors:
        cfg = TrainConfig.from_dict(ckpt.config)
        num_classes = encoder.classifiers[0].shape[1]
        mem_cfg = MemoryConfig(
            num_classes, encoder.config.feature_dim, cfg.parts_per, cfg.instances_per, cfg.semantics_per
        )
        t = ckpt.tensors
        memory = PrototypeMemory(
            mem_cfg,
            *(nx.parameter(t[f"memory.{k}"]) for k in ("part_rows", "gate_ins_w", "gate_ins_b", "gate_sem_w", "gate_sem_b")),
        )
        if memory.part_rows.shape[0] != mem_cfg.level_sizes[0]:
            raise ContractError("checkpoint memory rows do not match its prototype counts")
    class_ids = ckpt.tensors.get("meta.class_ids")
    return ModelParams(encoder, memory, None if class_ids is None else class_ids.reshape(-1).astype(np.int64))
