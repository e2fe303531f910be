"""
Hierarchical prototype memory: part -> instance -> semantic.

Part prototypes are the only free rows.  Their order is lexicographic in
``(modality, class, semantic slot, instance slot, part slot)``.  Instance rows
are gated block means over the part axis, so each modality keeps its own
instance prototypes.  Semantic rows are gated block means over both the
instance and the modality axes, which is where the two modalities are joined.

A read is a softmax over cosine similarities followed by a convex
combination of the level rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigurationError, DimensionError
from .numerics import Tensor

NUM_MODALITIES = 2


@dataclass(frozen=True)
class MemoryConfig:
    num_classes: int
    feature_dim: int
    parts_per: int = 6
    instances_per: int = 5
    semantics_per: int = 1
    num_modalities: int = NUM_MODALITIES

    def __post_init__(self):
        counts = dict(
            num_classes=self.num_classes,
            parts_per=self.parts_per,
            instances_per=self.instances_per,
            semantics_per=self.semantics_per,
        )
        for name, v in counts.items():
            if int(v) != v or v < 1:
                raise ConfigurationError(f"MemoryConfig.{name} must be a positive integer, got {v}")
        if self.feature_dim < 2:
            raise ConfigurationError(f"MemoryConfig.feature_dim must be >= 2, got {self.feature_dim}")
        if self.num_modalities != NUM_MODALITIES:
            raise ConfigurationError("MemoryConfig.num_modalities is fixed at 2")

    @property
    def level_sizes(self) -> tuple[int, int, int]:
        """Row counts of the part, instance and semantic levels."""
        sem = self.num_classes * self.semantics_per
        ins = self.num_modalities * sem * self.instances_per
        return ins * self.parts_per, ins, sem


@dataclass
class PrototypeMemory:
    config: MemoryConfig
    part_rows: Tensor
    gate_ins_w: Tensor
    gate_ins_b: Tensor
    gate_sem_w: Tensor
    gate_sem_b: Tensor

    @classmethod
    def init(cls, config: MemoryConfig, rng: np.random.Generator) -> PrototypeMemory:
        n, c = config.level_sizes[0], config.feature_dim
        bound = 1.0 / np.sqrt(c)
        rows = rng.uniform(-bound, bound, size=(n, c))
        while True:
            short = np.linalg.norm(rows, axis=1) < 1e-6
            if not short.any():
                break
            rows[short] = rng.uniform(-bound, bound, size=(int(short.sum()), c))
        gates = [rng.uniform(-bound, bound, size=(c, 1)) for _ in range(2)]
        return cls(
            config,
            nx.parameter(rows),
            nx.parameter(gates[0]),
            nx.parameter(np.zeros((1, 1))),
            nx.parameter(gates[1]),
            nx.parameter(np.zeros((1, 1))),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {
            "memory.part_rows": self.part_rows,
            "memory.gate_ins_w": self.gate_ins_w,
            "memory.gate_ins_b": self.gate_ins_b,
            "memory.gate_sem_w": self.gate_sem_w,
            "memory.gate_sem_b": self.gate_sem_b,
        }

    def levels(self) -> tuple[Tensor, Tensor, Tensor]:
        """Derive ``(M_part, M_ins, M_sem)`` from the part rows and gates."""
        cfg = self.config
        m_part = self.part_rows
        m_ins = summarize_level(m_part, cfg.parts_per, self.gate_ins_w, self.gate_ins_b)
        # Bring the modality axis next to the instance axis so that each
        # consecutive block of 2*I rows belongs to one (class, semantic slot).
        m_ins_joint = nx.take_rows(m_ins, modality_inner_order(cfg))
        m_sem = summarize_level(
            m_ins_joint, cfg.num_modalities * cfg.instances_per, self.gate_sem_w, self.gate_sem_b
        )
        return m_part, m_ins, m_sem


def modality_inner_order(cfg: MemoryConfig) -> np.ndarray:
    """Permutation taking instance rows from (m, c, s, i) to (c, s, m, i) order."""
    shape = (cfg.num_modalities, cfg.num_classes * cfg.semantics_per, cfg.instances_per)
    return np.arange(np.prod(shape)).reshape(shape).transpose(1, 0, 2).reshape(-1)


@dataclass
class MemoryReadout:
    h_part: Tensor
    h_ins: Tensor
    h_sem: Tensor
    w_part: Tensor
    w_ins: Tensor
    w_sem: Tensor

    @property
    def weights(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.w_part, self.w_ins, self.w_sem


def sg_mra_read(queries, level_rows) -> tuple[Tensor, Tensor]:
    """Single-granularity read.

    Returns ``(h, w)`` where ``w = softmax_rows(cos(queries, level_rows))``
    and ``h = w @ level_rows``.
    """
    w = nx.softmax_rows(nx.cosine_rows(queries, level_rows))
    return nx.matmul(w, level_rows), w


def summarize_level(lower_rows: Tensor, group_size: int, gate_w: Tensor, gate_b: Tensor) -> Tensor:
    """Gated mean over consecutive blocks of ``group_size`` rows.

    Row ``i`` of the result is ``(1/L) * sum_j alpha_j * m_j`` over the i-th
    block, with ``alpha_j = sigmoid(m_j . gate_w + gate_b)``.
    """
    n, c = lower_rows.shape
    if group_size < 1 or n % group_size:
        raise ConfigurationError(f"summarize_level: {n} rows not divisible into groups of {group_size}")
    if gate_w.shape != (c, 1):
        raise DimensionError(f"summarize_level: gate weight shape {gate_w.shape}, expected {(c, 1)}")
    alpha = nx.sigmoid(nx.add(nx.matmul(lower_rows, gate_w), gate_b))
    weighted = nx.mul(lower_rows, alpha)
    blocks = nx.reshape(weighted, (n // group_size, group_size, c))
    return nx.mean(blocks, axis=1)


def mg_mra_forward(queries, mem: PrototypeMemory) -> MemoryReadout:
    m_part, m_ins, m_sem = mem.levels()
    h_part, w_part = sg_mra_read(queries, m_part)
    h_ins, w_ins = sg_mra_read(h_part, m_ins)
    h_sem, w_sem = sg_mra_read(h_ins, m_sem)
    return MemoryReadout(h_part, h_ins, h_sem, w_part, w_ins, w_sem)


def residual_compose(stripe_features, readout: MemoryReadout) -> Tensor:
    f = nx.constant(stripe_features)
    if f.shape != readout.h_sem.shape:
        raise DimensionError(f"residual_compose: features {f.shape} vs readout {readout.h_sem.shape}")
    return nx.add(readout.h_sem, f)
