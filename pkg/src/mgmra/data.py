"""
Synthetic two-modality identity data, PK batch sampling and dataset files.

Records are stored column-wise in a :class:`RecordSet`.  Stripe values are
kept as float32 so that a set read back from disk is bitwise equal to the
one that was written.

Binary layout (all little-endian)::

    "MGMR" | u32 version=1 | u32 N | u32 S | u32 D
    N x ( u32 identity | u8 modality | S*D float32 )
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BadMagicError, ContractError, SamplingError, TruncatedPayloadError, VersionMismatchError
from .numerics import make_rng

MAGIC = b"MGMR"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class SynthConfig:
    num_train_ids: int = 64
    num_test_ids: int = 32
    samples_per_id_per_modality: int = 10
    input_dim: int = 32
    num_stripes: int = 6
    modality_gap: float = 1.0
    noise: float = 0.3
    identity_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("num_train_ids", "num_test_ids", "samples_per_id_per_modality", "input_dim", "num_stripes"):
            if getattr(self, name) < 1:
                raise ContractError(f"SynthConfig.{name} must be >= 1")


class SampleRecord(NamedTuple):
    identity: int
    modality: int
    stripes: np.ndarray


@dataclass(eq=False)
class RecordSet:
    identities: np.ndarray  # uint32 (N,)
    modalities: np.ndarray  # uint8 (N,)
    stripes: np.ndarray  # float32 (N, S, D)

    def __post_init__(self):
        self.identities = np.ascontiguousarray(self.identities, dtype=np.uint32)
        self.modalities = np.ascontiguousarray(self.modalities, dtype=np.uint8)
        self.stripes = np.ascontiguousarray(self.stripes, dtype=np.float32)
        n = self.identities.shape[0]
        if self.modalities.shape != (n,) or self.stripes.ndim != 3 or self.stripes.shape[0] != n:
            raise ContractError(
                f"RecordSet: inconsistent shapes {self.identities.shape}, "
                f"{self.modalities.shape}, {self.stripes.shape}"
            )

    @classmethod
    def empty(cls, num_stripes: int, input_dim: int) -> RecordSet:
        return cls(np.zeros(0), np.zeros(0), np.zeros((0, num_stripes, input_dim)))

    @property
    def num_stripes(self) -> int:
        return self.stripes.shape[1]

    @property
    def input_dim(self) -> int:
        return self.stripes.shape[2]

    def __len__(self):
        return self.identities.shape[0]

    def __getitem__(self, i) -> SampleRecord:
        return SampleRecord(int(self.identities[i]), int(self.modalities[i]), self.stripes[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, RecordSet):
            return NotImplemented
        return (
            self.stripes.shape == other.stripes.shape
            and np.array_equal(self.identities, other.identities)
            and np.array_equal(self.modalities, other.modalities)
            and self.stripes.tobytes() == other.stripes.tobytes()
        )

    def subset(self, index) -> RecordSet:
        return RecordSet(self.identities[index], self.modalities[index], self.stripes[index])

    def features(self) -> np.ndarray:
        return self.stripes.astype(np.float64)


# ---------------------------------------------------------------- generation


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[RecordSet, RecordSet, RecordSet]:
    """Draw ``(train, query, gallery)``.

    Every identity has one signature per stripe: a template shared by all
    identities plus an identity-specific part scaled by ``identity_scale``.  Modality-1 samples see
    the signature through ``mu + gap * (G mu + b)`` with a fixed random map
    ``G`` and offset ``b``; both modalities then receive i.i.d. Gaussian noise.
    Test identities are numbered after the training ones and never appear in
    the training set.  Query = modality 1, gallery = modality 0.
    """
    rng = make_rng(cfg.seed)
    d, s = cfg.input_dim, cfg.num_stripes
    g_map = rng.standard_normal((d, d)) / np.sqrt(d)
    offset = rng.standard_normal(d)
    total_ids = cfg.num_train_ids + cfg.num_test_ids
    template = rng.standard_normal((1, s, d))
    signatures = template + cfg.identity_scale * rng.standard_normal((total_ids, s, d))

    k = cfg.samples_per_id_per_modality
    ids = np.repeat(np.arange(total_ids), 2 * k)
    mods = np.tile(np.repeat([0, 1], k), total_ids)
    clean = signatures[ids]
    shifted = clean + cfg.modality_gap * (clean @ g_map.T + offset)
    x = np.where((mods == 1)[:, None, None], shifted, clean)
    x = x + cfg.noise * rng.standard_normal(x.shape)
    data = RecordSet(ids, mods, x)

    train = data.subset(ids < cfg.num_train_ids)
    test = ids >= cfg.num_train_ids
    return train, data.subset(test & (mods == 1)), data.subset(test & (mods == 0))


# ---------------------------------------------------------------- PK sampling


def pk_sample(records: RecordSet, P: int, K: int, rng: np.random.Generator) -> RecordSet:
    """``P`` distinct identities, each with ``K`` modality-0 then ``K`` modality-1 samples.

    Identities with fewer than ``K`` samples in a modality are drawn with
    replacement within that modality.
    """
    ids = np.unique(records.identities)
    if ids.size < P:
        raise SamplingError(f"pk_sample: need {P} identities, set has {ids.size}")
    chosen = rng.choice(ids, size=P, replace=False)
    picks = []
    for ident in chosen:
        for m in (0, 1):
            pool = np.flatnonzero((records.identities == ident) & (records.modalities == m))
            if pool.size == 0:
                raise SamplingError(f"pk_sample: identity {ident} has no modality-{m} samples")
            picks.append(rng.choice(pool, size=K, replace=pool.size < K))
    return records.subset(np.concatenate(picks))


# ---------------------------------------------------------------- file I/O


def write_dataset(path, records: RecordSet) -> None:
    n = len(records)
    body = np.empty(
        n, dtype=[("id", "<u4"), ("mod", "u1"), ("x", "<f4", (records.num_stripes * records.input_dim,))]
    )
    body["id"] = records.identities
    body["mod"] = records.modalities
    body["x"] = records.stripes.reshape(n, records.num_stripes * records.input_dim)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, records.num_stripes, records.input_dim))
        fh.write(body.tobytes())


def record_size(num_stripes: int, input_dim: int) -> int:
    return 4 + 1 + 4 * num_stripes * input_dim


def read_dataset(path) -> RecordSet:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a dataset file (bad magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated")
    _, version, n, s, d = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    expected = _HEADER.size + n * record_size(s, d)
    if len(raw) < expected:
        raise TruncatedPayloadError(f"{path}: {len(raw)} bytes, header promises {expected}")
    body = np.frombuffer(
        raw, dtype=[("id", "<u4"), ("mod", "u1"), ("x", "<f4", (s * d,))], count=n, offset=_HEADER.size
    )
    return RecordSet(body["id"].copy(), body["mod"].copy(), body["x"].reshape(n, s, d).copy())


def read_csv_dataset(path, num_stripes: int | None = None) -> RecordSet:
    """Import ``id, modality, s0_d0, s0_d1, ...`` rows (one header line)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[:2] != ["id", "modality"]:
            raise ContractError(f"{path}: CSV header must start with 'id, modality'")
        cols = header[2:]
        stripes = {int(c.split("_")[0][1:]) for c in cols}
        s = num_stripes or len(stripes)
        if not cols or len(cols) % s:
            raise ContractError(f"{path}: {len(cols)} value columns do not split into {s} stripes")
        d = len(cols) // s
        rows = [r for r in reader if r]
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    mods = np.array([int(r[1]) for r in rows], dtype=np.int64)
    x = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float32).reshape(len(rows), s, d)
    return RecordSet(ids, mods, x)
