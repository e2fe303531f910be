import numpy as np
import pytest
from scipy import stats

from mgmra import numerics as nx
from mgmra.data import (
    RecordSet,
    SynthConfig,
    generate,
    pk_sample,
    read_csv_dataset,
    read_dataset,
    record_size,
    write_dataset,
)
from mgmra.errors import BadMagicError, SamplingError, TruncatedPayloadError, VersionMismatchError

SMALL = SynthConfig(num_train_ids=6, num_test_ids=4, samples_per_id_per_modality=3, input_dim=4, num_stripes=2)


def _replace(cfg, **kw):
    return SynthConfig(**{**cfg.__dict__, **kw})


# ---------------------------------------------------------------- generation


def test_train_and_test_identities_disjoint():
    for seed in range(5):
        train, query, gallery = generate(_replace(SMALL, seed=seed))
        test_ids = set(query.identities) | set(gallery.identities)
        assert not set(train.identities) & test_ids
        assert set(query.identities) == set(gallery.identities)


def test_query_is_modality_one_gallery_modality_zero():
    _, query, gallery = generate(SMALL)
    assert set(query.modalities) == {1} and set(gallery.modalities) == {0}


def test_no_gap_no_noise_modalities_identical():
    train, _, _ = generate(_replace(SMALL, modality_gap=0.0, noise=0.0))
    for ident in np.unique(train.identities):
        rows = train.stripes[train.identities == ident]
        assert np.all(rows == rows[0])


def test_no_noise_with_gap():
    train, _, _ = generate(_replace(SMALL, noise=0.0, modality_gap=1.0))
    for ident in np.unique(train.identities):
        sel = train.identities == ident
        m0 = train.stripes[sel & (train.modalities == 0)]
        m1 = train.stripes[sel & (train.modalities == 1)]
        assert np.all(m0 == m0[0]) and np.all(m1 == m1[0])
        assert not np.array_equal(m0[0], m1[0])


def test_generation_is_deterministic():
    a = generate(SMALL)
    b = generate(SMALL)
    assert all(x == y for x, y in zip(a, b))
    c = generate(_replace(SMALL, seed=1))
    assert a[0] != c[0]


def test_default_config_sizes():
    cfg = SynthConfig()
    assert (cfg.num_train_ids, cfg.num_test_ids, cfg.samples_per_id_per_modality) == (64, 32, 10)
    assert (cfg.input_dim, cfg.modality_gap, cfg.noise) == (32, 1.0, 0.3)


# ---------------------------------------------------------------- PK sampling


def test_pk_counts():
    train, _, _ = generate(SMALL)
    batch = pk_sample(train, 2, 2, nx.make_rng(0))
    assert len(batch) == 8
    ids, counts = np.unique(batch.identities, return_counts=True)
    assert ids.size == 2 and np.all(counts == 4)
    for i in ids:
        for m in (0, 1):
            assert ((batch.identities == i) & (batch.modalities == m)).sum() == 2


def test_pk_exhaustion():
    train, _, _ = generate(SMALL)
    batch = pk_sample(train, 6, 1, nx.make_rng(1))
    assert sorted(set(batch.identities.tolist())) == sorted(set(train.identities.tolist()))


def test_pk_with_replacement_when_short():
    train, _, _ = generate(SMALL)
    batch = pk_sample(train, 2, 5, nx.make_rng(2))
    assert len(batch) == 20


def test_pk_too_few_identities():
    train, _, _ = generate(SMALL)
    with pytest.raises(SamplingError):
        pk_sample(train, 7, 1, nx.make_rng(0))


def test_pk_identity_frequencies_uniform():
    train, _, _ = generate(SMALL)
    rng = nx.make_rng(3)
    counts = dict.fromkeys(np.unique(train.identities).tolist(), 0)
    for _ in range(1000):
        for i in np.unique(pk_sample(train, 2, 1, rng).identities):
            counts[int(i)] += 1
    assert stats.chisquare(list(counts.values())).pvalue > 0.01


# ---------------------------------------------------------------- file I/O


def test_empty_roundtrip(tmp_path):
    empty = RecordSet.empty(2, 4)
    path = tmp_path / "e.mgmr"
    write_dataset(path, empty)
    assert path.stat().st_size == 20
    assert read_dataset(path) == empty


def test_single_record_roundtrip(tmp_path):
    train, _, _ = generate(SMALL)
    one = train.subset(slice(0, 1))
    write_dataset(tmp_path / "one.mgmr", one)
    back = read_dataset(tmp_path / "one.mgmr")
    assert back == one
    assert back.stripes.tobytes() == one.stripes.tobytes()


def test_large_roundtrip_and_size(tmp_path):
    rng = nx.make_rng(4)
    n = 10_000
    rs = RecordSet(rng.integers(0, 2**32, n), rng.integers(0, 2, n), rng.standard_normal((n, 3, 5)))
    path = tmp_path / "big.mgmr"
    write_dataset(path, rs)
    assert path.stat().st_size == 20 + n * (4 + 1 + 4 * 15) == 20 + n * record_size(3, 5)
    assert read_dataset(path) == rs


def test_bad_magic(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(BadMagicError):
        read_dataset(p)


def test_version_mismatch(tmp_path):
    p = tmp_path / "x"
    write_dataset(p, RecordSet.empty(1, 1))
    raw = bytearray(p.read_bytes())
    raw[4] = 2
    p.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        read_dataset(p)


def test_truncated_payload(tmp_path):
    train, _, _ = generate(SMALL)
    p = tmp_path / "x"
    write_dataset(p, train)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TruncatedPayloadError):
        read_dataset(p)


def test_error_codes_are_distinct():
    codes = {BadMagicError.code, VersionMismatchError.code, TruncatedPayloadError.code}
    assert len(codes) == 3


def test_csv_import(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id, modality, s0_d0, s0_d1, s1_d0, s1_d1\n3, 1, 0.5, 1.5, -2, 4\n7, 0, 0, 0, 1, 1\n")
    rs = read_csv_dataset(p)
    assert rs.identities.tolist() == [3, 7] and rs.modalities.tolist() == [1, 0]
    assert rs.stripes.shape == (2, 2, 2)
    assert rs.stripes[0].tolist() == [[0.5, 1.5], [-2.0, 4.0]]
