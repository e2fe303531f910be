import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgmra import numerics as nx
from mgmra.errors import ConfigurationError, DegenerateInputError
from mgmra.memory import (
    MemoryConfig,
    PrototypeMemory,
    mg_mra_forward,
    modality_inner_order,
    residual_compose,
    sg_mra_read,
    summarize_level,
)

import oracles


def small_memory(seed=0, **kw):
    cfg = MemoryConfig(**{"num_classes": 3, "feature_dim": 4, "parts_per": 2, "instances_per": 2, **kw})
    return PrototypeMemory.init(cfg, nx.make_rng(seed))


# ---------------------------------------------------------------- config


def test_default_prototype_counts():
    cfg = MemoryConfig(num_classes=4, feature_dim=16)
    assert (cfg.parts_per, cfg.instances_per, cfg.semantics_per) == (6, 5, 1)
    assert cfg.level_sizes == (240, 40, 4)


@settings(max_examples=50)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(1, 4), st.integers(1, 9))
def test_shape_law(p, i, s, n_c):
    mem = PrototypeMemory.init(MemoryConfig(n_c, 3, p, i, s), nx.make_rng(0))
    rows = tuple(m.shape[0] for m in mem.levels())
    assert rows == (2 * n_c * s * i * p, 2 * n_c * s * i, n_c * s)


@pytest.mark.parametrize("kw", [{"parts_per": 0}, {"feature_dim": 1}, {"num_classes": 0}, {"num_modalities": 3}])
def test_config_rejects_bad_counts(kw):
    with pytest.raises(ConfigurationError):
        MemoryConfig(**{"num_classes": 2, "feature_dim": 4, **kw})


def test_initial_part_rows_are_nonzero_and_bounded():
    mem = small_memory()
    rows = mem.part_rows.value
    assert np.all(np.linalg.norm(rows, axis=1) >= 1e-6)
    assert np.all(np.abs(rows) <= 1 / np.sqrt(4))


def test_modality_inner_order_groups_modalities_per_class():
    cfg = MemoryConfig(num_classes=2, feature_dim=2, parts_per=1, instances_per=2)
    # Instance rows (m, c, i): 0..3 are modality 0, 4..7 modality 1.
    assert modality_inner_order(cfg).tolist() == [0, 1, 4, 5, 2, 3, 6, 7]


# ---------------------------------------------------------------- single read


def test_single_prototype_read():
    m = np.array([[0.3, -1.2, 2.0]])
    q = nx.make_rng(1).uniform(-2, 2, size=(4, 3))
    h, w = sg_mra_read(q, m)
    assert np.array_equal(w.value, np.ones((4, 1)))
    assert np.allclose(h.value, np.repeat(m, 4, axis=0), atol=1e-15)


def test_two_prototype_read_against_scalar_softmax():
    h, w = sg_mra_read(np.array([[1.0, 0.0]]), np.eye(2))
    expected = oracles.softmax([1.0, 0.0])
    assert w.value[0] == pytest.approx(expected, abs=1e-15)
    assert h.value[0] == pytest.approx([0.73106, 0.26894], abs=1e-5)


def test_read_is_query_scale_invariant():
    rows = nx.make_rng(2).uniform(-1, 1, size=(5, 3))
    q = np.array([[0.4, -0.1, 0.9]])
    h1, w1 = sg_mra_read(q, rows)
    h5, w5 = sg_mra_read(5 * q, rows)
    assert np.allclose(w1.value, w5.value, atol=1e-12, rtol=0)
    assert np.allclose(h1.value, h5.value, atol=1e-12, rtol=0)


def test_read_matches_scalar_oracle():
    rng = nx.make_rng(3)
    q, rows = rng.uniform(-2, 2, size=(3, 4)), rng.uniform(-2, 2, size=(6, 4))
    h, w = sg_mra_read(q, rows)
    h_ref, w_ref = oracles.read(q.tolist(), rows.tolist())
    assert np.max(np.abs(w.value - w_ref)) < 1e-12
    assert np.max(np.abs(h.value - h_ref)) < 1e-12


def test_read_rejects_zero_prototype():
    with pytest.raises(DegenerateInputError):
        sg_mra_read(np.ones((1, 2)), np.array([[1.0, 0.0], [0.0, 0.0]]))


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_read_permutation_equivariance(seed):
    rng = nx.make_rng(seed)
    q, rows = rng.uniform(-2, 2, size=(4, 3)), rng.uniform(-2, 2, size=(7, 3))
    perm = rng.permutation(7)
    h, w = sg_mra_read(q, rows)
    hp, wp = sg_mra_read(q, rows[perm])
    assert np.allclose(wp.value, w.value[:, perm], atol=1e-10, rtol=0)
    assert np.allclose(hp.value, h.value, atol=1e-10, rtol=0)


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_read_weights_on_simplex_and_reconstruct(seed):
    rng = nx.make_rng(seed)
    q, rows = rng.uniform(-2, 2, size=(5, 3)), rng.uniform(-2, 2, size=(9, 3))
    h, w = sg_mra_read(q, rows)
    assert np.all(np.abs(w.value.sum(axis=1) - 1) < 1e-10)
    assert np.all(w.value > 0)
    recon = np.array([[sum(wj * mj[c] for wj, mj in zip(wrow, rows)) for c in range(3)] for wrow in w.value])
    assert np.max(np.abs(recon - h.value)) < 1e-10


# ---------------------------------------------------------------- summarization


def test_summarize_constant_block_half_gate():
    v = np.array([0.5, -2.0, 1.0])
    out = summarize_level(nx.constant(np.tile(v, (3, 1))), 3, nx.constant(np.zeros((3, 1))), nx.constant(np.zeros((1, 1))))
    assert np.allclose(out.value, [0.5 * v], atol=1e-15)


def test_summarize_saturated_gate_is_plain_mean():
    out = summarize_level(nx.constant(np.eye(2)), 2, nx.constant(np.zeros((2, 1))), nx.constant([[30.0]]))
    assert out.value[0] == pytest.approx([0.5, 0.5], abs=1e-6)


def test_summarize_matches_direct_summation():
    rng = nx.make_rng(4)
    rows, gw, gb = rng.uniform(-2, 2, size=(6, 3)), rng.uniform(-1, 1, size=(3, 1)), rng.uniform(-1, 1)
    out = summarize_level(nx.constant(rows), 3, nx.constant(gw), nx.constant([[gb]]))
    ref = oracles.summarize(rows.tolist(), 3, gw[:, 0].tolist(), gb)
    assert np.max(np.abs(out.value - ref)) < 1e-12


def test_summarize_rejects_non_divisible():
    with pytest.raises(ConfigurationError, match="5 rows"):
        summarize_level(nx.constant(np.ones((5, 2))), 2, nx.constant(np.zeros((2, 1))), nx.constant([[0.0]]))


# ---------------------------------------------------------------- chain


def test_collapsed_hierarchy_gives_alpha_scaled_row():
    mem = small_memory(num_classes=1, parts_per=1, instances_per=1)
    v = np.array([1.0, -0.5, 0.25, 2.0])
    mem.part_rows.value[:] = v
    readout = mg_mra_forward(np.array([[0.3, 0.1, -0.2, 0.7]]), mem)
    a_ins = oracles.sigmoid(float(v @ mem.gate_ins_w.value[:, 0]) + mem.gate_ins_b.value[0, 0])
    ins_row = a_ins * v
    a_sem = oracles.sigmoid(float(ins_row @ mem.gate_sem_w.value[:, 0]) + mem.gate_sem_b.value[0, 0])
    assert readout.w_sem.shape == (1, 1)
    assert np.allclose(readout.h_sem.value[0], a_sem * ins_row, atol=1e-14)


def test_forward_equals_composition_of_oracles():
    cfg = MemoryConfig(num_classes=4, feature_dim=16)
    mem = PrototypeMemory.init(cfg, nx.make_rng(5))
    q = nx.make_rng(6).uniform(-2, 2, size=(8, 16))
    readout = mg_mra_forward(q, mem)

    part = mem.part_rows.value.tolist()
    ins = oracles.summarize(part, 6, mem.gate_ins_w.value[:, 0].tolist(), mem.gate_ins_b.value[0, 0])
    # (m, c, s, i) -> (c, s, m, i): regroup both modalities of a class together.
    per_mod = len(ins) // 2
    joint = []
    for c in range(4):
        for m in range(2):
            joint += ins[m * per_mod + c * 5 : m * per_mod + (c + 1) * 5]
    sem = oracles.summarize(joint, 10, mem.gate_sem_w.value[:, 0].tolist(), mem.gate_sem_b.value[0, 0])

    h_part, w_part = oracles.read(q.tolist(), part)
    h_ins, w_ins = oracles.read(h_part, ins)
    h_sem, w_sem = oracles.read(h_ins, sem)
    for got, ref in [
        (readout.h_part, h_part), (readout.w_part, w_part),
        (readout.h_ins, h_ins), (readout.w_ins, w_ins),
        (readout.h_sem, h_sem), (readout.w_sem, w_sem),
    ]:
        assert np.max(np.abs(got.value - np.array(ref))) < 1e-12
    assert readout.w_part.shape == (8, 240) and readout.w_ins.shape == (8, 40) and readout.w_sem.shape == (8, 4)


def test_forward_weights_on_simplex():
    mem = small_memory(7)
    readout = mg_mra_forward(nx.make_rng(8).uniform(-2, 2, size=(5, 4)), mem)
    for w in readout.weights:
        assert np.all(np.abs(w.value.sum(axis=1) - 1) < 1e-10)
        assert np.all(w.value > 0)


def test_forward_gradient_check():
    for seed in range(20):
        mem = small_memory(seed)
        rng = nx.make_rng(seed, 1)
        q = nx.parameter(rng.uniform(-2, 2, size=(3, 4)))
        weights = [rng.uniform(-1, 1, size=(3, 4)) for _ in range(3)]

        def objective():
            r = mg_mra_forward(q, mem)
            terms = [nx.sum(nx.mul(h, w)) for h, w in zip((r.h_part, r.h_ins, r.h_sem), weights)]
            return nx.add(nx.add(terms[0], terms[1]), terms[2])

        params = [q, *mem.tensors().values()]
        assert nx.grad_check(objective, params) < 1e-4, seed


# ---------------------------------------------------------------- residual


def _readout_with(h_sem):
    z = nx.constant(np.zeros_like(h_sem))
    return type(mg_mra_forward(np.ones((1, 2)), small_memory(feature_dim=2)))(z, z, nx.constant(h_sem), z, z, z)


def test_residual_zero_readout_is_identity():
    f = nx.make_rng(9).uniform(-2, 2, size=(3, 4))
    assert np.array_equal(residual_compose(f, _readout_with(np.zeros((3, 4)))).value, f)


def test_residual_zero_features_returns_readout():
    h = nx.make_rng(10).uniform(-2, 2, size=(3, 4))
    assert np.array_equal(residual_compose(np.zeros((3, 4)), _readout_with(h)).value, h)


def test_residual_elementwise_sum():
    rng = nx.make_rng(11)
    f, h = rng.uniform(-2, 2, size=(3, 4)), rng.uniform(-2, 2, size=(3, 4))
    out = residual_compose(f, _readout_with(h)).value
    for i in range(3):
        for j in range(4):
            assert out[i, j] == h[i, j] + f[i, j]
