from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from oracles import sort_oracle
from quickselection.sparse_matrix import (
    SparseWeights,
    accumulate_gradients,
    connection_probability,
    erdos_renyi_init,
    expected_density_with_replacement,
    magnitude_partition,
    random_regrow,
    remove_entries,
    spmv_forward,
    spmv_transpose,
)


def random_sparse(n_in, n_out, density, seed):
    rng = np.random.default_rng(seed)
    dense = rng.standard_normal((n_in, n_out)) * (rng.random((n_in, n_out)) < density)
    return SparseWeights.from_dense(dense), dense


@st.composite
def sparse_instances(draw, max_dim=12):
    n_in = draw(st.integers(1, max_dim))
    n_out = draw(st.integers(1, max_dim))
    density = draw(st.floats(0.0, 1.0))
    seed = draw(st.integers(0, 2**31 - 1))
    return random_sparse(n_in, n_out, density, seed)


# -- storage ---------------------------------------------------------------

def test_duplicates_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        SparseWeights(2, 2, [0, 0], [1, 1], [1.0, 2.0])


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        SparseWeights(2, 2, [2], [0], [1.0])
    with pytest.raises(ValueError):
        SparseWeights(2, 2, [0], [-1], [1.0])
    with pytest.raises(ValueError):
        SparseWeights(0, 2, [], [], [])


def test_unsorted_input_is_compressed():
    w = SparseWeights(3, 3, [2, 0, 1], [0, 2, 1], [1.0, 2.0, 3.0])
    assert w.rows.tolist() == [0, 1, 2]
    assert w.values.tolist() == [2.0, 3.0, 1.0]


@given(sparse_instances())
def test_csr_and_triplets_describe_same_matrix(inst):
    w, dense = inst
    np.testing.assert_array_equal(w.to_dense(), dense)
    np.testing.assert_array_equal(w.csr.toarray(), dense)


def test_csr_shares_value_storage():
    w, _ = random_sparse(6, 5, 0.5, 1)
    w.values *= 2
    np.testing.assert_array_equal(w.csr.toarray(), w.to_dense())


@given(sparse_instances())
def test_spwt_round_trip(inst):
    w, _ = inst
    w.values = w.values.astype(np.float32).astype(np.float64)
    w.compress()
    back = SparseWeights.from_bytes(w.to_bytes())
    assert back == w


def test_spwt_layout():
    w = SparseWeights(3, 4, [1], [2], [0.5])
    raw = w.to_bytes()
    assert raw[:4] == b"SPWT"
    assert len(raw) == 4 + 2 + 4 + 4 + 8 + 12
    assert int.from_bytes(raw[6:10], "little") == 3
    assert int.from_bytes(raw[10:14], "little") == 4
    assert int.from_bytes(raw[14:22], "little") == 1
    assert np.frombuffer(raw[30:34], "<f4")[0] == 0.5


def test_spwt_bad_magic():
    with pytest.raises(ValueError):
        SparseWeights.read_chunk(io.BytesIO(b"XXXX" + bytes(18)))


# -- Erdős–Rényi init ----------------------------------------------------------

def test_connection_probability_values():
    assert connection_probability(500, 1000, 13) == pytest.approx(0.039)
    assert connection_probability(2, 2, 10) == 1.0


def test_saturated_init_is_dense():
    w = erdos_renyi_init(2, 2, 10, rng_seed=0)
    assert w.nnz == 4


def test_init_rejects_bad_input():
    with pytest.raises(ValueError):
        erdos_renyi_init(0, 3, 1.0)
    with pytest.raises(ValueError):
        erdos_renyi_init(3, 3, 0.0)
    with pytest.raises(ValueError):
        erdos_renyi_init(3, 3, -1.0)


def test_init_density_binomial_concentration():
    n_in, n_out, eps = 1024, 1000, 13
    p = connection_probability(n_in, n_out, eps)
    assert p == pytest.approx(0.0257, abs=5e-5)
    cells = n_in * n_out
    sd = np.sqrt(p * (1 - p) / cells)
    densities = np.array([erdos_renyi_init(n_in, n_out, eps, rng_seed=s).density
                          for s in range(100)])
    # 3 sd covers 99.7% of draws; allow the odd straggler among 100
    assert np.sum(np.abs(densities - p) < 3 * sd) >= 97
    # the mean of 100 draws concentrates ten times tighter
    assert abs(densities.mean() - p) < 3 * sd / 10


def test_init_expected_count():
    # expected nnz equals epsilon * (n_in + n_out) when p < 1
    counts = [erdos_renyi_init(60, 40, 3, rng_seed=s).nnz for s in range(400)]
    assert np.mean(counts) == pytest.approx(3 * 100, rel=0.02)


def test_init_is_deterministic_and_scaled():
    a = erdos_renyi_init(100, 80, 5, rng_seed=7)
    b = erdos_renyi_init(100, 80, 5, rng_seed=7)
    assert a == b
    assert abs(np.std(a.values) - 0.1) < 0.01
    c = erdos_renyi_init(100, 80, 5, rng_seed=7, init_scale=1.0)
    assert abs(np.std(c.values) - 1.0) < 0.1


def test_with_replacement_expectation_is_below_analytic():
    p = connection_probability(500, 1000, 13)
    q = expected_density_with_replacement(500, 1000, 13)
    assert q == pytest.approx(-np.expm1(-p), rel=1e-5)
    assert q < p


# -- products ----------------------------------------------------------------

def test_spmv_single_entry():
    w = SparseWeights(1, 1, [0], [0], [2.0])
    np.testing.assert_array_equal(spmv_forward(w, np.array([3.0])), [6.0])


def test_spmv_empty_matrix():
    w = SparseWeights.empty(4, 3)
    np.testing.assert_array_equal(spmv_forward(w, np.ones(4)), np.zeros(3))


def test_spmv_dense_oracle_20x15():
    w, dense = random_sparse(20, 15, 0.2, 3)
    x = np.random.default_rng(4).standard_normal(20)
    np.testing.assert_allclose(spmv_forward(w, x), x @ dense, rtol=1e-12, atol=1e-14)


@given(sparse_instances(), st.integers(0, 1000), st.integers(1, 4))
def test_products_match_dense(inst, seed, batch):
    w, dense = inst
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, w.n_in))
    d = rng.standard_normal((batch, w.n_out))
    np.testing.assert_allclose(spmv_forward(w, x), x @ dense, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(spmv_transpose(w, d), d @ dense.T, rtol=1e-12, atol=1e-12)


def test_spmv_dimension_mismatch():
    w, _ = random_sparse(4, 3, 0.5, 0)
    with pytest.raises(ValueError):
        spmv_forward(w, np.ones(3))
    with pytest.raises(ValueError):
        spmv_transpose(w, np.ones(4))


# -- gradient accumulation -------------------------------------------------------

def test_accumulate_single_entry():
    w = SparseWeights(1, 1, [0], [0], [1.0])
    g = accumulate_gradients(w, np.array([0.5]), np.array([2.0]), np.zeros(1))
    assert g.tolist() == [1.0]


def test_accumulate_zero_upstream():
    w, _ = random_sparse(5, 4, 0.6, 2)
    buf = np.arange(w.nnz, dtype=float)
    accumulate_gradients(w, np.zeros(4), np.ones(5), buf)
    np.testing.assert_array_equal(buf, np.arange(w.nnz))


def test_accumulate_misaligned_buffer():
    w, _ = random_sparse(5, 4, 0.6, 2)
    with pytest.raises(ValueError):
        accumulate_gradients(w, np.zeros(4), np.ones(5), np.zeros(w.nnz + 1))


def test_accumulate_matches_finite_differences():
    # layer loss L = sum(c * (x @ W)) has dL/dW_ij = x_i * c_j
    w, _ = random_sparse(10, 8, 0.4, 5)
    rng = np.random.default_rng(6)
    x, c = rng.standard_normal(10), rng.standard_normal(8)

    def loss(vals):
        return float(c @ spmv_forward(SparseWeights(10, 8, w.rows, w.cols, vals), x))

    h = 1e-4
    fd = np.empty(w.nnz)
    for e in range(w.nnz):
        up, dn = w.values.copy(), w.values.copy()
        up[e] += h
        dn[e] -= h
        fd[e] = (loss(up) - loss(dn)) / (2 * h)
    g = accumulate_gradients(w, c, x, np.zeros(w.nnz))
    np.testing.assert_allclose(g, fd, atol=1e-5)


@given(sparse_instances(), st.integers(0, 1000), st.integers(1, 5))
def test_batched_accumulate_equals_dense_outer(inst, seed, batch):
    w, dense = inst
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, w.n_in))
    up = rng.standard_normal((batch, w.n_out))
    full = x.T @ up
    g = accumulate_gradients(w, up, x, np.zeros(w.nnz))
    np.testing.assert_allclose(g, full[w.rows, w.cols], rtol=1e-12, atol=1e-12)


# -- magnitude partition ---------------------------------------------------------

def test_partition_signed_example():
    w = SparseWeights(1, 6, [0] * 6, range(6), [0.5, 0.1, 0.02, -0.4, -0.05, -0.01])
    removed, survivors = magnitude_partition(w, 0.34)
    assert sorted(w.values[removed].tolist()) == [-0.01, 0.02]
    assert survivors.size == 4


def test_partition_zero_zeta():
    w, _ = random_sparse(6, 6, 0.5, 0)
    removed, survivors = magnitude_partition(w, 0.0)
    assert removed.size == 0 and survivors.size == w.nnz


def test_partition_all_positive():
    w = SparseWeights(1, 4, [0] * 4, range(4), [0.4, 0.1, 0.3, 0.2])
    removed, _ = magnitude_partition(w, 0.5)
    assert sorted(w.values[removed].tolist()) == [0.1, 0.2]


def test_partition_ties_go_to_lower_index():
    w = SparseWeights(1, 4, [0] * 4, range(4), [0.1, 0.1, 0.1, 0.9])
    removed, _ = magnitude_partition(w, 0.5)
    assert removed.tolist() == [0, 1]


def test_partition_rejects_bad_zeta():
    w, _ = random_sparse(3, 3, 0.5, 0)
    for z in (-0.1, 1.0):
        with pytest.raises(ValueError):
            magnitude_partition(w, z)


@given(st.lists(st.sampled_from([-1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0]) | st.floats(-3, 3),
                min_size=1, max_size=60),
       st.floats(0.0, 0.99))
def test_partition_matches_sort_oracle(values, zeta):
    w = SparseWeights(1, len(values), [0] * len(values), range(len(values)), values)
    removed, survivors = magnitude_partition(w, zeta)
    assert removed.tolist() == sort_oracle(w.values.tolist(), zeta)
    assert sorted(removed.tolist() + survivors.tolist()) == list(range(len(values)))


# -- regrowth ------------------------------------------------------------------

def test_regrow_forced_position():
    w = SparseWeights(2, 2, [0, 0, 1], [0, 1, 0], [1.0, 1.0, 1.0])
    grown, new = random_regrow(w, 1, rng_seed=0)
    assert new.tolist() == [3]
    assert grown.nnz == 4


def test_regrow_zero():
    w, _ = random_sparse(5, 5, 0.3, 0)
    grown, new = random_regrow(w, 0, rng_seed=0)
    assert grown == w and new.size == 0


def test_regrow_full_matrix():
    w = SparseWeights.from_dense(np.ones((2, 2)))
    with pytest.raises(ValueError, match="full"):
        random_regrow(w, 1, rng_seed=0)
    w3 = SparseWeights(2, 2, [0, 0, 1], [0, 1, 0], [1.0] * 3)
    with pytest.raises(ValueError):
        random_regrow(w3, 2, rng_seed=0)


def test_regrow_standard_normal_by_default():
    w = SparseWeights.empty(100, 100)
    grown, _ = random_regrow(w, 5000, rng_seed=1)
    assert abs(grown.values.std() - 1.0) < 0.05


def test_regrow_uniform_over_absent_cells():
    base = erdos_renyi_init(50, 50, 1.0, rng_seed=11)
    base = SparseWeights(50, 50, base.rows, base.cols, base.values)
    assert abs(base.density - 0.04) < 0.01
    absent = np.setdiff1d(np.arange(2500), base.linear_index())
    counts = np.zeros(2500, dtype=np.int64)
    for s in range(1000):
        _, new = random_regrow(base, 20, rng_seed=s)
        np.add.at(counts, new, 1)
    assert counts[base.linear_index()].sum() == 0
    observed = counts[absent]
    _, pval = stats.chisquare(observed)
    assert pval > 0.01


@given(sparse_instances(max_dim=10), st.floats(0.0, 0.95), st.integers(0, 10_000))
@settings(max_examples=60)
def test_prune_regrow_conserves_count(inst, zeta, seed):
    w, _ = inst
    removed, _ = magnitude_partition(w, zeta)
    pruned = remove_entries(w, removed)
    grown, new = random_regrow(pruned, removed.size, rng_seed=seed)
    assert grown.nnz == w.nnz
    assert np.intersect1d(new, pruned.linear_index()).size == 0
    assert np.unique(grown.linear_index()).size == grown.nnz
