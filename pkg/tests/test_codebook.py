import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from hymirec.codebook import (QuantCodes, ResidualCodebook, ResidualQuantizer, build_codebook,
                              compression_ratio, decode, encode, mean_cosine_fidelity)
from hymirec.eval.synthetic import SyntheticSpec, generate_synthetic
from hymirec.exceptions import DataError


@pytest.fixture(scope="module")
def pool():
    return np.random.default_rng(0).normal(size=(600, 16))


@pytest.fixture(scope="module")
def cb(pool):
    return build_codebook(pool, layers=3, k=16, seed=0)


def test_shapes(cb):
    assert cb.centroids.shape == (3, 16, 16)
    assert (cb.n_layers, cb.n_clusters, cb.dim) == (3, 16, 16)


def test_projection_residual_is_orthogonal(pool, cb):
    q, res = encode(pool, cb, return_residuals=True)
    prev = pool
    for i in range(cb.n_layers):
        c = cb.centroids[i][q.codes[:, i]]
        r = res[:, i]
        live = np.linalg.norm(prev, axis=1) > 1e-8
        cos = np.abs((r * c).sum(1)) / (np.linalg.norm(r, axis=1) * np.linalg.norm(c, axis=1))
        assert cos[live].max() < 1e-10
        prev = r


def test_projection_matches_hand_formula(cb):
    e = np.random.default_rng(1).normal(size=16)
    q = encode(e, cb)
    c = cb.centroids[0][q.codes[0]]
    assert q.projections[0] == pytest.approx(e @ c / (c @ c), rel=1e-12)


def test_decode_reconstructs_sum(pool, cb):
    q = encode(pool[:5], cb)
    manual = sum(q.projections[:, i, None] * cb.centroids[i][q.codes[:, i]] for i in range(3))
    np.testing.assert_allclose(decode(q, cb), manual)


def test_residual_norm_and_fidelity_improve_with_layers(pool, cb):
    q, res = encode(pool, cb, return_residuals=True)
    norms = np.linalg.norm(res, axis=2).mean(0)
    assert norms[0] > norms[1] > norms[2]
    fid = [mean_cosine_fidelity(pool, decode(q, cb, n_layers=n)) for n in (1, 2, 3)]
    assert fid[0] < fid[1] < fid[2]


def test_zero_embedding_keeps_zero_projection(cb):
    q = encode(np.zeros(16), cb)
    np.testing.assert_array_equal(q.projections, 0.0)
    np.testing.assert_array_equal(decode(q, cb), 0.0)


def test_exact_centroid_leaves_zero_residual():
    C = np.stack([np.eye(4), np.eye(4)[::-1]])
    cb = ResidualCodebook(C)
    q, res = encode(np.array([0, 3.0, 0, 0]), cb, return_residuals=True)
    assert q.codes[0] == 1 and q.projections[0] == pytest.approx(3.0)
    np.testing.assert_allclose(res[0], 0.0)
    # the vanished residual repeats the previous code with projection 0
    assert q.codes[1] == q.codes[0] and q.projections[1] == 0.0


def test_pool_smaller_than_k():
    with pytest.raises(DataError, match="k=8"):
        build_codebook(np.ones((4, 3)), k=8)


def test_out_of_range_code_raises(cb):
    bad = QuantCodes(np.array([[0, 0, 99]]), np.ones((1, 3)))
    with pytest.raises(IndexError):
        decode(bad, cb)


def test_wrong_dim_raises(cb):
    with pytest.raises(ValueError):
        encode(np.ones(5), cb)


def test_deterministic(pool):
    a = build_codebook(pool, layers=2, k=8, seed=3)
    b = build_codebook(pool, layers=2, k=8, seed=3)
    np.testing.assert_array_equal(a.centroids, b.centroids)


def test_euclidean_variant_has_unit_projections(pool):
    cb = build_codebook(pool, layers=2, k=8, seed=0, metric="euclidean")
    q = encode(pool[:10], cb)
    np.testing.assert_array_equal(q.projections, 1.0)


def test_cosine_beats_euclidean_on_cone_data():
    spec = SyntheticSpec(n_clusters=4, items_per_cluster=400, cluster_spread=0.5,
                         n_users=4, sequence_length=10, dim=16, seed=0)
    X = generate_synthetic(spec).embeddings
    X = X * np.random.default_rng(0).uniform(0.2, 5.0, size=(len(X), 1))
    fid = {}
    for metric in ("cosine", "euclidean"):
        cb = build_codebook(X, layers=2, k=16, seed=0, metric=metric)
        fid[metric] = mean_cosine_fidelity(X, decode(encode(X, cb), cb))
    assert fid["cosine"] > fid["euclidean"]


@pytest.mark.parametrize("d,L,expected", [(2048, 3, 341.333333), (64, 3, 10.666667), (8, 1, 4.0)])
def test_compression_ratio(d, L, expected):
    assert compression_ratio(d, L) == pytest.approx(expected, rel=1e-6)


def test_compression_ratio_rejects_nonpositive():
    with pytest.raises(ValueError):
        compression_ratio(0, 3)


class TestResidualQuantizer:
    def test_fit_transform(self, pool):
        qz = ResidualQuantizer(n_layers=2, n_clusters=8, random_state=0).fit(pool)
        assert qz.centroids_.shape == (2, 8, 16)
        assert qz.transform(pool).shape == pool.shape
        assert 0.0 < qz.score(pool) <= 1.0

    def test_base_pool_subsample(self, pool):
        qz = ResidualQuantizer(n_layers=1, n_clusters=4, base_pool_size=100).fit(pool)
        assert qz.n_features_in_ == 16

    def test_sklearn_contract(self, pool):
        qz = ResidualQuantizer(n_layers=2, n_clusters=4)
        assert clone(qz).get_params() == qz.get_params()
        pipe = make_pipeline(ResidualQuantizer(n_layers=1, n_clusters=4)).fit(pool)
        assert pipe.transform(pool[:3]).shape == (3, 16)

    def test_from_codebook(self, cb, pool):
        qz = ResidualQuantizer.from_codebook(cb)
        np.testing.assert_array_equal(qz.encode(pool[:4]).codes, encode(pool[:4], cb).codes)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_orthogonality_property(seed, layers):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 6))
    cb = build_codebook(X, layers=layers, k=4, seed=seed, max_iters=5)
    E = rng.normal(size=(20, 6))
    q, res = encode(E, cb, return_residuals=True)
    prev = E
    for i in range(layers):
        c = cb.centroids[i][q.codes[:, i]]
        live = np.linalg.norm(prev, axis=1) > 1e-8
        dots = np.abs((res[:, i] * c).sum(1))
        assert np.all(dots[live] <= 1e-9 * np.linalg.norm(prev[live], axis=1) * np.linalg.norm(c[live], axis=1) + 1e-12)
        prev = res[:, i]
