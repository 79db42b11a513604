"""Clustering invariants: Lloyd behavior, conjugation, serialization.

WWCSS oracle values were computed by running the deterministic
clustering once and freezing the results; the random-partition
baseline is recomputed inline from a fixed seed.
"""

import json

import numpy as np
import pytest

from pssdet import (
    ClusterTable,
    conjugate_table,
    kmeans_cluster,
    load_table,
    pss_time_domain,
    save_table,
)
from pssdet.clustering import _wwcss

# Deterministic farthest-point Lloyd results on the 128-sample bodies.
# Frozen from a reference run; regenerating must reproduce them.
EXPECTED_WWCSS = {
    (25, 6): 0.075581397,
    (25, 8): 0.041833116,
    (25, 16): 0.016106038,
    (29, 6): 0.060717344,
    (29, 8): 0.048075167,
    (29, 16): 0.014625481,
}


def _body(u, n=128):
    return pss_time_domain(u, n).body


# ---------------------------------------------------------------------------
# Lloyd iteration behavior.
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(("u", "k"), sorted(EXPECTED_WWCSS))
def test_wwcss_reaches_frozen_value(u, k):
    t = kmeans_cluster(_body(u), k, root=u)
    assert t.converged
    assert abs(t.final_wwcss - EXPECTED_WWCSS[(u, k)]) < 1e-8


@pytest.mark.parametrize(("u", "k"), sorted(EXPECTED_WWCSS))
def test_wwcss_monotone_non_increasing(u, k):
    t = kmeans_cluster(_body(u), k, root=u)
    hist = t.wwcss_history
    assert len(hist) >= 1
    for prev, cur in zip(hist, hist[1:]):
        assert cur <= prev + 1e-15
    assert t.final_wwcss == hist[-1]


@pytest.mark.parametrize(("u", "k"), sorted(EXPECTED_WWCSS))
def test_converged_tables_are_fixed_points(u, k):
    body = _body(u)
    t = kmeans_cluster(body, k, root=u)
    # Re-assigning against the final means must not move anything, and
    # the means must already be the member averages.
    d2 = np.abs(body[:, None] - t.means[None, :]) ** 2
    np.testing.assert_array_equal(np.argmin(d2, axis=1), t.assignment)
    for j in range(k):
        np.testing.assert_allclose(
            t.means[j], body[t.assignment == j].mean(), atol=1e-14
        )


def test_k1_collapses_to_sample_mean():
    body = _body(25)
    t = kmeans_cluster(body, 1, root=25)
    np.testing.assert_allclose(t.means[0], body.mean(), atol=1e-15)
    # Zero-mean template, so the objective equals the body energy.
    assert abs(t.final_wwcss - 62 / 128) < 1e-12
    assert t.sizes.tolist() == [128]


def test_k_equals_n_is_exact():
    body = _body(25)
    t = kmeans_cluster(body, 128, root=25)
    assert t.converged
    assert t.final_wwcss == 0.0
    np.testing.assert_array_equal(np.sort(t.assignment), np.arange(128))
    np.testing.assert_allclose(t.quantized_template(), body, atol=1e-15)


def test_beats_random_partitions():
    # 200 random K=16 partitions with centroid-optimal means; the
    # deterministic run must beat the best of them decisively (the
    # frozen reference margin against 1000 partitions is 23x).
    body = _body(25)
    k = 16
    rng = np.random.default_rng(2024)
    w = np.ones(k)
    best = np.inf
    for _ in range(200):
        while True:
            a = rng.integers(0, k, size=len(body))
            if len(np.unique(a)) == k:
                break
        means = np.asarray([body[a == j].mean() for j in range(k)])
        best = min(best, _wwcss(body, means, a, w))
    t = kmeans_cluster(body, k, root=25)
    assert t.final_wwcss < 0.25 * best


def test_clustering_is_deterministic():
    a = kmeans_cluster(_body(29), 8, root=29)
    b = kmeans_cluster(_body(29), 8, root=29)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    assert a.final_wwcss == b.final_wwcss


def test_restarts_never_hurt():
    body = _body(25)
    base = kmeans_cluster(body, 8, root=25)
    improved = kmeans_cluster(body, 8, root=25, seed=7, random_restarts=20)
    assert improved.final_wwcss <= base.final_wwcss + 1e-15


def test_symmetric_samples_share_clusters():
    # s(n) = s(N - n), and identical values cannot be split by argmin.
    t = kmeans_cluster(_body(25), 8, root=25)
    n = np.arange(1, 128)
    np.testing.assert_array_equal(t.assignment[n], t.assignment[128 - n])


def test_lut_groups_members_in_order():
    t = kmeans_cluster(_body(29), 6, root=29)
    starts = t.cluster_starts()
    assert starts[0] == 0
    for j in range(6):
        stop = starts[j + 1] if j < 5 else 128
        members = t.lut[starts[j]: stop]
        assert np.all(np.diff(members) > 0)
        np.testing.assert_array_equal(t.assignment[members], j)
    np.testing.assert_array_equal(np.sort(t.lut), np.arange(128))


def test_validation_errors():
    body = _body(25)
    with pytest.raises(ValueError):
        kmeans_cluster(body, 0)
    with pytest.raises(ValueError):
        kmeans_cluster(body, 129)
    with pytest.raises(ValueError):
        kmeans_cluster(body.reshape(2, 64), 4)
    with pytest.raises(ValueError):
        kmeans_cluster(body, 4, weights=np.ones(3))
    with pytest.raises(ValueError):
        kmeans_cluster(body, 4, weights=np.array([1.0, 1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        kmeans_cluster(body, 4, root=26)
    with pytest.raises(ValueError):
        kmeans_cluster(body, 4, max_iters=0)


# ---------------------------------------------------------------------------
# Conjugate table derivation.
# ---------------------------------------------------------------------------

def test_conjugate_table_matches_direct_clustering():
    # Conjugating the samples changes no distance, so clustering the
    # root-34 body directly must give exactly the conjugated table.
    t29 = kmeans_cluster(_body(29), 8, root=29)
    t34 = conjugate_table(t29)
    assert t34.root == 34
    direct = kmeans_cluster(np.conj(_body(29)), 8, root=34)
    np.testing.assert_array_equal(t34.means, direct.means)
    np.testing.assert_array_equal(t34.assignment, direct.assignment)

    np.testing.assert_array_equal(t34.means, np.conj(t29.means))
    np.testing.assert_array_equal(t34.assignment, t29.assignment)
    np.testing.assert_array_equal(t34.lut, t29.lut)
    assert t34.final_wwcss == t29.final_wwcss
    # Round trip back.
    back = conjugate_table(t34)
    assert back.root == 29
    np.testing.assert_array_equal(back.means, t29.means)


def test_conjugate_table_rejects_unpaired_roots():
    t25 = kmeans_cluster(_body(25), 8, root=25)
    with pytest.raises(ValueError):
        conjugate_table(t25)
    anon = kmeans_cluster(_body(25), 8)
    with pytest.raises(ValueError):
        conjugate_table(anon)


# ---------------------------------------------------------------------------
# Serialization.
# ---------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    t = kmeans_cluster(_body(25), 8, root=25)
    path = tmp_path / "table.json"
    save_table(t, path)
    back = load_table(path)
    assert isinstance(back, ClusterTable)
    assert back.root == 25
    assert back.size_n == 128 and back.num_clusters == 8
    np.testing.assert_array_equal(back.means, t.means)
    np.testing.assert_array_equal(back.assignment, t.assignment)
    np.testing.assert_array_equal(back.lut, t.lut)
    np.testing.assert_array_equal(back.sizes, t.sizes)
    assert back.final_wwcss == t.final_wwcss
    assert back.converged == t.converged


def test_save_is_rewritable_byte_identical(tmp_path):
    t = kmeans_cluster(_body(29), 16, root=29)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_table(t, a)
    save_table(t, b)
    assert a.read_bytes() == b.read_bytes()


def _corrupt(tmp_path, name, mutate):
    t = kmeans_cluster(_body(25), 4, root=25)
    path = tmp_path / f"{name}.json"
    save_table(t, path)
    doc = json.loads(path.read_text())
    mutate(doc)
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_table(path)


def test_load_rejects_bad_schema_version(tmp_path):
    _corrupt(tmp_path, "ver", lambda d: d.update(schema_version=99))


def test_load_rejects_missing_field(tmp_path):
    _corrupt(tmp_path, "missing", lambda d: d.pop("means"))


def test_load_rejects_bad_root(tmp_path):
    _corrupt(tmp_path, "root", lambda d: d.update(root_u=26))


def test_load_rejects_size_mismatch(tmp_path):
    _corrupt(tmp_path, "sizes", lambda d: d.update(sizes=[128, 0, 0, 0]))


def test_load_rejects_assignment_out_of_range(tmp_path):
    def mutate(d):
        d["assignment"][0] = 4
    _corrupt(tmp_path, "assign", mutate)


def test_load_rejects_non_permutation_lut(tmp_path):
    def mutate(d):
        d["lut_pi"][0] = d["lut_pi"][1]
    _corrupt(tmp_path, "lutdup", mutate)


def test_load_rejects_reordered_lut(tmp_path):
    def mutate(d):
        d["lut_pi"][0], d["lut_pi"][1] = d["lut_pi"][1], d["lut_pi"][0]
    _corrupt(tmp_path, "lutord", mutate)


def test_load_rejects_negative_wwcss(tmp_path):
    _corrupt(tmp_path, "wwcss", lambda d: d.update(final_wwcss=-1.0))
