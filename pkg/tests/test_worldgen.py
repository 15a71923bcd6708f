import itertools

import numpy as np
import pytest

from fedgen.errors import ConfigError
from fedgen.worldgen import SEPARATION_FLOOR, Dataset, make_world, sample_dataset


def _min_sep(world):
    m = world.class_domain_means
    return min(
        np.linalg.norm(m[a, d] - m[b, d])
        for d in range(world.num_domains)
        for a, b in itertools.combinations(range(world.num_classes), 2)
    )


def test_means_lie_on_sphere():
    w = make_world(10, 1, 64, mean_radius=5, within_std=1, seed=1)
    assert w.class_domain_means.shape == (10, 1, 64)
    np.testing.assert_allclose(np.linalg.norm(w.class_domain_means, axis=-1), 5.0, atol=1e-6)


def test_shared_offset_moves_the_sphere_center():
    w = make_world(10, 2, 16, mean_radius=3, within_std=1, seed=4, shared_offset=7.0)
    assert np.linalg.norm(w.center) == pytest.approx(7.0)
    np.testing.assert_allclose(np.linalg.norm(w.class_domain_means - w.center, axis=-1), 3.0, atol=1e-6)
    assert w.shared_offset == pytest.approx(7.0)


def test_world_is_deterministic():
    a = make_world(seed=9)
    b = make_world(seed=9)
    assert a.class_domain_means.tobytes() == b.class_domain_means.tobytes()


def test_separation_exceeds_two_std_in_most_seeds():
    ok = sum(_min_sep(make_world(10, 1, 64, 5.0, 1.0, seed=s)) > 2.0 for s in range(100))
    assert ok >= 95


def test_separation_floor_enforced():
    for s in range(20):
        w = make_world(10, 2, 3, mean_radius=3.0, within_std=1.0, seed=s)
        assert _min_sep(w) >= SEPARATION_FLOOR * 1.0


def test_unsatisfiable_floor_is_config_error():
    # 10 points on a unit circle can be at most 0.618 apart
    with pytest.raises(ConfigError):
        make_world(10, 1, 2, mean_radius=1.0, within_std=1.0, seed=0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(num_classes=0), dict(num_domains=0), dict(feature_dim=1), dict(mean_radius=0), dict(within_std=-1), dict(shared_offset=-1)],
)
def test_degenerate_world_rejected(kwargs):
    with pytest.raises(ConfigError):
        make_world(**kwargs)


def test_sample_counts():
    w = make_world(10, 1, 8, 5, 1, seed=0)
    d = sample_dataset(w, 3, seed=1)
    assert len(d) == 30
    assert np.bincount(d.labels).tolist() == [3] * 10


def test_exact_class_domain_histogram():
    w = make_world(4, 3, 8, 5, 1, seed=0)
    d = sample_dataset(w, 7, seed=2)
    table = np.zeros((4, 3), dtype=int)
    np.add.at(table, (d.labels, d.domains), 1)
    assert np.all(table == 7)


def test_sample_means_converge():
    w = make_world(3, 1, 4, 5, 2.0, seed=5)
    n = 10_000
    d = sample_dataset(w, n, seed=6)
    for c in range(3):
        est = d.features[d.labels == c].mean(axis=0)
        assert np.all(np.abs(est - w.mean(c, 0)) <= 3 * 2.0 / np.sqrt(n))


def test_reproducible_and_seed_sensitive():
    w = make_world(seed=2)
    a, b = sample_dataset(w, 5, seed=1), sample_dataset(w, 5, seed=1)
    assert a.features.tobytes() == b.features.tobytes()
    c = sample_dataset(w, 5, seed=2)
    assert not np.array_equal(a.features[0], c.features[0])


def test_train_test_share_no_sample():
    w = make_world(4, 2, 6, 5, 1, seed=0)
    train, test = sample_dataset(w, 20, seed=1), sample_dataset(w, 20, seed=2)
    rows = {r.tobytes() for r in train.features}
    assert not any(r.tobytes() in rows for r in test.features)


def test_samples_view_matches_columns(small_data):
    first = next(iter(small_data.samples))
    assert first.label == small_data.labels[0]
    np.testing.assert_array_equal(first.features, small_data.features[0])


def test_sample_requires_positive_n(small_world):
    with pytest.raises(ConfigError):
        sample_dataset(small_world, 0, seed=0)


def test_csv_round_trip(tmp_path, small_data):
    path = tmp_path / "data.csv"
    small_data.to_csv(path)
    back = Dataset.from_csv(path)
    np.testing.assert_array_equal(back.features, small_data.features)
    np.testing.assert_array_equal(back.labels, small_data.labels)
    np.testing.assert_array_equal(back.domains, small_data.domains)
