import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgen.errors import ConfigError, ContractViolation
from fedgen.learner import ModelShape, TrainConfig, evaluate, init_params, sgd_train
from fedgen.oracle import (
    Prompt,
    PromptKind,
    class_prompts,
    dequantize,
    instance_prompts,
    pretrain_oracle,
    quantize,
    synthesize,
)
from fedgen.worldgen import Dataset, make_world, sample_dataset


@pytest.fixture(scope="module")
def world():
    return make_world(10, 1, 16, mean_radius=5.0, within_std=1.0, seed=7)


def _all_class_prompts(w):
    return [Prompt(PromptKind.CLASS_LEVEL, c, d) for c in range(w.num_classes) for d in range(w.num_domains)]


def test_zero_eps_copies_true_means(world):
    o = pretrain_oracle(world, 0.0, seed=1)
    assert o.approx_means.tobytes() == world.class_domain_means.tobytes()


def test_eps_sets_exact_displacement_per_domain():
    w = make_world(5, 3, 8, 5, 1, seed=2)
    o = pretrain_oracle(w, [0.0, 1.0, 3.0], seed=4)
    dist = np.linalg.norm(o.approx_means - w.class_domain_means, axis=-1)
    np.testing.assert_allclose(dist[:, 2], 3.0, atol=1e-6)
    np.testing.assert_allclose(dist[:, 1], 1.0, atol=1e-6)
    assert np.all(dist[:, 0] == 0)


def test_mem_pool_disjoint_from_client_data(world):
    o = pretrain_oracle(world, 0.5, mem_pool_size=100, seed=3)
    assert len(o.mem_pool) == 100
    pool = {r.tobytes() for r in o.mem_pool.features}
    for s in range(5):
        client = sample_dataset(world, 20, seed=s)
        assert not any(r.tobytes() in pool for r in client.features)


def test_mem_pool_is_read_only(world):
    o = pretrain_oracle(world, 0.5, mem_pool_size=10, seed=3)
    with pytest.raises(ValueError):
        o.mem_pool.features[0, 0] = 1.0


@pytest.mark.parametrize(
    "kwargs",
    [dict(fidelity_eps_per_domain=-1.0), dict(p_mem=1.5), dict(p_mem=0.1, mem_pool_size=0), dict(instance_std=0.0)],
)
def test_oracle_preconditions(world, kwargs):
    args = dict(fidelity_eps_per_domain=0.5)
    args.update(kwargs)
    with pytest.raises(ConfigError):
        pretrain_oracle(world, **args)


def test_class_prompts_dedup(world):
    d = sample_dataset(world, 100, seed=0)
    two = d.subset(np.flatnonzero(np.isin(d.labels, [0, 3])))
    ps = class_prompts(two)
    assert [(p.class_id, p.domain_id) for p in ps] == [(0, 0), (3, 0)]
    assert len(class_prompts(d)) == 10
    assert all(p.descriptor is None for p in ps)


def test_class_prompts_for_domain_client():
    w = make_world(10, 6, 4, 5, 1, seed=0)
    d = sample_dataset(w, 3, seed=1)
    local = d.subset(np.flatnonzero(d.domains == 4))
    ps = class_prompts(local)
    assert len(ps) == 10 and {p.domain_id for p in ps} == {4}


def test_prompts_reject_empty(world):
    empty = sample_dataset(world, 1, seed=0).subset([])
    with pytest.raises(ContractViolation):
        class_prompts(empty)
    with pytest.raises(ContractViolation):
        instance_prompts(empty, (-1.0, 1.0))


def test_instance_prompts_one_per_sample(world):
    d = sample_dataset(world, 50, seed=0)
    ps = instance_prompts(d, world.bounds())
    assert len(ps) == 500
    assert all(len(p.descriptor) == world.feature_dim for p in ps)


def test_quantizer_endpoints_and_bound():
    lo, hi = -3.0, 5.0
    assert quantize([lo, hi, lo - 10, hi + 10], (lo, hi)).tolist() == [0, 255, 0, 255]
    with pytest.raises(ConfigError):
        quantize([0.0], (1.0, 1.0))


@given(st.lists(st.floats(-3.0, 5.0), min_size=1, max_size=50))
def test_quantization_error_bound(values):
    lo, hi = -3.0, 5.0
    x = np.array(values)
    err = np.abs(dequantize(quantize(x, (lo, hi)), (lo, hi)) - x)
    assert np.all(err <= (hi - lo) / 255 + 1e-12)


def test_synthesis_counts(world):
    o = pretrain_oracle(world, 0.5, seed=1)
    syn = synthesize(o, _all_class_prompts(world), 200, seed=2)
    assert len(syn) == 2000
    assert np.bincount(syn.labels).tolist() == [200] * 10


def test_synthetic_means_converge(world):
    o = pretrain_oracle(world, 0.0, seed=1)
    prompts = [Prompt(PromptKind.CLASS_LEVEL, c, 0) for c in (0, 5)]
    n = 10_000
    syn = synthesize(o, prompts, n, seed=3)
    for c in (0, 5):
        est = syn.features[syn.labels == c].mean(axis=0)
        assert np.all(np.abs(est - world.mean(c, 0)) <= 3 * world.within_std / np.sqrt(n))


def test_memorization_rate_is_binomial(world):
    o = pretrain_oracle(world, 0.5, mem_pool_size=1000, p_mem=0.1, seed=1)
    syn = synthesize(o, _all_class_prompts(world), 200, seed=5)
    pool = {r.tobytes() for r in o.mem_pool.features}
    hits = sum(r.tobytes() in pool for r in syn.features)
    assert abs(hits - 200) <= 3 * np.sqrt(2000 * 0.1 * 0.9)
    clean = synthesize(pretrain_oracle(world, 0.5, p_mem=0.0, seed=1), _all_class_prompts(world), 200, seed=5)
    assert not any(r.tobytes() in pool for r in clean.features)


def test_memorized_sample_is_cosine_nearest(world):
    o = pretrain_oracle(world, 0.5, mem_pool_size=200, p_mem=1.0, seed=1)
    syn = synthesize(o, [Prompt(PromptKind.CLASS_LEVEL, 2, 0)], 3, seed=0)
    center = o.approx_means[2, 0]
    pool = o.mem_pool.features
    cos = pool @ center / (np.linalg.norm(pool, axis=1) * np.linalg.norm(center))
    for row in syn.features:
        np.testing.assert_array_equal(row, pool[int(np.argmax(cos))])


def test_label_fidelity(world):
    o = pretrain_oracle(world, 0.5, seed=1)
    d = sample_dataset(world, 3, seed=0)
    prompts = list(class_prompts(d)) + list(instance_prompts(d, o.bounds))
    syn = synthesize(o, prompts, 4, seed=1)
    expected = np.concatenate([np.full(4 if p.kind == PromptKind.CLASS_LEVEL else 1, p.class_id) for p in prompts])
    np.testing.assert_array_equal(syn.labels, expected)


def test_synthesis_deterministic(world):
    o = pretrain_oracle(world, 0.5, seed=1)
    a = synthesize(o, _all_class_prompts(world), 10, seed=9)
    b = synthesize(o, _all_class_prompts(world), 10, seed=9)
    assert a.features.tobytes() == b.features.tobytes()


def test_class_level_ignores_client_features(world):
    o = pretrain_oracle(world, 0.5, seed=1)
    d = sample_dataset(world, 5, seed=0)
    moved = Dataset(d.features * -3.0 + 11.0, d.labels, d.domains, d.world_id)
    a = synthesize(o, class_prompts(d).prompts, 20, seed=4)
    b = synthesize(o, class_prompts(moved).prompts, 20, seed=4)
    assert a.features.tobytes() == b.features.tobytes()


def test_instance_prompts_stay_close_to_source():
    w = make_world(10, 1, 64, 5.0, 2.5, seed=3, shared_offset=20.0)
    o = pretrain_oracle(w, 2.0, seed=1)
    d = sample_dataset(w, 50, seed=0)
    lo, hi = o.bounds
    bound = (hi - lo) / 255 * np.sqrt(w.feature_dim) + 3 * o.instance_std * np.sqrt(w.feature_dim)
    inst = synthesize(o, instance_prompts(d, o.bounds).prompts, 1, seed=2)
    d_inst = np.linalg.norm(inst.features - d.features, axis=1)
    assert d_inst.mean() <= bound
    # class-level draws for the same labels, paired with the same real samples
    cls = synthesize(o, [Prompt(PromptKind.CLASS_LEVEL, int(y), 0) for y in d.labels], 1, seed=2)
    d_cls = np.linalg.norm(cls.features - d.features, axis=1)
    assert d_inst.mean() < d_cls.mean()


def test_accuracy_nonincreasing_in_fidelity_gap():
    w0 = dict(num_classes=10, num_domains=1, feature_dim=64, mean_radius=5.0, within_std=2.5, shared_offset=20.0)
    eps_grid = [0.0, 1.0, 2.0, 4.0]
    acc = np.zeros((5, len(eps_grid)))
    for s in range(5):
        w = make_world(seed=s, **w0)
        test = sample_dataset(w, 200, seed=1000 + s)
        for j, eps in enumerate(eps_grid):
            o = pretrain_oracle(w, eps, seed=s)
            syn = synthesize(o, _all_class_prompts(w), 500, seed=s)
            model = init_params(ModelShape(64, 0, 10), seed=s)
            model = sgd_train(model, syn, TrainConfig(epochs=30, seed=s))
            acc[s, j] = evaluate(model, test)[0] * 100
    curve = acc.mean(axis=0)
    rises = [curve[i + 1] - curve[i] for i in range(3) if curve[i + 1] > curve[i]]
    assert len(rises) <= 1 and all(r <= 1.0 for r in rises), curve
