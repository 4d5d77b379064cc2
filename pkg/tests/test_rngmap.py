import numpy as np
import pytest

from roma import tensor as T
from roma.errors import ConfigError, DimensionError
from roma.rngmap import RandomMap, RegenSchedule, generate, maybe_regenerate, project

from conftest import leaf


def test_rademacher_support():
    L = generate("rademacher", 64, 32, seed=3, index=0).L
    assert set(np.unique(L)) == {-1.0, 1.0}


def test_bernoulli01_support():
    L = generate("bernoulli01", 64, 32, seed=3, index=0).L
    assert set(np.unique(L)) == {0.0, 1.0}


def test_uniform_range():
    L = generate("uniform", 200, 100, seed=1, index=0).L
    assert L.min() >= -1 and L.max() <= 1
    # U(-1,1) variance is 1/3
    assert L.var() == pytest.approx(1 / 3, abs=0.01)


def test_normal_sample_statistics():
    L = generate("normal", 2048, 1024, seed=0, index=0).L
    assert abs(L.mean()) < 0.01
    assert 0.98 <= L.var() <= 1.02


def test_generation_is_deterministic_and_index_sensitive():
    a = generate("normal", 16, 8, seed=5, index=2).L
    b = generate("normal", 16, 8, seed=5, index=2).L
    c = generate("normal", 16, 8, seed=5, index=3).L
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_generated_matrix_is_read_only():
    L = generate("normal", 4, 4, seed=0, index=0).L
    with pytest.raises(ValueError):
        L[0, 0] = 1.0


def test_unknown_distribution():
    with pytest.raises(ConfigError):
        generate("cauchy", 2, 2, seed=0, index=0)


def _map(L):
    L = np.asarray(L, dtype=np.float64)
    return RandomMap(L=L, distribution="normal", seed=0, generation_index=1,
                     d_in=L.shape[1], d_out=L.shape[0])


def test_project_identity_cases(rng):
    z = rng.standard_normal((4, 3))
    assert np.array_equal(project(_map(np.eye(3)), leaf(z), renormalize=False).data, z)
    unit = z / np.linalg.norm(z, axis=1, keepdims=True)
    assert np.allclose(project(_map(2 * np.eye(3)), leaf(unit), renormalize=True).data, unit, atol=1e-15)


def test_project_hand_example():
    rmap = _map([[1.0, 1.0]])
    lu = project(rmap, leaf([[1.0, 0.0]]), renormalize=False).data
    lv = project(rmap, leaf([[0.0, 1.0]]), renormalize=False).data
    assert (lu @ lv.T).item() == 1.0
    assert np.array([1.0, 0.0]) @ rmap.bilinear_matrix() @ np.array([0.0, 1.0]) == 1.0


def test_project_shape_mismatch():
    with pytest.raises(DimensionError):
        project(_map(np.ones((2, 3))), leaf(np.ones((1, 4))))


def test_project_gradient_flows_to_z_not_L(rng):
    rmap = generate("normal", 3, 4, seed=0, index=1)
    z = leaf(rng.standard_normal((2, 4)))
    before = rmap.L.copy()
    T.sum(project(rmap, z)).backward()
    assert z.grad is not None and np.any(z.grad != 0)
    assert np.array_equal(rmap.L, before)


def test_schedule_boundaries():
    s = RegenSchedule("per_epoch")
    m0 = generate("normal", 4, 4, seed=0, index=0)
    assert maybe_regenerate(m0, s, 3, 0).generation_index == 1
    assert maybe_regenerate(m0, s, 3, 5) is m0
    pb = RegenSchedule("per_batch")
    assert maybe_regenerate(m0, pb, 3, 5).generation_index == 1


def test_none_schedule_is_identity():
    s = RegenSchedule("none")
    m0 = generate("normal", 4, 4, seed=0, index=0)
    for epoch in range(3):
        for batch in range(3):
            assert maybe_regenerate(m0, s, epoch, batch).is_identity


def _count(schedule, epochs, batches):
    m = generate("normal", 2, 2, seed=0, index=0)
    count = 0
    for e in range(epochs):
        for b in range(batches):
            nxt = maybe_regenerate(m, schedule, e, b)
            count += nxt.generation_index != m.generation_index
            m = nxt
    return count


def test_per_k_epochs_counts_three_over_25():
    assert _count(RegenSchedule("per_k_epochs", 10), 25, 4) == 3


@pytest.mark.parametrize("policy, k", [("per_batch", 1), ("per_epoch", 1), ("per_k_epochs", 10),
                                       ("per_k_epochs", 3), ("none", 1)])
@pytest.mark.parametrize("epochs, batches", [(1, 1), (7, 3), (25, 4), (31, 2)])
def test_schedule_totality(policy, k, epochs, batches):
    s = RegenSchedule(policy, k)
    assert _count(s, epochs, batches) == s.expected_generations(epochs, batches)


def test_bilinear_equivalence_and_psd(rng):
    for t in range(300):
        dist = ("normal", "uniform", "rademacher")[t % 3]
        d_in, d_out = int(rng.integers(1, 129)), int(rng.integers(1, 65))
        L = generate(dist, d_out, d_in, seed=t, index=0).L
        u, v = rng.standard_normal(d_in), rng.standard_normal(d_in)
        bil = u @ (L.T @ L) @ v
        assert abs(bil - (L @ u) @ (L @ v)) / (abs(bil) + 1e-12) < 1e-10
        assert v @ (L.T @ L) @ v >= -1e-12
