import numpy as np
import pytest

from roma import tensor as T
from roma.encoder import encode, from_state, init_params, predict
from roma.errors import BatchSizeError, ConfigError


def small(predictor=False, seed=0):
    return init_params(6, (16, 12), projector_dim=8, predictor=predictor, seed=seed)


def test_describe_matches_projector_structure():
    lines = small().describe()
    proj = [l for l in lines if l.startswith("projector.")]
    assert proj == ["projector.linear(12->8)", "projector.bn(8)", "projector.leaky_relu(0.2)",
                    "projector.linear(8->8)", "projector.bn(8)", "projector.leaky_relu(0.2)",
                    "projector.linear(8->8)", "projector.bn(8)"]


def test_encode_rows_are_unit_norm(rng):
    z = encode(small(), rng.standard_normal((10, 6)), "train").data
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)


def test_eval_mode_is_batch_independent_bitwise(rng):
    p = small()
    encode(p, rng.standard_normal((32, 6)), "train")     # move running stats off their init
    x = rng.standard_normal((9, 6))
    full = encode(p, x, "eval").data
    for i in range(len(x)):
        alone = encode(p, x[i:i + 1], "eval").data
        assert alone.tobytes() == full[i:i + 1].tobytes()
    shuffled = encode(p, x[::-1], "eval").data
    assert shuffled[::-1].tobytes() == full.tobytes()


def test_train_forward_reproducible(rng):
    x = rng.standard_normal((8, 6))
    assert encode(small(), x).data.tobytes() == encode(small(), x).data.tobytes()


def test_train_mode_needs_two_rows():
    with pytest.raises(BatchSizeError):
        encode(small(), np.ones((1, 6)), "train")


def test_predictor(rng):
    p = small(predictor=True)
    fw = p.forward(rng.standard_normal((8, 6)), "train")
    out = predict(p, fw.z_raw)
    assert out.shape == (8, 8)
    assert np.allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-6)
    T.sum(T.mul(out, T.Tensor(rng.standard_normal((8, 8))))).backward()
    grads = {name: t.grad for name, t, _ in p.named_parameters()}
    assert np.any(grads["predictor.0.weight"]) and np.any(grads["backbone.0.weight"])


def test_predict_without_predictor():
    p = small()
    with pytest.raises(ConfigError):
        predict(p, T.Tensor(np.ones((2, 8))))


def test_init_deterministic_and_seed_sensitive():
    a, b, c = small(seed=1).state_dict(), small(seed=1).state_dict(), small(seed=2).state_dict()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert not np.array_equal(a["backbone.0.weight"], c["backbone.0.weight"])
    assert all(not np.any(v) for k, v in a.items() if k.endswith(".bias"))


def test_zero_input_gives_finite_output():
    assert np.all(np.isfinite(encode(small(), np.zeros((4, 6)), "train").data))
    assert np.all(np.isfinite(encode(small(), np.zeros((1, 6)), "eval").data))


def test_first_layer_preactivation_variance(rng):
    p = init_params(256, (512,), projector_dim=8, seed=0)
    x = rng.standard_normal((2000, 256))
    pre = x @ p.backbone[0].weight.data
    assert 0.5 <= pre.var() <= 2.0


def test_features_are_backbone_outputs(rng):
    p = small()
    x = rng.standard_normal((5, 6))
    h = x
    for lin in p.backbone:
        a = h @ lin.weight.data + lin.bias.data
        h = np.where(a > 0, a, 0.2 * a)
    assert p.features(x).shape == (5, 12)
    assert np.allclose(p.features(x), h, atol=1e-12)


def test_state_round_trip(rng):
    p = small(predictor=True)
    encode(p, rng.standard_normal((8, 6)), "train")
    q = from_state(p.state_dict())
    x = rng.standard_normal((3, 6))
    assert q.features(x).tobytes() == p.features(x).tobytes()
    assert q.predictor is not None


def test_bn_running_stats_are_not_trainable():
    names = [n for n, _, _ in small().named_parameters()]
    assert not any("running" in n for n in names)
    decayed = [n for n, _, d in small().named_parameters() if d]
    assert all(n.endswith(".weight") for n in decayed)
