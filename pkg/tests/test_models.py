import numpy as np
import pytest

from lglsq import tensor as T
from lglsq.errors import ConfigError
from lglsq.estimators import EstimatorConfig
from lglsq.models import MODEL_NAMES, QConv2d, QLinear, QuantConfig, build_model
from lglsq.quantizer import PER_CHANNEL, PER_LAYER

SHAPES = {"mlp256": (1, 28, 28), "vgg7_small": (3, 32, 32), "resnet20_small": (3, 32, 32)}


def n_params(m):
    return sum(p.size for _, p in m.parameters())


@pytest.mark.parametrize("name,count", [("mlp256", 336650), ("vgg7_small", 307946),
                                        ("resnet20_small", 272474)])
def test_parameter_counts(name, count):
    assert n_params(build_model(name, input_shape=SHAPES[name])) == count


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_forward_backward_shapes(name):
    m = build_model(name, QuantConfig(estimator=EstimatorConfig("asr_mde")), 0, SHAPES[name])
    x = np.random.default_rng(0).standard_normal((2,) + SHAPES[name]).astype(np.float32)
    logits = m(x, training=True)
    assert logits.shape == (2, 10)
    T.softmax_cross_entropy(logits, np.array([1, 2])).backward()
    assert all(p.grad is not None and p.grad.shape == p.shape for _, p in m.parameters())
    assert all(q.alpha is not None for q in m.quantizers() if q.enabled)


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_first_last_layers_float_by_default(name):
    m = build_model(name, QuantConfig(), 0, SHAPES[name])
    layers = m.weight_layers()
    main = [l for l in layers if not l.name.startswith("proj")]
    assert main[0].wq is None and main[0].aq is None
    assert main[-1].wq is None and main[-1].aq is None
    assert all(l.wq is not None for l in main[1:-1])


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_toggle_quantizes_edges_but_not_raw_input(name):
    m = build_model(name, QuantConfig(quantize_first_last=True), 0, SHAPES[name])
    main = [l for l in m.weight_layers() if not l.name.startswith("proj")]
    assert main[0].wq is not None and main[0].aq is None
    assert main[-1].wq is not None and main[-1].aq is not None


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_granularity_and_sign_policy(name):
    m = build_model(name, QuantConfig(), 0, SHAPES[name])
    for layer in m.weight_layers():
        if layer.wq is None:
            continue
        if isinstance(layer, QConv2d):
            assert layer.wq.granularity == PER_CHANNEL and layer.wq.channels == layer.weight.shape[0]
        else:
            assert layer.wq.granularity == PER_LAYER
        assert layer.wq.signed
        if layer.aq is not None:
            assert not layer.aq.signed and layer.aq.granularity == PER_LAYER


def test_quantizer_names_unique():
    m = build_model("resnet20_small", QuantConfig(), 0, SHAPES["resnet20_small"])
    names = [q.name for q in m.quantizers()]
    assert len(names) == len(set(names))


def test_float_bits_equals_unquantized_forward():
    x = np.random.default_rng(0).standard_normal((4, 1, 28, 28)).astype(np.float32)
    a = build_model("mlp256", QuantConfig(32, 32), 3)
    b = build_model("mlp256", QuantConfig(32, 32, quantize_first_last=True), 3)
    np.testing.assert_array_equal(a(x, training=True).data, b(x, training=True).data)


def test_state_dict_round_trip():
    shape = SHAPES["vgg7_small"]
    m = build_model("vgg7_small", QuantConfig(), 0, shape)
    x = np.random.default_rng(0).standard_normal((2,) + shape).astype(np.float32)
    m(x, training=True)
    m2 = build_model("vgg7_small", QuantConfig(), 5, shape)
    m2.load_state_dict(m.state_dict())
    with T.no_grad():
        np.testing.assert_array_equal(m(x).data, m2(x).data)


def test_same_seed_same_init():
    a, b = build_model("mlp256", seed=7), build_model("mlp256", seed=7)
    for (_, p), (_, q) in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def test_config_errors():
    with pytest.raises(ConfigError):
        build_model("alexnet")
    with pytest.raises(ConfigError):
        QuantConfig(bits_w=9)
    with pytest.raises(ConfigError):
        QuantConfig(scale_learning="adam")


def test_qlinear_bias_and_call():
    layer = QLinear(np.random.default_rng(0), 3, 2)
    y = layer(T.Tensor(np.ones((1, 3))))
    assert y.shape == (1, 2)
