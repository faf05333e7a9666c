"""Desk-scale networks with quantizers attached per layer.

Attachment policy: conv weights get per-channel signed quantizers, fc
weights per-layer signed quantizers, and the input activation of every
quantized layer a per-layer unsigned quantizer (inputs are post-ReLU).
With ``quantize_first_last`` off, the first and last layers carry no
quantizers at all. The first layer never quantizes its input (raw pixels).

Shapes
------
mlp256          784 -> 256 -> 256 -> 256 -> 10, BN + ReLU after each hidden fc
vgg7_small      conv 3-32, 32-32, pool, 32-64, 64-64, pool, 64-128, 128-128,
                pool, fc 2048-10; 3x3 kernels, BN + ReLU after each conv,
                2x2 average pooling (~0.31M parameters)
resnet20_small  conv 3-16, three stages of three basic blocks (16, 32, 64
                channels, stride 2 at stage entry, 1x1 projection shortcuts),
                8x8 global average pool, fc 64-10 (~0.28M parameters)
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .estimators import EstimatorConfig
from .quantizer import FLOAT_BITS, PER_CHANNEL, PER_LAYER, QuantizerState, fake_quantize
from .ssg import SCALE_LEARNING_KINDS, SSG, SsgState

MODEL_NAMES = ("mlp256", "vgg7_small", "resnet20_small")


@dataclass
class QuantConfig:
    bits_w: int = 4
    bits_a: int = 4
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    scale_learning: str = SSG
    quantize_first_last: bool = False
    iter_target: int = 1

    def __post_init__(self):
        for b in (self.bits_w, self.bits_a):
            if b != FLOAT_BITS and not 2 <= b <= 8:
                raise ConfigError(f"bit width must be in [2, 8] or 32, got {b}")
        if self.scale_learning not in SCALE_LEARNING_KINDS:
            raise ConfigError(f"unknown scale learning {self.scale_learning!r}")


def _make_quantizer(qcfg, bits, signed, granularity, channels, name):
    ssg = SsgState(channels=channels if granularity == PER_CHANNEL else 1,
                   iter_target=qcfg.iter_target, adapt=qcfg.scale_learning == SSG)
    return QuantizerState(bits, signed, granularity, channels, qcfg.estimator, ssg, name)


# ----------------------------------------------------------------------
# layers


class Module:
    def children(self):
        """(name, Module) pairs for direct submodules, including those in lists."""
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, list):
                for i, m in enumerate(val):
                    if isinstance(m, Module):
                        yield f"{key}.{i}", m

    def modules(self):
        yield self
        for _, m in self.children():
            yield from m.modules()

    def parameters(self):
        """(name, Tensor) pairs for every trainable tensor."""
        out = [(k, v) for k, v in vars(self).items() if isinstance(v, T.Tensor) and v.requires_grad]
        for prefix, m in self.children():
            out.extend((f"{prefix}.{n}", p) for n, p in m.parameters())
        return out

    def buffers(self):
        """(name, ndarray) pairs for non-trainable state such as BN statistics."""
        out = [(k, v) for k, v in vars(self).items() if isinstance(v, np.ndarray)]
        for prefix, m in self.children():
            out.extend((f"{prefix}.{n}", b) for n, b in m.buffers())
        return out

    def quantizers(self):
        out = [v for v in vars(self).values() if isinstance(v, QuantizerState)]
        for _, m in self.children():
            out.extend(m.quantizers())
        return out


def _kaiming(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class QLinear(Module):
    int_kernel = None  # set by integer export to run on codes

    def __init__(self, rng, n_in, n_out, wq=None, aq=None, bias=True, name=""):
        self.weight = T.Tensor(_kaiming(rng, (n_out, n_in), n_in), requires_grad=True, name=name + ".weight")
        self.bias = T.Tensor(np.zeros(n_out, np.float32), requires_grad=True, name=name + ".bias") if bias else None
        self.wq, self.aq = wq, aq
        self.name = name

    def effective_weight(self, training=False):
        return fake_quantize(self.weight, self.wq, training) if self.wq else self.weight

    def __call__(self, x, training=False):
        if self.int_kernel is not None:
            return self.int_kernel(x)
        if self.aq:
            x = fake_quantize(x, self.aq, training)
        return T.linear(x, self.effective_weight(training), self.bias)


class QConv2d(Module):
    int_kernel = None

    def __init__(self, rng, c_in, c_out, k=3, stride=1, padding=1, wq=None, aq=None, name=""):
        self.weight = T.Tensor(_kaiming(rng, (c_out, c_in, k, k), c_in * k * k),
                               requires_grad=True, name=name + ".weight")
        self.stride, self.padding = stride, padding
        self.wq, self.aq = wq, aq
        self.name = name

    def effective_weight(self, training=False):
        return fake_quantize(self.weight, self.wq, training) if self.wq else self.weight

    def __call__(self, x, training=False, quantize_input=True):
        if self.int_kernel is not None:
            return self.int_kernel(x)
        if self.aq and quantize_input:
            x = fake_quantize(x, self.aq, training)
        return T.conv2d(x, self.effective_weight(training), None, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels, name=""):
        self.gamma = T.Tensor(np.ones(channels, np.float32), requires_grad=True, name=name + ".gamma")
        self.beta = T.Tensor(np.zeros(channels, np.float32), requires_grad=True, name=name + ".beta")
        self.running_mean = np.zeros(channels, np.float32)
        self.running_var = np.ones(channels, np.float32)

    def __call__(self, x, training=False):
        return T.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var, training)


# ----------------------------------------------------------------------
# networks


class Network(Module):
    """Base class: subclasses create their layers and implement ``forward``."""

    name = ""

    def __init__(self, qcfg, seed):
        self.qcfg = qcfg
        self._rng = np.random.default_rng(seed)

    def _quantizers_for(self, kind, idx, total, n_out):
        """Weight and input-activation quantizers for weight layer ``idx``."""
        q = self.qcfg
        edge = idx == 0 or idx == total - 1
        if edge and not q.quantize_first_last:
            return None, None
        tag = f"{kind}{idx}"
        if kind == "conv":
            wq = _make_quantizer(q, q.bits_w, True, PER_CHANNEL, n_out, tag + ".wq")
        else:
            wq = _make_quantizer(q, q.bits_w, True, PER_LAYER, 1, tag + ".wq")
        aq = None if idx == 0 else _make_quantizer(q, q.bits_a, False, PER_LAYER, 1, tag + ".aq")
        return wq, aq

    def forward(self, x, training=False):
        raise NotImplementedError

    def __call__(self, x, training=False):
        if not isinstance(x, T.Tensor):
            x = T.Tensor(x)
        return self.forward(x, training)

    def weight_layers(self):
        return [m for m in self.modules() if isinstance(m, (QLinear, QConv2d))]

    def state_dict(self):
        state = {f"param:{n}": p.data for n, p in self.parameters()}
        state.update({f"buffer:{n}": b for n, b in self.buffers()})
        for q in self.quantizers():
            if q.alpha is not None:
                state[f"alpha:{q.name}"] = q.alpha
            if q.ssg is not None:
                state[f"ssg_z:{q.name}"] = q.ssg.z
                state[f"ssg_left:{q.name}"] = q.ssg.consecutive_left
                state[f"ssg_right:{q.name}"] = q.ssg.consecutive_right
                state[f"ssg_iters:{q.name}"] = np.array(q.ssg.iters_since_check)
        return state

    def load_state_dict(self, state):
        params = dict(self.parameters())
        buffers = dict(self.buffers())
        for key, val in state.items():
            kind, _, name = key.partition(":")
            if kind == "param":
                params[name].data = np.array(val, dtype=np.float32)
            elif kind == "buffer":
                buffers[name][...] = val
        for q in self.quantizers():
            if f"alpha:{q.name}" in state:
                q.set_alpha(state[f"alpha:{q.name}"])
            if q.ssg is not None and f"ssg_z:{q.name}" in state:
                q.ssg.z = np.array(state[f"ssg_z:{q.name}"], dtype=np.float64)
                q.ssg.consecutive_left = np.array(state[f"ssg_left:{q.name}"])
                q.ssg.consecutive_right = np.array(state[f"ssg_right:{q.name}"])
                q.ssg.iters_since_check = int(state[f"ssg_iters:{q.name}"])


class MLP256(Network):
    name = "mlp256"

    def __init__(self, qcfg, seed=0, n_in=784, hidden=256, depth=3, classes=10):
        super().__init__(qcfg, seed)
        sizes = [n_in] + [hidden] * depth + [classes]
        total = len(sizes) - 1
        self.fcs, self.bns = [], []
        for i in range(total):
            wq, aq = self._quantizers_for("fc", i, total, sizes[i + 1])
            self.fcs.append(QLinear(self._rng, sizes[i], sizes[i + 1], wq, aq, name=f"fc{i}"))
            if i < total - 1:
                self.bns.append(BatchNorm(sizes[i + 1], name=f"bn{i}"))

    def forward(self, x, training=False):
        h = T.flatten(x)
        for i, fc in enumerate(self.fcs):
            h = fc(h, training)
            if i < len(self.bns):
                h = T.relu(self.bns[i](h, training))
        return h


class VGG7Small(Network):
    name = "vgg7_small"
    WIDTHS = (32, 32, 64, 64, 128, 128)

    def __init__(self, qcfg, seed=0, in_channels=3, image_size=32, classes=10, widths=WIDTHS):
        super().__init__(qcfg, seed)
        total = len(widths) + 1
        self.convs, self.bns = [], []
        c = in_channels
        for i, w in enumerate(widths):
            wq, aq = self._quantizers_for("conv", i, total, w)
            self.convs.append(QConv2d(self._rng, c, w, 3, 1, 1, wq, aq, name=f"conv{i}"))
            self.bns.append(BatchNorm(w, name=f"bn{i}"))
            c = w
        spatial = image_size // 8
        wq, aq = self._quantizers_for("fc", total - 1, total, classes)
        self.fc = QLinear(self._rng, c * spatial * spatial, classes, wq, aq, name="fc")

    def forward(self, x, training=False):
        h = x
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            h = T.relu(bn(conv(h, training), training))
            if i % 2 == 1:
                h = T.avgpool2d(h, 2)
        return self.fc(T.flatten(h), training)


class BasicBlock(Module):
    def __init__(self, owner, rng, c_in, c_out, stride, idx, total):
        wq, aq = owner._quantizers_for("conv", idx, total, c_out)
        self.conv1 = QConv2d(rng, c_in, c_out, 3, stride, 1, wq, aq, name=f"conv{idx}")
        self.bn1 = BatchNorm(c_out)
        wq, aq = owner._quantizers_for("conv", idx + 1, total, c_out)
        self.conv2 = QConv2d(rng, c_out, c_out, 3, 1, 1, wq, aq, name=f"conv{idx + 1}")
        self.bn2 = BatchNorm(c_out)
        self.proj = self.proj_bn = None
        if stride != 1 or c_in != c_out:
            q = owner.qcfg
            pq = _make_quantizer(q, q.bits_w, True, PER_CHANNEL, c_out, f"proj{idx}.wq")
            self.proj = QConv2d(rng, c_in, c_out, 1, stride, 0, pq, None, name=f"proj{idx}")
            self.proj_bn = BatchNorm(c_out)

    def __call__(self, x, training=False):
        # the block input is quantized once and shared with the shortcut
        if self.conv1.aq:
            x = fake_quantize(x, self.conv1.aq, training)
        h = T.relu(self.bn1(self.conv1(x, training, quantize_input=False), training))
        h = self.bn2(self.conv2(h, training), training)
        sc = x if self.proj is None else self.proj_bn(self.proj(x, training), training)
        return T.relu(T.add(h, sc))


class ResNet20Small(Network):
    name = "resnet20_small"

    def __init__(self, qcfg, seed=0, in_channels=3, classes=10, widths=(16, 32, 64), blocks=3):
        super().__init__(qcfg, seed)
        total = 2 + 2 * blocks * len(widths)
        wq, aq = self._quantizers_for("conv", 0, total, widths[0])
        self.stem = QConv2d(self._rng, in_channels, widths[0], 3, 1, 1, wq, aq, name="conv0")
        self.stem_bn = BatchNorm(widths[0])
        self.blocks = []
        c, idx = widths[0], 1
        for s, w in enumerate(widths):
            for b in range(blocks):
                stride = 2 if s > 0 and b == 0 else 1
                self.blocks.append(BasicBlock(self, self._rng, c, w, stride, idx, total))
                c, idx = w, idx + 2
        wq, aq = self._quantizers_for("fc", total - 1, total, classes)
        self.fc = QLinear(self._rng, c, classes, wq, aq, name="fc")
        self.pool = 2 ** (len(widths) - 1)

    def forward(self, x, training=False):
        h = T.relu(self.stem_bn(self.stem(x, training), training))
        for blk in self.blocks:
            h = blk(h, training)
        h = T.avgpool2d(h, h.shape[2])
        return self.fc(T.flatten(h), training)


REGISTRY = {"mlp256": MLP256, "vgg7_small": VGG7Small, "resnet20_small": ResNet20Small}


def build_model(name, qcfg=None, seed=0, input_shape=None, classes=10):
    """Instantiate a registered network with quantizers attached."""
    if name not in REGISTRY:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(REGISTRY)}")
    qcfg = qcfg or QuantConfig()
    if name == "mlp256":
        n_in = int(np.prod(input_shape)) if input_shape else 784
        return MLP256(qcfg, seed, n_in=n_in, classes=classes)
    c = input_shape[0] if input_shape else 3
    if name == "vgg7_small":
        size = input_shape[1] if input_shape else 32
        return VGG7Small(qcfg, seed, in_channels=c, image_size=size, classes=classes)
    return ResNet20Small(qcfg, seed, in_channels=c, classes=classes)
