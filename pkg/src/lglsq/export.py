"""Integer export in the LGQ1 container and integer-weight inference.

Layout (little-endian)::

    "LGQ1"                      4-byte magic
    u32  record count
    per record:
      u32 name length, name (utf-8)
      u8  bit width (32 for float payloads)
      u8  flags: bit0 signed, bit1 per-channel, bit2 float payload,
                 bit3 scale only (activation quantizer, no payload)
      u32 rank, rank x u32 dims
      f32 scales (dims[0] if per-channel else 1; absent for float payloads)
      payload: int8 codes, or f32 values for float payloads
    u32 metadata length, metadata (utf-8 JSON: run config)

Quantized weights are stored as codes; BN parameters, biases, running
statistics and unquantized layers as float payloads.
"""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import FormatError, UnsupportedExportError
from .models import QConv2d, QLinear
from .quantizer import (PER_CHANNEL, PER_LAYER, QuantizerState, code_range, dequantize,
                        init_scale, quantize_codes)
from .train import RunConfig, model_for

MAGIC = b"LGQ1"
FLAG_SIGNED = 1
FLAG_PER_CHANNEL = 2
FLAG_FLOAT = 4
FLAG_SCALE_ONLY = 8
KNOWN_FLAGS = FLAG_SIGNED | FLAG_PER_CHANNEL | FLAG_FLOAT | FLAG_SCALE_ONLY


@dataclass
class Record:
    name: str
    bits: int
    flags: int
    shape: tuple
    alpha: np.ndarray = None
    codes: np.ndarray = None
    values: np.ndarray = None

    @property
    def signed(self):
        return bool(self.flags & FLAG_SIGNED)

    @property
    def granularity(self):
        return PER_CHANNEL if self.flags & FLAG_PER_CHANNEL else PER_LAYER


@dataclass
class QuantizedModel:
    records: list
    meta: dict = field(default_factory=dict)

    def get(self, name):
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)


# ----------------------------------------------------------------------
# building records


def quantized_model_from(model, cfg):
    """Collect every tensor of ``model`` into export records.

    Raises :class:`UnsupportedExportError` if any enabled weight quantizer
    is wider than 8 bits or any weight quantizer is a float pass-through.
    """
    records = []
    layer_of = {}
    for m in model.modules():
        if isinstance(m, (QLinear, QConv2d)):
            layer_of[id(m.weight)] = m
    for name, p in model.parameters():
        layer = layer_of.get(id(p))
        wq = layer.wq if layer is not None else None
        if wq is None:
            records.append(Record(name, 32, FLAG_FLOAT, p.shape, values=p.data.astype(np.float32)))
            continue
        if not wq.enabled or wq.bits > 8:
            raise UnsupportedExportError(f"{name}: {wq.bits}-bit weights cannot be stored as int8 codes")
        if not wq.signed and wq.bits == 8:
            raise UnsupportedExportError(f"{name}: unsigned 8-bit codes do not fit int8 storage")
        if wq.alpha is None:
            wq.set_alpha(init_scale(p.data, wq))
        flags = (FLAG_SIGNED if wq.signed else 0) | (FLAG_PER_CHANNEL if wq.granularity == PER_CHANNEL else 0)
        records.append(Record(name, wq.bits, flags, p.shape, wq.alpha.copy(),
                              quantize_codes(p.data, wq).astype(np.int8)))
    for name, b in model.buffers():
        records.append(Record("buffer:" + name, 32, FLAG_FLOAT, b.shape, values=b.astype(np.float32)))
    for q in model.quantizers():
        if q.name.endswith(".aq") and q.enabled and q.alpha is not None:
            flags = FLAG_SCALE_ONLY | (FLAG_SIGNED if q.signed else 0)
            records.append(Record("act:" + q.name, q.bits, flags, (), q.alpha.copy()))
    meta = {"config": cfg.to_dict(), "model": model.name}
    return QuantizedModel(records, meta)


# ----------------------------------------------------------------------
# serialization


def dumps(qm):
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", len(qm.records)))
    for r in qm.records:
        name = r.name.encode("utf-8")
        out.write(struct.pack("<I", len(name)))
        out.write(name)
        out.write(struct.pack("<BB", r.bits, r.flags))
        out.write(struct.pack("<I", len(r.shape)))
        out.write(struct.pack(f"<{len(r.shape)}I", *r.shape))
        if r.flags & FLAG_FLOAT:
            out.write(np.ascontiguousarray(r.values, dtype="<f4").tobytes())
            continue
        out.write(np.ascontiguousarray(r.alpha, dtype="<f4").tobytes())
        if not r.flags & FLAG_SCALE_ONLY:
            out.write(np.ascontiguousarray(r.codes, dtype=np.int8).tobytes())
    meta = json.dumps(qm.meta, sort_keys=True).encode("utf-8")
    out.write(struct.pack("<I", len(meta)))
    out.write(meta)
    return out.getvalue()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}: need {n} bytes, "
                              f"{len(self.buf) - self.pos} left", offset=self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def loads(buf):
    """Parse LGQ1 bytes; malformed input raises :class:`FormatError` with an offset."""
    rd = _Reader(bytes(buf))
    if rd.take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    count = rd.u32("record count")
    records = []
    for i in range(count):
        start = rd.pos
        nlen = rd.u32(f"record {i} name length")
        try:
            name = rd.take(nlen, f"record {i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"record {i}: name is not valid utf-8", offset=start + 4) from None
        bits, flags = struct.unpack("<BB", rd.take(2, f"record {name!r} bit width/flags"))
        if flags & ~KNOWN_FLAGS:
            raise FormatError(f"record {name!r}: unknown flag bits 0x{flags:02x}", offset=rd.pos - 1)
        is_float = bool(flags & FLAG_FLOAT)
        if is_float and bits != 32 or not is_float and not 2 <= bits <= 8:
            raise FormatError(f"record {name!r}: invalid bit width {bits}", offset=rd.pos - 2)
        rank = rd.u32(f"record {name!r} rank")
        if rank > 8:
            raise FormatError(f"record {name!r}: implausible rank {rank}", offset=rd.pos - 4)
        shape = struct.unpack(f"<{rank}I", rd.take(4 * rank, f"record {name!r} dims"))
        numel = int(np.prod(shape)) if rank else 1
        if is_float:
            vals = np.frombuffer(rd.take(4 * numel, f"record {name!r} values"), dtype="<f4")
            records.append(Record(name, bits, flags, shape, values=vals.reshape(shape).astype(np.float32)))
            continue
        n_alpha = shape[0] if flags & FLAG_PER_CHANNEL and rank else 1
        apos = rd.pos
        alpha = np.frombuffer(rd.take(4 * n_alpha, f"record {name!r} scales"), dtype="<f4").astype(np.float32)
        if not np.all(alpha > 0):
            raise FormatError(f"record {name!r}: nonpositive scale", offset=apos)
        if flags & FLAG_SCALE_ONLY:
            records.append(Record(name, bits, flags, shape, alpha))
            continue
        cpos = rd.pos
        codes = np.frombuffer(rd.take(numel, f"record {name!r} codes"), dtype=np.int8).reshape(shape)
        lo, hi = code_range(bits, bool(flags & FLAG_SIGNED))
        bad = np.nonzero((codes.ravel() < lo) | (codes.ravel() > hi))[0]
        if bad.size:
            raise FormatError(f"record {name!r}: code {codes.ravel()[bad[0]]} outside [{lo}, {hi}]",
                              offset=cpos + int(bad[0]))
        records.append(Record(name, bits, flags, shape, alpha, codes.copy()))
    mlen = rd.u32("metadata length")
    mpos = rd.pos
    try:
        meta = json.loads(rd.take(mlen, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("metadata is not valid JSON", offset=mpos) from None
    if rd.pos != len(rd.buf):
        raise FormatError(f"{len(rd.buf) - rd.pos} trailing bytes after metadata", offset=rd.pos)
    return QuantizedModel(records, meta)


def export_int(model, cfg, path):
    """Write ``model`` as an LGQ1 file; returns the QuantizedModel written."""
    qm = quantized_model_from(model, cfg)
    with open(path, "wb") as f:
        f.write(dumps(qm))
    return qm


def load_int(path):
    with open(path, "rb") as f:
        return loads(f.read())


# ----------------------------------------------------------------------
# reconstruction and integer inference


def _state_of(rec):
    st = QuantizerState(rec.bits, rec.signed, rec.granularity,
                        rec.shape[0] if rec.granularity == PER_CHANNEL else 1, name=rec.name)
    st.set_alpha(rec.alpha)
    return st


def restore_model(qm):
    """Rebuild the fake-quant network from an export.

    Weights become ``codes * alpha``; its logits match the exported model's
    exactly.
    """
    cfg = RunConfig.from_dict(qm.meta["config"])
    model = model_for(cfg)
    params = dict(model.parameters())
    buffers = dict(model.buffers())
    quants = {q.name: q for q in model.quantizers()}
    layer_of = {id(m.weight): m for m in model.modules() if isinstance(m, (QLinear, QConv2d))}
    for rec in qm.records:
        if rec.name.startswith("buffer:"):
            buffers[rec.name[len("buffer:"):]][...] = rec.values
        elif rec.name.startswith("act:"):
            quants[rec.name[len("act:"):]].set_alpha(rec.alpha)
        elif rec.flags & FLAG_FLOAT:
            params[rec.name].data = rec.values.copy()
        else:
            p = params[rec.name]
            layer_of[id(p)].wq.set_alpha(rec.alpha)
            p.data = dequantize(rec.codes, _state_of(rec))
    return model, cfg


class _IntegerLayer:
    """Replaces a layer's call with integer-code arithmetic.

    Weight codes stay integers; when the layer quantizes its input, the
    activation codes are integers too and the product is accumulated
    exactly (float64 holds these sums without rounding) before one rescale.
    """

    def __init__(self, layer, rec):
        self.layer = layer
        self.codes = rec.codes.astype(np.float64)
        self.w_alpha = rec.alpha.astype(np.float64)
        self.per_channel = rec.granularity == PER_CHANNEL

    def __call__(self, x):
        layer = self.layer
        xd = x.data if isinstance(x, T.Tensor) else np.asarray(x)
        scale = self.w_alpha
        if layer.aq is not None:
            xd = quantize_codes(xd, layer.aq).astype(np.float64)
            scale = scale * float(layer.aq.alpha[0])
        else:
            xd = xd.astype(np.float64)
        with T.no_grad():
            if isinstance(layer, QConv2d):
                acc = T.conv2d(T.Tensor(xd), T.Tensor(self.codes), None, layer.stride, layer.padding).data
                out = acc * (scale.reshape(1, -1, 1, 1) if self.per_channel else scale.reshape(()))
            else:
                out = (xd @ self.codes.T) * scale.reshape(())
                if layer.bias is not None:
                    out = out + layer.bias.data
        return T.Tensor(out.astype(np.float32))


def integer_model(qm):
    """Network whose quantized layers run on integer codes."""
    model, cfg = restore_model(qm)
    layer_of = {id(m.weight): m for m in model.modules() if isinstance(m, (QLinear, QConv2d))}
    params = dict(model.parameters())
    for rec in qm.records:
        if rec.codes is not None:
            layer = layer_of[id(params[rec.name])]
            layer.int_kernel = _IntegerLayer(layer, rec)
    return model, cfg


@dataclass
class VerifyReport:
    samples: int
    agreement: float
    max_rel_diff: float
    mismatches: list

    @property
    def ok(self):
        return not self.mismatches

    def __str__(self):
        head = (f"verified {self.samples} samples: argmax agreement {self.agreement:.2%}, "
                f"max logit relative diff {self.max_rel_diff:.3e}")
        if self.mismatches:
            head += f"; disagreeing samples: {self.mismatches[:20]}"
        return head


def verify_int(path_or_qm, images, batch_size=250):
    """Compare integer-weight inference with fake-quant inference."""
    qm = path_or_qm if isinstance(path_or_qm, QuantizedModel) else load_int(path_or_qm)
    ref, _ = restore_model(qm)
    imodel, _ = integer_model(qm)
    mism, rel = [], 0.0
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            x = images[start:start + batch_size]
            a = ref(x, training=False).data.astype(np.float64)
            b = imodel(x, training=False).data.astype(np.float64)
            scale = np.abs(a).max(axis=1, keepdims=True) + 1e-12
            rel = max(rel, float((np.abs(a - b) / scale).max()))
            bad = np.nonzero(a.argmax(axis=1) != b.argmax(axis=1))[0]
            mism.extend(int(start + i) for i in bad)
    n = len(images)
    return VerifyReport(n, 1 - len(mism) / max(n, 1), rel, mism)
