"""Binary snapshots of a trained system.

Layout, little-endian throughout::

    b"DMEM"  u32 version  u32 input_dim
    u32 len  config text (UTF-8, ``key = value`` lines)
    u32 sessions_done
    u32 C    i32 class id per head column
    encoder, decoder, head layers: f32 weights (row-major) then f32 biases
    u32 S    S x (i32 class, u32 count, f32 mean[b], f32 cov[b*b or b])
    u8 gate_trained  u8 gate_active  gate layers
    u32 N    u32 d    N x (i32 class, f32 x[d])

Layer shapes are implied by the config and ``C``. Random generator state is
not stored, so training resumed from a snapshot draws fresh randomness.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import nn
from .controller import FearNet, TrainingConfig
from .errors import ConfigError, ParseError
from .mpfc import ClassStatistics

MAGIC = b"DMEM"
VERSION = 1


class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def array(self, a, dtype):
        self.parts.append(np.ascontiguousarray(a, dtype=dtype).tobytes())

    def layers(self, layers):
        for layer in layers:
            self.array(layer.weights, "<f4")
            self.array(layer.biases, "<f4")

    def getvalue(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise ParseError(f"snapshot truncated: need {n} bytes", offset=self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self):
        return self.take(1)[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def array(self, dtype, shape):
        dtype = np.dtype(dtype)
        count = int(np.prod(shape))
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).reshape(shape).copy()

    def layers(self, spec):
        return [
            nn.LayerParams(self.array("<f4", (a, b)), self.array("<f4", (b,)))
            for a, b in spec.layer_dims
        ]


def dumps(system):
    w = _Writer()
    w.parts.append(MAGIC)
    w.u32(VERSION)
    w.u32(system.input_dim)
    text = system.config.to_text().encode("utf-8")
    w.u32(len(text))
    w.parts.append(text)
    w.u32(system.sessions_done)
    mpfc = system.mpfc
    w.u32(mpfc.n_classes)
    w.array(mpfc.classes, "<i4")
    w.layers(mpfc.encoder)
    w.layers(mpfc.decoder)
    w.layers(mpfc.head or [])
    w.u32(len(mpfc.stats))
    for label in sorted(mpfc.stats):
        st = mpfc.stats[label]
        w.array([label], "<i4")
        w.u32(st.count)
        w.array(st.mean, "<f4")
        w.array(st.cov, "<f4")
    w.u8(int(system.gate.trained))
    w.u8(int(system.gate_active))
    w.layers(system.gate.params)
    xs, ys = system.hc.data()
    w.u32(ys.shape[0])
    w.u32(xs.shape[1] if ys.size else 0)
    rec = np.empty(ys.shape[0], dtype=[("label", "<i4"), ("x", "<f4", (xs.shape[1],))])
    rec["label"] = ys
    rec["x"] = xs
    w.parts.append(rec.tobytes())
    return w.getvalue()


def loads(raw):
    r = _Reader(bytes(raw))
    if r.take(4) != MAGIC:
        raise ParseError("not a model snapshot (bad magic)", offset=0)
    version = r.u32()
    if version != VERSION:
        raise ParseError(f"unsupported snapshot version {version}", offset=4)
    input_dim = r.u32()
    start = r.pos
    try:
        config = TrainingConfig.parse(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise ParseError(f"embedded config is invalid: {exc}", offset=start) from None
    system = FearNet(input_dim, config)
    system.sessions_done = r.u32()
    mpfc = system.mpfc
    n_classes = r.u32()
    classes = [int(c) for c in r.array("<i4", (n_classes,))]
    mpfc.encoder = r.layers(mpfc.encoder_spec)
    mpfc.decoder = r.layers(mpfc.decoder_spec)
    if n_classes:
        mpfc.add_classes(classes)
        mpfc.head = r.layers(mpfc.head_spec)
    b = mpfc.bottleneck_dim
    cov_shape = (b, b) if config.covariance_mode == "full" else (b,)
    for _ in range(r.u32()):
        label = int(r.array("<i4", (1,))[0])
        count = r.u32()
        mean = r.array("<f4", (b,))
        mpfc.stats[label] = ClassStatistics(mean, r.array("<f4", cov_shape), count)
    trained, active = r.u8(), r.u8()
    system.gate.params = r.layers(system.gate.spec)
    system.gate.trained = bool(trained)
    system.gate_active = bool(active)
    n, d = r.u32(), r.u32()
    if n:
        if d != input_dim:
            raise ParseError(f"stored exemplars have width {d}, expected {input_dim}", offset=r.pos - 4)
        rec = r.array([("label", "<i4"), ("x", "<f4", (d,))], (n,))
        system.hc.store_batch(rec["x"], rec["label"])
    if r.pos != len(r.raw):
        raise ParseError(f"{len(r.raw) - r.pos} trailing bytes after snapshot", offset=r.pos)
    return system


def save(system, path):
    Path(path).write_bytes(dumps(system))


def load(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror or exc}") from None
    return loads(raw)
