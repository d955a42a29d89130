"""Bit-operation (BoPs) accounting and the ``.mlpz`` model file format.

File layout (little-endian)::

    magic   4s   b"MLPZ"
    version u16
    variant u8   0 dense f32 | 1 dense i8 | 2 CSR i8 | 3 bitmap i8
    flags   u8   bit0: masks stored (dense f32 only)
    layers  u8
    dims    u32 * (layers + 1)
    bits    u8 * 4   b_i, b_a, b_w, b_o
    acts    u8 * (layers - 1)   0 tanh, 1 identity

Dense f32 then holds each ``(fan_in, fan_out)`` matrix row-major, followed
by packed mask bits when flag bit0 is set. The INT8 variants store the
weight scales (f32 per layer), hidden activation scales (f32 per hidden
layer) and calibration (min, max) pairs (f32, layers + 1 of them), then per
layer:

* dense i8:  ``fan_in * fan_out`` int8, row-major
* CSR i8:    rows are output neurons; u32 nnz, u32 row offsets
  ``(fan_out + 1)``, u16 column indices, int8 values
* bitmap i8: u32 nnz, packed occupancy bits over the row-major
  ``(fan_in, fan_out)`` matrix, int8 values of the set positions
"""

import io
import math
import struct
from dataclasses import dataclass
from typing import List

import numpy as np

from .compress import ActivationRanges, QuantizedModel, QuantParams
from .errors import FormatError, InputError
from .neuralnet import MlpModel

MAGIC = b"MLPZ"
VERSION = 1
DENSE_F32, DENSE_I8, CSR_I8, BITMAP_I8 = 0, 1, 2, 3
VARIANT_NAMES = {DENSE_F32: "dense-f32", DENSE_I8: "dense-i8", CSR_I8: "csr-i8", BITMAP_I8: "bitmap-i8"}
_ACT_CODES = {"tanh": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass(frozen=True)
class BitWidths:
    b_i: int = 32
    b_a: int = 32
    b_w: int = 32
    b_o: int = 32

    def __post_init__(self):
        if min(self.b_i, self.b_a, self.b_w, self.b_o) < 1:
            raise InputError("bit widths must be >= 1")


FP32 = BitWidths(32, 32, 32, 32)
INT8 = BitWidths(32, 8, 8, 32)


def bops_conv(m, n, k, b):
    """Quantized convolution: ``m n k^2 (b_a b_w + b_a + b_w + log2(n k^2))``."""
    if min(m, n, k) <= 0:
        raise InputError("m, n, k must be positive")
    return m * n * k**2 * (b.b_a * b.b_w + b.b_a + b.b_w + math.log2(n * k**2))


def bops_dense(n, m, b_a, b_w, f_p=0.0):
    """Pruned dense layer with additions counted as ``b_a + b_w + log2(n)`` per MAC."""
    if not 0 <= f_p <= 1:
        raise InputError("f_p must lie in [0, 1]")
    return m * n * ((1 - f_p) * b_a * b_w + b_a + b_w + math.log2(n))


def bops_mlp_layers(dims, b, f_p=0.0):
    """Per-weight-matrix terms of the MLP BoPs total.

    Layer ``k`` with fan-in ``n`` and fan-out ``m`` costs
    ``n m b_in (1 - f_p) b_w + n m (b_in + b_w) log2(n)`` where ``b_in`` is
    ``b_i`` for the first layer and ``b_a`` otherwise.
    """
    if not 0 <= f_p <= 1:
        raise InputError("f_p must lie in [0, 1]")
    out = []
    for k, (n, m) in enumerate(zip(dims[:-1], dims[1:])):
        b_in = b.b_i if k == 0 else b.b_a
        out.append(n * m * b_in * (1 - f_p) * b.b_w + n * m * (b_in + b.b_w) * math.log2(n))
    return out


def bops_mlp(dims, b, f_p=0.0):
    return math.fsum(bops_mlp_layers(dims, b, f_p))


def bops_mlp_eq3(dims, b, f_p=0.0):
    """Alternative accounting: sum of :func:`bops_dense` over layers (input layer at ``b_i``)."""
    return math.fsum(
        bops_dense(n, m, b.b_i if k == 0 else b.b_a, b.b_w, f_p)
        for k, (n, m) in enumerate(zip(dims[:-1], dims[1:]))
    )


def reduction_pct(current, baseline):
    if not baseline > 0:
        raise InputError("baseline must be positive")
    return 100.0 * (1.0 - current / baseline)


# ---------------------------------------------------------------- serialization


def _header(variant, dims, bits, activations, flags=0):
    n_layers = len(dims) - 1
    buf = MAGIC + struct.pack("<HBBB", VERSION, variant, flags, n_layers)
    buf += struct.pack(f"<{len(dims)}I", *dims)
    buf += struct.pack("<4B", bits.b_i, bits.b_a, bits.b_w, bits.b_o)
    buf += bytes(_ACT_CODES[a] for a in activations)
    return buf


def header_size(n_layers):
    return 4 + 5 + 4 * (n_layers + 1) + 4 + max(n_layers - 1, 0)


def _csr_bytes(wq):
    rows = np.ascontiguousarray(wq.T)
    if rows.shape[1] > 0xFFFF:
        raise InputError("fan-in too large for u16 column indices")
    r, c = np.nonzero(rows)
    offsets = np.zeros(rows.shape[0] + 1, dtype="<u4")
    np.cumsum(np.bincount(r, minlength=rows.shape[0]), out=offsets[1:])
    return (struct.pack("<I", r.size) + offsets.tobytes() + c.astype("<u2").tobytes()
            + rows[r, c].astype(np.int8).tobytes())


def _bitmap_bytes(wq):
    occ = wq.ravel() != 0
    return struct.pack("<I", int(occ.sum())) + np.packbits(occ).tobytes() + wq.ravel()[occ].astype(np.int8).tobytes()


def serialize_model(model, variant=None):
    """Encode an :class:`MlpModel` (dense f32) or :class:`QuantizedModel` (INT8 variants)."""
    if isinstance(model, MlpModel):
        if variant not in (None, DENSE_F32):
            raise InputError("MlpModel only supports the dense f32 variant")
        flags = 1 if model.masks is not None else 0
        buf = bytearray(_header(DENSE_F32, model.dims, FP32, model.activations, flags))
        for w in model.effective_weights():
            buf += np.ascontiguousarray(w, dtype="<f4").tobytes()
        if flags:
            for m in model.masks:
                buf += np.packbits(m.ravel() != 0).tobytes()
        return bytes(buf)
    if not isinstance(model, QuantizedModel):
        raise InputError(f"cannot serialize {type(model).__name__}")
    variant = BITMAP_I8 if variant is None else variant
    if variant not in (DENSE_I8, CSR_I8, BITMAP_I8):
        raise InputError(f"variant {variant} is not an INT8 layout")
    bits = BitWidths(model.input_bits, model.bits, model.bits, 32)
    buf = bytearray(_header(variant, model.dims, bits, model.activations))
    n_layers = len(model.int_weights)
    buf += struct.pack(f"<{n_layers}f", *[q.scale for q in model.weight_qparams])
    buf += struct.pack(f"<{len(model.act_qparams)}f", *[q.scale for q in model.act_qparams])
    ranges = model.ranges or ActivationRanges([0.0] * (n_layers + 1), [0.0] * (n_layers + 1))
    for lo, hi in zip(ranges.mins, ranges.maxs):
        buf += struct.pack("<2f", lo, hi)
    for wq in model.int_weights:
        if variant == DENSE_I8:
            buf += np.ascontiguousarray(wq, dtype=np.int8).tobytes()
        elif variant == CSR_I8:
            buf += _csr_bytes(wq)
        else:
            buf += _bitmap_bytes(wq)
    return bytes(buf)


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated model file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt, count=count).copy()


def deserialize_model(data):
    """Inverse of :func:`serialize_model`."""
    r = _Reader(bytes(data))
    if bytes(r.take(4)) != MAGIC:
        raise FormatError("bad magic")
    version, variant, flags, n_layers = r.unpack("<HBBB")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if variant not in VARIANT_NAMES:
        raise FormatError(f"unknown variant {variant}")
    dims = list(r.unpack(f"<{n_layers + 1}I"))
    b_i, b_a, b_w, b_o = r.unpack("<4B")
    try:
        acts = [_ACT_NAMES[c] for c in r.take(max(n_layers - 1, 0))]
    except KeyError as e:
        raise FormatError(f"unknown activation code {e}") from None
    shapes = list(zip(dims[:-1], dims[1:]))
    if variant == DENSE_F32:
        ws = [r.array("<f4", n * m).reshape(n, m).astype(np.float32) for n, m in shapes]
        masks = None
        if flags & 1:
            masks = []
            for n, m in shapes:
                nbytes = (n * m + 7) // 8
                masks.append(np.unpackbits(r.array(np.uint8, nbytes))[: n * m].reshape(n, m))
        out = MlpModel(dims, ws, acts, masks)
    else:
        wscales = r.unpack(f"<{n_layers}f")
        ascales = r.unpack(f"<{max(n_layers - 1, 0)}f")
        pairs = [r.unpack("<2f") for _ in range(n_layers + 1)]
        ranges = ActivationRanges([p[0] for p in pairs], [p[1] for p in pairs])
        q = 2 ** (b_w - 1) - 1
        qa = 2 ** (b_a - 1) - 1
        ints = []
        for n, m in shapes:
            if variant == DENSE_I8:
                ints.append(r.array(np.int8, n * m).reshape(n, m))
            elif variant == CSR_I8:
                (nnz,) = r.unpack("<I")
                offsets = r.array("<u4", m + 1).astype(np.int64)
                cols = r.array("<u2", nnz).astype(np.int64)
                vals = r.array(np.int8, nnz)
                if offsets[-1] != nnz or np.any(np.diff(offsets) < 0) or np.any(cols >= max(n, 1)):
                    raise FormatError("inconsistent CSR structure")
                rows = np.repeat(np.arange(m), np.diff(offsets))
                wt = np.zeros((m, n), dtype=np.int8)
                wt[rows, cols] = vals
                ints.append(np.ascontiguousarray(wt.T))
            else:
                (nnz,) = r.unpack("<I")
                occ = np.unpackbits(r.array(np.uint8, (n * m + 7) // 8))[: n * m].astype(bool)
                if int(occ.sum()) != nnz:
                    raise FormatError("bitmap population does not match nnz")
                flat = np.zeros(n * m, dtype=np.int8)
                flat[occ] = r.array(np.int8, nnz)
                ints.append(flat.reshape(n, m))
        out = QuantizedModel(
            dims, ints,
            [QuantParams(s, 0, -q, q, b_w) for s in wscales],
            [QuantParams(s, 0, -qa, qa, b_a) for s in ascales],
            acts, ranges, b_i, b_w,
        )
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after model payload")
    return out


def save_model(path, model, variant=None):
    data = serialize_model(model, variant)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def load_model(path):
    with open(path, "rb") as f:
        return deserialize_model(f.read())


def model_size(source):
    """Byte size of a serialized model given a path, bytes or binary stream.

    The content is parsed, so corrupt input raises :class:`FormatError`.
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as f:
            data = f.read()
    deserialize_model(data)
    return len(data)


@dataclass
class ComplexityReport:
    label: str
    sparsity: float
    per_layer_bops: List[float]
    total_bops: float
    baseline_bops: float
    reduction_pct: float
    model_bytes: int
    baseline_bytes: int
    size_reduction_pct: float


def complexity_report(label, dims, bits, f_p, model_bytes, baseline_bytes, baseline_bits=FP32):
    layers = bops_mlp_layers(dims, bits, f_p)
    total = math.fsum(layers)
    base = bops_mlp(dims, baseline_bits, 0.0)
    return ComplexityReport(
        label, f_p, layers, total, base, reduction_pct(total, base),
        int(model_bytes), int(baseline_bytes), reduction_pct(model_bytes, baseline_bytes),
    )
