"""Binary container for waveforms and symbol blocks.

Layout (little-endian)::

    magic    12s  b"NNEQWAVEFORM" or b"NNEQSYMBOLS_"
    version  u32
    n_symbols u64
    sps      u32
    sample_rate f64
    payload  complex64, interleaved per sample:
             waveform: h0 v0 h1 v1 ...            (n_symbols * sps pairs)
             symbols:  txh0 txv0 rxh0 rxv0 ...    (n_symbols quadruples)
"""

import struct

import numpy as np

from .errors import FormatError
from .signals import DualPolWaveform, SymbolBlock

WAVEFORM_MAGIC = b"NNEQWAVEFORM"
SYMBOLS_MAGIC = b"NNEQSYMBOLS_"
VERSION = 1
_HEAD = struct.Struct("<12sIQId")


def _read_header(data, magic):
    if len(data) < _HEAD.size:
        raise FormatError("file shorter than header")
    got, version, n_symbols, sps, rate = _HEAD.unpack_from(data)
    if got != magic:
        raise FormatError(f"bad magic {got!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return n_symbols, sps, rate


def write_waveform(path, w, sps):
    if len(w) % sps:
        raise FormatError("waveform length is not a multiple of sps")
    body = np.stack([w.h, w.v], axis=1).astype("<c8")
    with open(path, "wb") as f:
        f.write(_HEAD.pack(WAVEFORM_MAGIC, VERSION, len(w) // sps, sps, w.sample_rate_hz))
        f.write(body.tobytes())


def read_waveform(path):
    """Returns ``(DualPolWaveform, sps)``."""
    with open(path, "rb") as f:
        data = f.read()
    n_symbols, sps, rate = _read_header(data, WAVEFORM_MAGIC)
    n = n_symbols * sps
    body = np.frombuffer(data, dtype="<c8", offset=_HEAD.size)
    if body.size != 2 * n:
        raise FormatError("payload length does not match header")
    body = body.reshape(n, 2)
    return DualPolWaveform(body[:, 0], body[:, 1], rate), sps


def write_symbols(path, block, baud_rate_hz):
    rx_h = block.rx_h if block.rx_h is not None else np.zeros_like(block.tx_h)
    rx_v = block.rx_v if block.rx_v is not None else np.zeros_like(block.tx_v)
    body = np.stack([block.tx_h, block.tx_v, rx_h, rx_v], axis=1).astype("<c8")
    with open(path, "wb") as f:
        f.write(_HEAD.pack(SYMBOLS_MAGIC, VERSION, len(block), 1, baud_rate_hz))
        f.write(body.tobytes())


def read_symbols(path):
    """Returns ``(SymbolBlock, baud_rate_hz)``."""
    with open(path, "rb") as f:
        data = f.read()
    n_symbols, _, rate = _read_header(data, SYMBOLS_MAGIC)
    body = np.frombuffer(data, dtype="<c8", offset=_HEAD.size)
    if body.size != 4 * n_symbols:
        raise FormatError("payload length does not match header")
    body = body.reshape(n_symbols, 4)
    return SymbolBlock(body[:, 0], body[:, 1], body[:, 2], body[:, 3]), rate
