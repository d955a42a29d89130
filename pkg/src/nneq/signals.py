"""Signal containers shared by the transmitter, channel and receiver."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError


@dataclass
class DualPolWaveform:
    """Complex baseband field of both polarizations sampled at ``sample_rate_hz``.

    Samples are in units of sqrt(W), so ``mean(|h|^2 + |v|^2)`` is the optical power.
    """

    h: np.ndarray
    v: np.ndarray
    sample_rate_hz: float
    launch_power_dbm: Optional[float] = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.complex128)
        self.v = np.asarray(self.v, dtype=np.complex128)
        if self.h.ndim != 1 or self.h.shape != self.v.shape or self.h.size == 0:
            raise InputError("h and v must be 1-D, non-empty and of equal length")
        if not self.sample_rate_hz > 0:
            raise InputError("sample_rate_hz must be positive")

    def __len__(self):
        return self.h.size

    @property
    def power_w(self):
        return float(np.mean(np.abs(self.h) ** 2 + np.abs(self.v) ** 2))

    @property
    def energy(self):
        return float(np.sum(np.abs(self.h) ** 2) + np.sum(np.abs(self.v) ** 2))

    def stacked(self):
        return np.stack([self.h, self.v])

    def with_fields(self, h, v):
        return DualPolWaveform(h, v, self.sample_rate_hz, self.launch_power_dbm)


@dataclass
class SymbolBlock:
    """Aligned transmitted / received symbols at one sample per symbol.

    ``rx_h`` and ``rx_v`` are ``None`` until the block has gone through a receiver.
    """

    tx_h: np.ndarray
    tx_v: np.ndarray
    rx_h: Optional[np.ndarray] = None
    rx_v: Optional[np.ndarray] = None
    launch_power_dbm: Optional[float] = None

    def __post_init__(self):
        self.tx_h = np.asarray(self.tx_h, dtype=np.complex128)
        self.tx_v = np.asarray(self.tx_v, dtype=np.complex128)
        n = self.tx_h.size
        if self.tx_v.size != n:
            raise InputError("tx_h and tx_v differ in length")
        if (self.rx_h is None) != (self.rx_v is None):
            raise InputError("rx_h and rx_v must both be set or both be None")
        if self.rx_h is not None:
            self.rx_h = np.asarray(self.rx_h, dtype=np.complex128)
            self.rx_v = np.asarray(self.rx_v, dtype=np.complex128)
            if self.rx_h.size != n or self.rx_v.size != n:
                raise InputError("rx sequences must match tx length")

    def __len__(self):
        return self.tx_h.size

    def tx(self, pol):
        return {"h": self.tx_h, "v": self.tx_v}[pol]

    def rx(self, pol):
        return {"h": self.rx_h, "v": self.rx_v}[pol]
