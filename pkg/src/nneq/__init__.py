"""Compressed MLP equalizer for dual-polarization coherent optical links.

Modules:

* :mod:`nneq.txsim`      transmitter, Manakov SSFM fiber and EDFA simulation
* :mod:`nneq.dsp`        CD compensation, matched filter, normalization, BER/Q
* :mod:`nneq.neuralnet`  bias-free tanh MLP with hand-written backprop and Adam
* :mod:`nneq.compress`   magnitude pruning and symmetric INT8 post-training quantization
* :mod:`nneq.complexity` bit-operation accounting and the ``.mlpz`` model format
* :mod:`nneq.bench`      inference latency harness
* :mod:`nneq.pipeline`   end-to-end experiment, driven by :mod:`nneq.cli`
"""

__version__ = "0.1.0"
