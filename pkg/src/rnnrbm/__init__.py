"""Recurrent energy-based and autoregressive models of polyphonic sequences.

Sub-modules: ``numerics``, ``rbm``, ``nade``, ``sequence`` (RNN-RBM,
RNN-NADE, RTRBM), ``baselines``, ``data``, ``metrics``, ``transcription``,
``serialize`` and ``cli``.
"""

__version__ = "0.1.0"
