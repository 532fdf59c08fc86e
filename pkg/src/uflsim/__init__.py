"""Federated learning over a distributed-MIMO uplink.

Simulates the full loop: client activation, loss-threshold self-selection,
local SGD on non-IID shards, vector quantization with error accumulation,
type-based unsourced transmission over a cell-free D-MIMO channel, AMP
decoding of codeword multiplicities, and server-side aggregation from the
decoded types. Baselines: random selection, power-of-choice, and a
perfect-CSI pre-equalized digital aggregation scheme.
"""

__version__ = "0.1.0"
