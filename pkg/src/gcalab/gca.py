"""Gated cross-attention blocks and the vertical placement configuration.

A block refines a query-domain sequence with cross-attention into another
thread, modulated by a learned elementwise gate:

    out = layernorm(x_q + gate(x_q, x_kv) * cross_attention(x_q, x_kv))

The gate is a two-layer relu FFN over the position-aligned concatenation of
both threads, squashed by sigmoid or tanh. Its final layer starts at zero, so
an untrained block is the identity (up to the layernorm) and any deviation is
learned. Probes measure, without touching the gradient graph, how the
cross-attention output rotates relative to its query.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import MultiHeadAttention, SequenceBatch, apply_mask
from .errors import ConfigError, ContractError, DimensionError
from .metrics import cosine_probe_update
from .tensor import ParameterStore, Tensor

MAX_STAGE = 2
GATE_ACTIVATIONS = ("sigmoid", "tanh")
KV_SOURCES = ("pairwise", "combined")
_PROBE_CHANNELS = ("xxprime", "xy")


@dataclass
class GcaConfig:
    """Where gated cross-attention is inserted and how its gate behaves."""

    gate_activation: str = "tanh"
    use_layernorm: bool = True
    heads: int = 4
    gate_hidden: int | None = None
    placements: tuple[int, ...] = ()
    kv_source: str = "combined"

    def __post_init__(self):
        if self.gate_activation not in GATE_ACTIVATIONS:
            raise ConfigError(f"gate_activation must be one of {GATE_ACTIVATIONS}, got {self.gate_activation!r}")
        if self.kv_source not in KV_SOURCES:
            raise ConfigError(f"kv_source must be one of {KV_SOURCES}, got {self.kv_source!r}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.gate_hidden is not None and self.gate_hidden < 1:
            raise ConfigError(f"gate_hidden must be >= 1, got {self.gate_hidden}")
        self.placements = tuple(int(p) for p in self.placements)
        if list(self.placements) != sorted(set(self.placements)):
            raise ConfigError(f"placements must be sorted and unique, got {self.placements}")
        if any(p < 0 or p > MAX_STAGE for p in self.placements):
            raise ConfigError(f"placements must lie in [0, {MAX_STAGE}], got {self.placements}")


class GcaProbe:
    """Running averages of |cos(query, cross-attended)| and |cos(query, kv)|.

    Weighted by unmasked position count so batches of different shapes
    average correctly. Reads model activations as plain arrays only; nothing
    here participates in backpropagation.
    """

    def __init__(self):
        self._totals = {channel: 0.0 for channel in _PROBE_CHANNELS}
        self._weights = {channel: 0 for channel in _PROBE_CHANNELS}
        self.batch_count = 0

    def accumulate(self, channel: str, total: float, weight: int) -> None:
        if channel not in _PROBE_CHANNELS:
            raise ContractError(f"unknown probe channel {channel!r}")
        if weight <= 0:
            raise ContractError(f"probe weight must be positive, got {weight}")
        self._totals[channel] += total
        self._weights[channel] += weight

    def _mean(self, channel: str) -> float:
        weight = self._weights[channel]
        return self._totals[channel] / weight if weight else 0.0

    @property
    def cos_xxprime(self) -> float:
        return self._mean("xxprime")

    @property
    def cos_xy(self) -> float:
        return self._mean("xy")

    def observe(
        self,
        query: np.ndarray,
        crossed: np.ndarray,
        query_mask: np.ndarray,
        kv: np.ndarray | None = None,
        kv_mask: np.ndarray | None = None,
    ) -> None:
        """Record one batch; without ``kv`` only the query/output channel updates."""
        cosine_probe_update(self, query, crossed, query_mask, channel="xxprime")
        if kv is not None and kv_mask is not None:
            shared = min(query.shape[1], kv.shape[1])
            both = query_mask[:, :shared] & kv_mask[:, :shared]
            if both.any():
                cosine_probe_update(self, query[:, :shared], kv[:, :shared], both, channel="xy")
        self.batch_count += 1


def align_lengths(x_a: SequenceBatch, x_b: SequenceBatch) -> tuple[Tensor, Tensor]:
    """Zero-pad the shorter thread's hidden states to the longer length."""
    if x_a.batch_size != x_b.batch_size:
        raise DimensionError(f"batch sizes differ: {x_a.batch_size} vs {x_b.batch_size}")
    if x_a.hidden is None or x_b.hidden is None:
        raise ContractError("align_lengths needs embedded batches")
    target = max(x_a.length, x_b.length)
    return T.pad_axis(x_a.hidden, 1, target), T.pad_axis(x_b.hidden, 1, target)


class GcaBlock:
    """One gated cross-attention unit for a single query domain."""

    def __init__(self, store: ParameterStore, prefix: str, d: int, cfg: GcaConfig):
        if d % cfg.heads != 0:
            raise ConfigError(f"d={d} not divisible by gca heads={cfg.heads}")
        self.cfg = cfg
        self.d = d
        self.gate_width = cfg.gate_hidden if cfg.gate_hidden is not None else d
        self.ca = MultiHeadAttention(store, f"{prefix}.ca", d, cfg.heads)
        self.gate_w1 = store.normal(f"{prefix}.gate.w1", (2 * d, self.gate_width))
        self.gate_b1 = store.zeros(f"{prefix}.gate.b1", (self.gate_width,))
        # Zero final layer: the gate opens from its activation's zero point.
        self.gate_w2 = store.zeros(f"{prefix}.gate.w2", (self.gate_width, d))
        self.gate_b2 = store.zeros(f"{prefix}.gate.b2", (d,))
        if cfg.use_layernorm:
            self.ln_gain = store.ones(f"{prefix}.ln.gain", (d,))
            self.ln_bias = store.zeros(f"{prefix}.ln.bias", (d,))

    def parameter_size(self) -> int:
        size = 4 * self.d * self.d
        size += 2 * self.d * self.gate_width + self.gate_width
        size += self.gate_width * self.d + self.d
        if self.cfg.use_layernorm:
            size += 2 * self.d
        return size

    def gate_ffn(self, x_a: Tensor, x_b: Tensor) -> Tensor:
        """Elementwise gate from the length-aligned pair: act(W2 relu(W1 [x_a;x_b]))."""
        stacked = T.concat_lastdim(x_a, x_b)
        inner = T.relu(T.matmul(stacked, self.gate_w1.tensor) + self.gate_b1.tensor)
        raw = T.matmul(inner, self.gate_w2.tensor) + self.gate_b2.tensor
        return T.sigmoid(raw) if self.cfg.gate_activation == "sigmoid" else T.tanh(raw)

    def __call__(
        self,
        x_q: SequenceBatch,
        x_kv: SequenceBatch,
        probe: GcaProbe | None = None,
    ) -> Tensor:
        if x_q.hidden is None or x_kv.hidden is None:
            raise ContractError("gca needs embedded query and kv batches")
        crossed = self.ca(x_q.hidden, x_kv.hidden, x_kv.mask, causal=False)
        aligned_q, aligned_kv = align_lengths(x_q, x_kv)
        gate = self.gate_ffn(aligned_q, aligned_kv)
        if gate.shape[1] != x_q.length:
            gate = T.narrow(gate, 1, 0, x_q.length)
        merged = x_q.hidden + gate * crossed
        if self.cfg.use_layernorm:
            merged = T.layernorm(merged, self.ln_gain.tensor, self.ln_bias.tensor, eps=1e-8)
        out = apply_mask(merged, x_q.mask)
        if probe is not None:
            probe.observe(
                x_q.hidden.data, crossed.data, x_q.mask, x_kv.hidden.data, x_kv.mask
            )
        return out
