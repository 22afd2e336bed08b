"""Dual-domain sequential recommender with configurable cross-domain wiring.

Three wiring families are expressible through ModelConfig:

* independent encoders + pairwise cross-attention (each domain queries the
  other directly),
* a shared encoder with low-rank adapters and a combined-sequence thread
  (domain adapters after encoding, invariant adapters fed by the combined
  thread, an optional third gated stage),
* independent encoders querying a combined thread whose embedding table is
  frozen and seeds the domain tables.

The forward pipeline is staged so gated cross-attention can be inserted at
stage 0 (after embedding), stage 1 (after encoding; for adapter models,
between the pipeline dropout and the encoder), and stage 2 (adapter models
only, after the domain adapters).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attention import (
    AttentionConfig,
    Encoder,
    SequenceBatch,
    add_position_embedding,
    apply_mask,
)
from .errors import (
    ConfigError,
    ContractError,
    IndexRangeError,
    NanLossError,
    SamplingError,
)
from .gca import GcaBlock, GcaConfig, GcaProbe
from .rng import derive_seed
from .tensor import ParameterStore, Tensor

THREADS = ("a", "b", "combined")


@dataclass
class ModelConfig:
    vocab_a: int
    vocab_b: int
    d: int = 32
    layers: int = 2
    heads: int = 4
    encoder_sharing: str = "independent"
    combined_thread: bool = True
    freeze_combined_embedding: bool = False
    adapter_rank: int | None = None
    gca: GcaConfig = field(default_factory=GcaConfig)
    dropout_p: float = 0.1
    max_len: int = 32

    def __post_init__(self):
        if isinstance(self.gca, dict):
            self.gca = GcaConfig(**self.gca)
        if self.vocab_a < 1 or self.vocab_b < 1:
            raise ConfigError(f"vocabularies must be >= 1, got {self.vocab_a}, {self.vocab_b}")
        if self.d < 2:
            raise ConfigError(f"d must be >= 2, got {self.d}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.encoder_sharing not in ("shared", "independent"):
            raise ConfigError(f"encoder_sharing must be shared|independent, got {self.encoder_sharing!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if self.adapter_rank is not None:
            if not 1 <= self.adapter_rank < self.d:
                raise ConfigError(f"adapter_rank must satisfy 1 <= r < d, got {self.adapter_rank}")
            if not self.combined_thread:
                raise ConfigError("adapters need the combined thread (invariant adapters read it)")
        if self.freeze_combined_embedding and not self.combined_thread:
            raise ConfigError("freeze_combined_embedding requires combined_thread")
        if self.gca.placements:
            if self.d % self.gca.heads != 0:
                raise ConfigError(f"d={self.d} not divisible by gca heads={self.gca.heads}")
            if self.gca.kv_source == "combined" and not self.combined_thread:
                raise ConfigError("kv_source=combined requires combined_thread")
            if max(self.gca.placements) > self.max_stage:
                raise ConfigError(
                    f"placement {max(self.gca.placements)} exceeds this wiring's last stage {self.max_stage}"
                )

    @property
    def max_stage(self) -> int:
        return 2 if self.adapter_rank is not None else 1

    @property
    def gate_width(self) -> int:
        return self.gca.gate_hidden if self.gca.gate_hidden is not None else self.d


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count; must equal the built store's total size."""
    d = cfg.d
    total = (cfg.vocab_a + 1) * d + (cfg.vocab_b + 1) * d + cfg.max_len * d
    if cfg.combined_thread:
        total += (cfg.vocab_a + cfg.vocab_b + 1) * d + 2 * d
    encoder = cfg.layers * (6 * d * d + 6 * d) + 2 * d
    threads = 3 if cfg.combined_thread else 2
    total += encoder if cfg.encoder_sharing == "shared" else threads * encoder
    gate = cfg.gate_width
    gca_block = 4 * d * d + (2 * d * gate + gate) + (gate * d + d)
    if cfg.gca.use_layernorm:
        gca_block += 2 * d
    total += len(cfg.gca.placements) * 2 * gca_block
    if cfg.adapter_rank is not None:
        total += 5 * 2 * d * cfg.adapter_rank
    return total


class LowRankAdapter:
    """Residual low-rank delta. Domain kind reads its own thread; invariant
    kind reads the combined thread. ``up`` starts at zero so a fresh adapter
    is a no-op."""

    def __init__(self, store: ParameterStore, prefix: str, d: int, rank: int, kind: str):
        if kind not in ("domain", "invariant"):
            raise ConfigError(f"adapter kind must be domain|invariant, got {kind!r}")
        self.kind = kind
        self.down = store.normal(f"{prefix}.down", (d, rank))
        self.up = store.zeros(f"{prefix}.up", (rank, d))

    def delta(self, source: Tensor) -> Tensor:
        return T.matmul(T.matmul(source, self.down.tensor), self.up.tensor)

    def apply(self, x: Tensor, source: Tensor | None = None) -> Tensor:
        if self.kind == "invariant" and source is None:
            raise ContractError("invariant adapter needs the combined-thread source")
        return x + self.delta(source if self.kind == "invariant" else x)


class DualDomainModel:
    """Built model: parameter store plus the staged forward pipeline."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        store = ParameterStore(derive_seed(seed, "model"))
        self.store = store
        d = cfg.d

        self.item_a = store.normal("emb.item_a", (cfg.vocab_a + 1, d))
        self.item_b = store.normal("emb.item_b", (cfg.vocab_b + 1, d))
        self.item_combined = None
        self.domain_tag = None
        if cfg.combined_thread:
            self.item_combined = store.normal(
                "emb.item_combined",
                (cfg.vocab_a + cfg.vocab_b + 1, d),
                trainable=not cfg.freeze_combined_embedding,
            )
            self.domain_tag = store.normal("emb.domain_tag", (2, d))
            if cfg.freeze_combined_embedding:
                # Domain tables start as copies of their combined rows.
                combined = self.item_combined.tensor.data
                self.item_a.tensor.data = combined[: cfg.vocab_a + 1].copy()
                rows_b = np.concatenate([combined[:1], combined[cfg.vocab_a + 1 :]])
                self.item_b.tensor.data = rows_b.copy()
        self.position = store.normal("emb.position", (cfg.max_len, d))

        att_cfg = AttentionConfig(d=d, heads=cfg.heads, dropout_p=cfg.dropout_p, max_len=cfg.max_len)
        self.encoders: dict[str, Encoder] = {}
        if cfg.encoder_sharing == "shared":
            shared = Encoder(store, "enc.shared", att_cfg, cfg.layers)
            for thread in self._threads():
                self.encoders[thread] = shared
        else:
            for thread in self._threads():
                self.encoders[thread] = Encoder(store, f"enc.{thread}", att_cfg, cfg.layers)

        self.gca_blocks: dict[int, dict[str, GcaBlock]] = {}
        install_placements(self, cfg.gca)

        self.adapters: dict[str, LowRankAdapter] = {}
        if cfg.adapter_rank is not None:
            for thread in self._threads():
                self.adapters[f"domain.{thread}"] = LowRankAdapter(
                    store, f"adapter.domain.{thread}", d, cfg.adapter_rank, "domain"
                )
            for thread in ("a", "b"):
                self.adapters[f"invariant.{thread}"] = LowRankAdapter(
                    store, f"adapter.invariant.{thread}", d, cfg.adapter_rank, "invariant"
                )

    def _threads(self) -> tuple[str, ...]:
        return THREADS if self.cfg.combined_thread else ("a", "b")

    @property
    def param_count(self) -> int:
        return self.store.total_size()

    def parameters(self):
        return self.store.parameters()

    def combined_required(self) -> bool:
        """Whether forward actually consumes the combined thread."""
        cfg = self.cfg
        if cfg.adapter_rank is not None:
            return True
        return bool(cfg.gca.placements) and cfg.gca.kv_source == "combined"

    # -- forward pipeline ----------------------------------------------------

    def _embed(self, batch: SequenceBatch) -> Tensor:
        if batch.domain == "a":
            table = self.item_a.tensor
        elif batch.domain == "b":
            table = self.item_b.tensor
        else:
            table = self.item_combined.tensor
        hidden = T.embedding_gather(table, batch.ids)
        if batch.domain == "combined":
            tags = (batch.ids > self.cfg.vocab_a).astype(np.int64)
            hidden = hidden + T.embedding_gather(self.domain_tag.tensor, tags)
        hidden = apply_mask(hidden, batch.mask)
        return add_position_embedding(batch.with_hidden(hidden), self.position.tensor)

    def forward(
        self,
        batch_a: SequenceBatch,
        batch_b: SequenceBatch,
        batch_combined: SequenceBatch | None = None,
        probes: dict[str, GcaProbe] | None = None,
        train_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        if batch_a.batch_size != batch_b.batch_size:
            raise ContractError("domain batches must cover the same users row-wise")
        use_combined = self.combined_required()
        if use_combined and batch_combined is None:
            raise ContractError("this configuration needs the combined batch")

        state: dict[str, SequenceBatch] = {
            "a": batch_a.with_hidden(self._embed(batch_a)),
            "b": batch_b.with_hidden(self._embed(batch_b)),
        }
        if use_combined:
            state["combined"] = batch_combined.with_hidden(self._embed(batch_combined))
        active = tuple(state)

        def kv_for(domain: str) -> SequenceBatch:
            if cfg.gca.kv_source == "combined":
                return state["combined"]
            return state["b"] if domain == "a" else state["a"]

        def run_stage(stage: int) -> None:
            if stage not in self.gca_blocks:
                return
            pair = self.gca_blocks[stage]
            updates = {}
            for domain in ("a", "b"):
                probe = probes.get(domain) if probes else None
                updates[domain] = pair[domain](state[domain], kv_for(domain), probe=probe)
            for domain, hidden in updates.items():
                state[domain] = state[domain].with_hidden(hidden)

        adapter_wiring = cfg.adapter_rank is not None

        run_stage(0)
        for thread in active:
            state[thread] = state[thread].with_hidden(
                T.dropout(state[thread].hidden, cfg.dropout_p, train_rng)
            )
        if adapter_wiring:
            run_stage(1)
        for thread in active:
            state[thread] = state[thread].with_hidden(self.encoders[thread](state[thread], train_rng))
        if not adapter_wiring:
            run_stage(1)
        if adapter_wiring:
            for thread in active:
                adapted = self.adapters[f"domain.{thread}"].apply(state[thread].hidden)
                state[thread] = state[thread].with_hidden(apply_mask(adapted, state[thread].mask))
            run_stage(2)
            combined_hidden = state["combined"].hidden
            for domain in ("a", "b"):
                aligned = self._fit_length(combined_hidden, state[domain].length)
                final = self.adapters[f"invariant.{domain}"].apply(state[domain].hidden, source=aligned)
                state[domain] = state[domain].with_hidden(apply_mask(final, state[domain].mask))
        return state["a"].hidden, state["b"].hidden

    @staticmethod
    def _fit_length(hidden: Tensor, length: int) -> Tensor:
        current = hidden.shape[1]
        if current == length:
            return hidden
        if current < length:
            return T.pad_axis(hidden, 1, length)
        return T.narrow(hidden, 1, 0, length)

    # -- scoring and loss ------------------------------------------------------

    def _item_table(self, domain: str) -> Tensor:
        return self.item_a.tensor if domain == "a" else self.item_b.tensor

    def score_next_item(
        self, repr_: Tensor, mask: np.ndarray, candidates: np.ndarray, domain: str
    ) -> Tensor:
        """Dot products of each row's last real position against candidate embeddings."""
        if domain not in ("a", "b"):
            raise ContractError(f"scoring domain must be a|b, got {domain!r}")
        vocab = self.cfg.vocab_a if domain == "a" else self.cfg.vocab_b
        candidates = np.asarray(candidates, dtype=np.int64)
        if candidates.size and (candidates.min() < 1 or candidates.max() > vocab):
            raise IndexRangeError(
                f"candidates outside [1, {vocab}]: min={candidates.min()}, max={candidates.max()}"
            )
        batch, _, d = repr_.shape
        lengths = mask.sum(axis=1)
        last = T.select_positions(repr_, np.maximum(lengths - 1, 0))
        table = self._item_table(domain)
        cand_emb = T.embedding_gather(table, candidates)
        scores = T.matmul(T.reshape(last, (batch, 1, d)), T.transpose(cand_emb, (0, 2, 1)))
        return T.reshape(scores, (batch, candidates.shape[1]))

    def _training_negatives(
        self, positives: np.ndarray, vocab: int, k: int, rng: np.random.Generator
    ) -> np.ndarray:
        if vocab < 2:
            raise SamplingError(f"vocab {vocab} too small to sample negatives")
        negatives = rng.integers(1, vocab + 1, size=(positives.shape[0], k))
        collisions = negatives == positives[:, None]
        while collisions.any():
            negatives[collisions] = rng.integers(1, vocab + 1, size=int(collisions.sum()))
            collisions = negatives == positives[:, None]
        return negatives

    def training_loss(
        self,
        batch_a: SequenceBatch,
        batch_b: SequenceBatch,
        positives_a: np.ndarray,
        positives_b: np.ndarray,
        negatives_per_pos: int,
        sample_rng: np.random.Generator,
        batch_combined: SequenceBatch | None = None,
        train_rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Sampled binary cross-entropy at the final position, both domains.

        Per (user, domain) example: softplus(-s_pos) + sum_k softplus(s_neg),
        averaged over all 2B examples. All-zero scores give (1+k) ln 2.
        """
        k = negatives_per_pos
        if k < 1:
            raise ContractError(f"negatives_per_pos must be >= 1, got {k}")
        repr_a, repr_b = self.forward(batch_a, batch_b, batch_combined, train_rng=train_rng)
        batch = batch_a.batch_size
        total = None
        for domain, repr_, batch_seq, positives in (
            ("a", repr_a, batch_a, positives_a),
            ("b", repr_b, batch_b, positives_b),
        ):
            vocab = self.cfg.vocab_a if domain == "a" else self.cfg.vocab_b
            negatives = self._training_negatives(positives, vocab, k, sample_rng)
            candidates = np.concatenate([positives[:, None], negatives], axis=1)
            scores = self.score_next_item(repr_, batch_seq.mask, candidates, domain)
            pos_scores = T.narrow(scores, 1, 0, 1)
            neg_scores = T.narrow(scores, 1, 1, k)
            part = T.softplus(-pos_scores).sum() + T.softplus(neg_scores).sum()
            total = part if total is None else total + part
        loss = total * (1.0 / (2.0 * batch))
        if np.isnan(loss.data):
            raise NanLossError(
                f"training loss became NaN (batch={batch}, config={self.cfg.encoder_sharing}, "
                f"placements={self.cfg.gca.placements})"
            )
        return loss


def install_placements(model: DualDomainModel, gca_cfg: GcaConfig) -> DualDomainModel:
    """Install the parallel GCA pair at each configured stage; idempotent.

    Also re-points the model's gca config, so a model built without
    placements can be upgraded in place (new blocks draw their init from the
    same per-name streams a fresh build would use).
    """
    cfg = model.cfg
    if gca_cfg.placements:
        if max(gca_cfg.placements) > cfg.max_stage:
            raise ConfigError(
                f"placement {max(gca_cfg.placements)} exceeds this wiring's last stage {cfg.max_stage}"
            )
        if gca_cfg.kv_source == "combined" and not cfg.combined_thread:
            raise ConfigError("kv_source=combined requires combined_thread")
        if cfg.d % gca_cfg.heads != 0:
            raise ConfigError(f"d={cfg.d} not divisible by gca heads={gca_cfg.heads}")
    for stage in gca_cfg.placements:
        if stage in model.gca_blocks:
            continue
        model.gca_blocks[stage] = {
            domain: GcaBlock(model.store, f"gca.{stage}.{domain}", cfg.d, gca_cfg)
            for domain in ("a", "b")
        }
    model.cfg = replace(cfg, gca=gca_cfg)
    return model


# Spec-facing alias: placements are "applied" to an already-built model state.
apply_placements = install_placements


def build(cfg: ModelConfig, seed: int) -> DualDomainModel:
    return DualDomainModel(cfg, seed)
