"""Transformer networks for the four model roles and the ModelBundle that
carries them.

Roles:
    classifier: encoder + CLS readout (2 classes), attention recorded.
    tagger: encoder + per-position insert (2-way) and op (3-way) heads.
    infiller / generator / seq2seq: encoder-decoder with a vocabulary head.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from unstract.lewis.exceptions import ConfigError, LengthError
from unstract.lewis.neural.layers import (
    DecoderLayer,
    Dropout,
    Embedding,
    EncoderLayer,
    LayerNorm,
    Linear,
    Module,
    log_softmax,
    softmax,
)

ROLES = ("classifier", "infiller", "tagger", "generator", "seq2seq")
SEQ2SEQ_ROLES = ("infiller", "generator", "seq2seq")
IGNORE = -1


@dataclass
class ModelConfig:
    """Architecture of one model role."""

    layers: int = 4
    heads: int = 4
    model_dim: int = 128
    ff_dim: int = 256
    max_len: int = 260
    dropout: float = 0.1
    decoder_layers: int = 2

    def validate(self, key_path: str = "model") -> None:
        if self.layers < 2:
            raise ConfigError("Encoders need at least 2 layers (a penultimate layer must exist)",
                              key_path=f"{key_path}.layers")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1", key_path=f"{key_path}.heads")
        if self.model_dim % self.heads:
            raise ConfigError("model_dim must be divisible by heads", key_path=f"{key_path}.model_dim")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be a probability below 1", key_path=f"{key_path}.dropout")
        if self.decoder_layers < 1:
            raise ConfigError("decoder_layers must be >= 1", key_path=f"{key_path}.decoder_layers")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2", key_path=f"{key_path}.max_len")


@dataclass
class AttentionRecord:
    """Attention weights indexed ``[layer][head][query][key]``."""

    weights: list[np.ndarray]

    def max_normalization_error(self) -> float:
        return max(float(np.abs(w.sum(axis=-1) - 1.0).max()) for w in self.weights)


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pads id lists into an int64 matrix plus a validity mask."""
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for row, seq in enumerate(seqs):
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = True
    return ids, mask


def pad_labels(seqs: Sequence[Sequence[int]], width: Optional[int] = None) -> np.ndarray:
    width = width or max(len(s) for s in seqs)
    labels = np.full((len(seqs), width), IGNORE, dtype=np.int64)
    for row, seq in enumerate(seqs):
        labels[row, : len(seq)] = seq
    return labels


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray, loss_scale: float = 1.0):
    """Mean cross-entropy over labels != IGNORE and its gradient."""
    classes = logits.shape[-1]
    flat = logits.reshape(-1, classes)
    lab = labels.reshape(-1)
    valid = np.flatnonzero(lab != IGNORE)
    count = max(valid.size, 1)
    logp = log_softmax(flat)
    loss = -float(logp[valid, lab[valid]].sum()) / count
    grad = np.exp(logp)
    grad[valid, lab[valid]] -= 1.0
    grad[lab == IGNORE] = 0.0
    grad *= loss_scale / count
    return loss * loss_scale, grad.reshape(logits.shape).astype(logits.dtype)


@dataclass
class ClassifierBatch:
    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray


@dataclass
class TaggerBatch:
    ids: np.ndarray
    mask: np.ndarray
    insert_labels: np.ndarray
    op_labels: np.ndarray


@dataclass
class Seq2SeqBatch:
    src_ids: np.ndarray
    src_mask: np.ndarray
    dec_ids: np.ndarray
    dec_mask: np.ndarray
    labels: np.ndarray


class TransformerEncoder(Module):
    def __init__(self, vocab_size: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.tok = self.add_child("tok", Embedding(vocab_size, config.model_dim, rng))
        self.pos = self.add_child("pos", Embedding(config.max_len, config.model_dim, rng))
        self.drop = self.add_child("drop", Dropout(config.dropout))
        self.layers = [
            self.add_child(f"layer{i}", EncoderLayer(config.model_dim, config.heads, config.ff_dim, config.dropout, rng))
            for i in range(config.layers)
        ]
        self.ln_f = self.add_child("ln_f", LayerNorm(config.model_dim))

    def forward(
        self, ids: np.ndarray, mask: np.ndarray, rng: Optional[np.random.Generator] = None, record: bool = False
    ) -> tuple[np.ndarray, Optional[AttentionRecord]]:
        if ids.shape[1] > self.config.max_len:
            raise LengthError("Input exceeds the model's max_len", length=int(ids.shape[1]), max_len=self.config.max_len)
        positions = np.broadcast_to(np.arange(ids.shape[1]), ids.shape)
        x = self.drop.forward(self.tok.forward(ids) + self.pos.forward(positions), rng)
        attn_mask = mask[:, None, None, :]
        weights = []
        for layer in self.layers:
            x = layer.forward(x, attn_mask, rng)
            if record:
                weights.append(layer.attn.attention)
        return self.ln_f.forward(x), (AttentionRecord(weights) if record else None)

    def backward(self, dh: np.ndarray) -> None:
        dx = self.ln_f.backward(dh)
        for layer in reversed(self.layers):
            dx = layer.backward(dx)
        dx = self.drop.backward(dx)
        self.tok.backward(dx)
        self.pos.backward(dx)


class TransformerDecoder(Module):
    def __init__(self, vocab_size: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.tok = self.add_child("tok", Embedding(vocab_size, config.model_dim, rng))
        self.pos = self.add_child("pos", Embedding(config.max_len, config.model_dim, rng))
        self.drop = self.add_child("drop", Dropout(config.dropout))
        self.layers = [
            self.add_child(f"layer{i}", DecoderLayer(config.model_dim, config.heads, config.ff_dim, config.dropout, rng))
            for i in range(config.decoder_layers)
        ]
        self.ln_f = self.add_child("ln_f", LayerNorm(config.model_dim))

    def forward(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        memory: np.ndarray,
        memory_mask: np.ndarray,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        steps = ids.shape[1]
        if steps > self.config.max_len:
            raise LengthError("Decoder input exceeds max_len", length=int(steps), max_len=self.config.max_len)
        positions = np.broadcast_to(np.arange(steps), ids.shape)
        x = self.drop.forward(self.tok.forward(ids) + self.pos.forward(positions), rng)
        causal = np.tril(np.ones((steps, steps), dtype=bool))
        self_mask = causal[None, None, :, :] & mask[:, None, None, :]
        cross_mask = memory_mask[:, None, None, :]
        for layer in self.layers:
            x = layer.forward(x, memory, self_mask, cross_mask, rng)
        return self.ln_f.forward(x)

    def backward(self, dh: np.ndarray) -> np.ndarray:
        dx = self.ln_f.backward(dh)
        dmemory = None
        for layer in reversed(self.layers):
            dx, dm = layer.backward(dx)
            dmemory = dm if dmemory is None else dmemory + dm
        dx = self.drop.backward(dx)
        self.tok.backward(dx)
        self.pos.backward(dx)
        return dmemory


class Network(Module):
    """A role network: ``loss`` runs forward (and optionally backward) on a
    batch and returns the scalar loss."""

    def loss(self, batch: Any, rng: Optional[np.random.Generator] = None, backward: bool = True,
             loss_scale: float = 1.0) -> float:
        raise NotImplementedError


class ClassifierNet(Network):
    def __init__(self, vocab_size: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.encoder = self.add_child("encoder", TransformerEncoder(vocab_size, config, rng))
        self.head = self.add_child("head", Linear(config.model_dim, 2, rng))

    def logits(self, ids: np.ndarray, mask: np.ndarray, rng=None, record: bool = False):
        hidden, attention = self.encoder.forward(ids, mask, rng, record)
        return self.head.forward(hidden[:, 0, :]), hidden, attention

    def loss(self, batch: ClassifierBatch, rng=None, backward: bool = True, loss_scale: float = 1.0) -> float:
        logits, hidden, _ = self.logits(batch.ids, batch.mask, rng)
        loss, dlogits = softmax_cross_entropy(logits, batch.labels, loss_scale)
        if backward:
            dhidden = np.zeros_like(hidden)
            dhidden[:, 0, :] = self.head.backward(dlogits)
            self.encoder.backward(dhidden)
        return loss

    def predict_proba(self, ids: np.ndarray, mask: np.ndarray, record: bool = False):
        logits, _, attention = self.logits(ids, mask, None, record)
        return softmax(logits.astype(np.float64)), attention


class TaggerNet(Network):
    def __init__(self, vocab_size: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.encoder = self.add_child("encoder", TransformerEncoder(vocab_size, config, rng))
        self.insert_head = self.add_child("insert_head", Linear(config.model_dim, 2, rng))
        self.op_head = self.add_child("op_head", Linear(config.model_dim, 3, rng))

    def forward(self, ids: np.ndarray, mask: np.ndarray, rng=None):
        hidden, _ = self.encoder.forward(ids, mask, rng)
        return self.insert_head.forward(hidden), self.op_head.forward(hidden), hidden

    def loss(self, batch: TaggerBatch, rng=None, backward: bool = True, loss_scale: float = 1.0) -> float:
        ins_logits, op_logits, hidden = self.forward(batch.ids, batch.mask, rng)
        ins_loss, d_ins = softmax_cross_entropy(ins_logits, batch.insert_labels, loss_scale)
        op_loss, d_op = softmax_cross_entropy(op_logits, batch.op_labels, loss_scale)
        if backward:
            self.encoder.backward(self.insert_head.backward(d_ins) + self.op_head.backward(d_op))
        return ins_loss + op_loss

    def predict_proba(self, ids: np.ndarray, mask: np.ndarray):
        ins_logits, op_logits, _ = self.forward(ids, mask)
        return softmax(ins_logits.astype(np.float64)), softmax(op_logits.astype(np.float64))


class Seq2SeqNet(Network):
    def __init__(self, vocab_size: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.encoder = self.add_child("encoder", TransformerEncoder(vocab_size, config, rng))
        self.decoder = self.add_child("decoder", TransformerDecoder(vocab_size, config, rng))
        self.lm_head = self.add_child("lm_head", Linear(config.model_dim, vocab_size, rng))

    def loss(self, batch: Seq2SeqBatch, rng=None, backward: bool = True, loss_scale: float = 1.0) -> float:
        memory, _ = self.encoder.forward(batch.src_ids, batch.src_mask, rng)
        hidden = self.decoder.forward(batch.dec_ids, batch.dec_mask, memory, batch.src_mask, rng)
        logits = self.lm_head.forward(hidden)
        loss, dlogits = softmax_cross_entropy(logits, batch.labels, loss_scale)
        if backward:
            dmemory = self.decoder.backward(self.lm_head.backward(dlogits))
            self.encoder.backward(dmemory)
        return loss

    def encode_source(self, src_ids: np.ndarray, src_mask: np.ndarray) -> np.ndarray:
        memory, _ = self.encoder.forward(src_ids, src_mask)
        return memory

    def next_log_probs(self, memory: np.ndarray, memory_mask: np.ndarray, prefixes: np.ndarray) -> np.ndarray:
        """Log-probabilities of the next token for K equal-length prefixes.

        ``memory``/``memory_mask`` hold one source and are broadcast over the
        K prefixes.
        """
        k = prefixes.shape[0]
        mem = np.broadcast_to(memory, (k, *memory.shape[1:]))
        mem_mask = np.broadcast_to(memory_mask, (k, memory_mask.shape[1]))
        dec_mask = np.ones(prefixes.shape, dtype=bool)
        hidden = self.decoder.forward(prefixes, dec_mask, mem, mem_mask)
        return log_softmax(self.lm_head.forward(hidden[:, -1, :]).astype(np.float64))


_NETWORKS = {
    "classifier": ClassifierNet,
    "tagger": TaggerNet,
    "infiller": Seq2SeqNet,
    "generator": Seq2SeqNet,
    "seq2seq": Seq2SeqNet,
}


@dataclass
class ModelBundle:
    """A trained (or freshly initialised) network plus the provenance needed
    to reload it against the right vocabulary."""

    role: str
    config: ModelConfig
    vocab_hash: str
    vocab_size: int
    net: Network
    style: Optional[str] = None
    metadata: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "role": self.role,
            "style": self.style,
            "vocab_hash": self.vocab_hash,
            "vocab_size": self.vocab_size,
            "config": asdict(self.config),
            "metadata": self.metadata,
        }


def build_network(role: str, vocab_size: int, config: ModelConfig, seed: int) -> Network:
    if role not in _NETWORKS:
        raise ConfigError(f"Unknown model role '{role}'", key_path="role")
    config.validate()
    rng = np.random.default_rng(seed)
    return _NETWORKS[role](vocab_size, config, rng)


def new_model(
    role: str, vocab_hash: str, vocab_size: int, config: ModelConfig, seed: int, style: Optional[str] = None
) -> ModelBundle:
    net = build_network(role, vocab_size, config, seed)
    return ModelBundle(role, config, vocab_hash, vocab_size, net, style=style)


def encode(model: ModelBundle, ids: Sequence[int], record_attention: bool = False):
    """Runs the (inference-mode) encoder of any role over one id sequence.

    Returns:
        tuple: hidden states (T, D) and an AttentionRecord with per-layer
        arrays of shape (heads, T, T), or None when not requested.

    Raises:
        LengthError: If the input is longer than the model's max_len.
    """
    if len(ids) > model.config.max_len:
        raise LengthError("Input exceeds the model's max_len", length=len(ids), max_len=model.config.max_len)
    arr = np.asarray([list(ids)], dtype=np.int64)
    hidden, attention = model.net.children["encoder"].forward(arr, np.ones_like(arr, dtype=bool), None,
                                                             record_attention)
    if attention is not None:
        attention = AttentionRecord([w[0] for w in attention.weights])
    return hidden[0], attention
