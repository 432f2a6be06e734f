"""Attentive style classifier and style-agnostic template extraction.

The classifier reads ``<CLS> x`` and predicts the style from the CLS
position. Its penultimate-layer attention from the CLS query, max-pooled
over heads, scores how style-bearing each token is; tokens at or above the
mean score become SLOTs, and runs of SLOTs merge into one.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from unstract.lewis.corpus import SLOT, StyleLabel, TaskStyles, TokenSeq, Vocabulary
from unstract.lewis.exceptions import DegenerateData, EmptyInput
from unstract.lewis.neural.model import AttentionRecord, ClassifierBatch, ModelBundle, ModelConfig, new_model, pad_batch
from unstract.lewis.neural.optim import TrainConfig
from unstract.lewis.neural.training import train
from unstract.lewis.utils import LewisUtils

CLS_QUERY = 0
MAX_CAPPED_SLOTS = 6


@dataclass(frozen=True)
class AttentionProfile:
    """Pooled attention per content token and its mean."""

    a: np.ndarray
    threshold: float

    @classmethod
    def from_weights(cls, a: Sequence[float]) -> "AttentionProfile":
        arr = np.asarray(a, dtype=np.float64)
        return cls(arr, float(arr.mean()))


@dataclass(frozen=True)
class Template:
    """Token sequence over content tokens and merged SLOTs."""

    tokens: tuple[str, ...]

    @property
    def slot_count(self) -> int:
        return sum(1 for t in self.tokens if t == SLOT)

    @property
    def content_tokens(self) -> tuple[str, ...]:
        return tuple(t for t in self.tokens if t != SLOT)

    def render(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def parse(cls, text: str) -> "Template":
        return cls(tuple(text.split()))

    def __len__(self):
        return len(self.tokens)


def slot_cap(length: int) -> int:
    return min(length // 3, MAX_CAPPED_SLOTS)


def pool_attention(record: AttentionRecord, layer: int, query: int = CLS_QUERY, skip: int = 1) -> AttentionProfile:
    """Max-pools one layer's attention over heads for a single query row.

    Args:
        record (AttentionRecord): Per-layer (heads, T, T) attention of one input.
        layer (int): Layer index to read.
        query (int): Query row (the CLS position).
        skip (int): Number of leading special positions excluded from the profile.
    """
    weights = np.asarray(record.weights[layer], dtype=np.float64)
    return AttentionProfile.from_weights(weights[:, query, skip:].max(axis=0))


def template_from_profile(s: Sequence[str], profile: AttentionProfile, cap: bool = False) -> Template:
    """Slots every token whose pooled attention is >= the mean (boundary
    inclusive); with ``cap`` only the top min(N/3, 6) of those, ties to the
    leftmost. Consecutive SLOTs are merged.
    """
    n = len(s)
    if n == 0:
        raise EmptyInput("Cannot build a template from an empty sequence")
    if len(profile.a) != n:
        raise ValueError(f"Profile length {len(profile.a)} does not match sequence length {n}")
    slotted = [bool(profile.a[i] >= profile.threshold) for i in range(n)]
    if cap:
        limit = slot_cap(n)
        chosen = sorted((i for i in range(n) if slotted[i]), key=lambda i: (-profile.a[i], i))[:limit]
        keep = set(chosen)
        slotted = [i in keep for i in range(n)]
    tokens: list[str] = []
    for tok, is_slot in zip(s, slotted):
        if is_slot:
            if not tokens or tokens[-1] != SLOT:
                tokens.append(SLOT)
        else:
            tokens.append(tok)
    return Template(tuple(tokens))


class StyleClassifier:
    """Inference wrapper around a trained classifier ModelBundle."""

    logger = LewisUtils.get_logger(__name__)

    def __init__(self, model: ModelBundle, vocabulary: Vocabulary, logging_level: str = ""):
        if model.role != "classifier":
            raise ValueError(f"Expected a classifier model, got role '{model.role}'")
        if logging_level:
            LewisUtils.set_logging_level(self.logger, logging_level)
        self.model = model
        self.vocabulary = vocabulary
        self.styles = TaskStyles.from_names(model.metadata["styles"])

    def _input_ids(self, x: Sequence[str]) -> list[int]:
        return [self.vocabulary.cls_id, *self.vocabulary.encode(x)]

    def _forward(self, x: Sequence[str], record: bool = False):
        ids = np.asarray([self._input_ids(x)], dtype=np.int64)
        probs, attention = self.model.net.predict_proba(ids, np.ones_like(ids, dtype=bool), record=record)
        return probs[0], attention

    def probabilities(self, x: Sequence[str]) -> np.ndarray:
        """Class probabilities (index order of the task styles); sums to 1.

        Raises:
            LengthError: If ``<CLS> x`` exceeds the model's max_len.
        """
        return self._forward(x)[0]

    def classify(self, x: Sequence[str]) -> tuple[StyleLabel, float]:
        probs = self.probabilities(x)
        index = int(np.argmax(probs))
        return self.styles.by_index(index), float(probs[index])

    def style_probability(self, x: Sequence[str], style: StyleLabel) -> float:
        return float(self.probabilities(x)[style.index])

    def attention_profile(self, x: Sequence[str]) -> AttentionProfile:
        _, attention = self._forward(x, record=True)
        record = AttentionRecord([w[0] for w in attention.weights])
        return pool_attention(record, layer=self.model.config.layers - 2)

    def extract_template(self, s: Sequence[str], cap: bool = False) -> Template:
        return template_from_profile(s, self.attention_profile(s), cap=cap)

    def accuracy(self, examples: Sequence[tuple[TokenSeq, StyleLabel]]) -> float:
        if not examples:
            return float("nan")
        hits = sum(1 for seq, label in examples if self.classify(seq)[0].index == label.index)
        return hits / len(examples)


def _collate(vocabulary: Vocabulary):
    def collate(batch: list[tuple[TokenSeq, StyleLabel]]) -> ClassifierBatch:
        ids, mask = pad_batch([[vocabulary.cls_id, *vocabulary.encode(seq)] for seq, _ in batch], vocabulary.pad_id)
        labels = np.asarray([label.index for _, label in batch], dtype=np.int64)
        return ClassifierBatch(ids, mask, labels)

    return collate


def train_classifier(
    examples: Sequence[tuple[TokenSeq, StyleLabel]],
    styles: TaskStyles,
    vocabulary: Vocabulary,
    model_config: Optional[ModelConfig] = None,
    train_config: Optional[TrainConfig] = None,
    seed: int = 0,
    heldout_fraction: float = 0.1,
) -> StyleClassifier:
    """Trains a from-scratch binary style classifier.

    A seeded ``heldout_fraction`` of the examples is held out and the
    accuracy on it is stored in ``model.metadata["heldout_accuracy"]``.

    Raises:
        DegenerateData: If the examples do not cover both styles.
    """
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    present = {label.index for _, label in examples}
    if present != {0, 1}:
        raise DegenerateData("Classifier training needs examples of both styles", present=sorted(present))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    n_heldout = max(1, int(round(len(examples) * heldout_fraction))) if len(examples) > 1 else 0
    heldout = [examples[i] for i in order[:n_heldout]]
    training = [examples[i] for i in order[n_heldout:]] or heldout
    model = new_model("classifier", vocabulary.hash, len(vocabulary), model_config, seed)
    model.metadata["styles"] = [styles.first.name, styles.second.name]
    result = train(model, training, _collate(vocabulary), train_config, seed)
    classifier = StyleClassifier(result.model, vocabulary)
    accuracy = classifier.accuracy(heldout)
    model.metadata.update(
        heldout_accuracy=accuracy,
        heldout_size=len(heldout),
        query_row="cls",
        final_loss=result.final_loss,
    )
    classifier.logger.info("Classifier trained: held-out accuracy %.4f on %d examples", accuracy, len(heldout))
    return classifier
