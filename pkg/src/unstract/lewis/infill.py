"""Style-specific infilling models.

Two implementations fill the SLOTs of a template in one style:

* ``Seq2SeqInfiller``: a denoising encoder-decoder. The encoder reads the
  template, the decoder writes the whole sentence under a constraint that
  forces every template content token, in order.
* ``NgramInfiller``: a count-based n-gram model with backoff, filling slots
  greedily. Deterministic, used as a test oracle and a cheap alternative.
"""

import os
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from unstract.lewis.classifier import Template
from unstract.lewis.corpus import BOS, EOS, SLOT, StyleLabel, TokenSeq, Vocabulary
from unstract.lewis.exceptions import ConstraintFailure, DegenerateData, FormatError
from unstract.lewis.neural.decoding import Hypothesis, beam_search, sample
from unstract.lewis.neural.model import ModelBundle, ModelConfig, Seq2SeqBatch, new_model, pad_batch, pad_labels
from unstract.lewis.neural.optim import TrainConfig
from unstract.lewis.neural.training import train
from unstract.lewis.utils import LewisUtils

NGRAM_HEADER = "LEWIS-NGRAM v1"
MAX_NOISE_SPANS = 3
MAX_NOISE_SPAN_LENGTH = 4
NOISE_SPAN_P = 0.5
MIN_INFILL_CORPUS = 16

logger = LewisUtils.get_logger(__name__)


@dataclass(frozen=True)
class InfillRequest:
    template: Template
    style: StyleLabel
    beam: int = 1
    max_fill_length: int = 6
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.max_fill_length < 1:
            raise ValueError("max_fill_length must be >= 1")


class Infiller:
    """Fills template slots in one style."""

    kind = ""

    def __init__(self, style: StyleLabel):
        self.style = style

    def _check_style(self, request: InfillRequest) -> None:
        if request.style.name != self.style.name:
            raise ValueError(f"Infiller for style '{self.style.name}' got a '{request.style.name}' request")

    def fill_template(self, request: InfillRequest) -> TokenSeq:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Denoising seq2seq infiller
# ---------------------------------------------------------------------------


class TemplateConstraint:
    """Decoding constraint that walks a template.

    State is ``(index, fill_count, surfaces)``: the template position being
    produced, the tokens emitted so far for the current slot and the output
    surfaces. At a content position only that token is allowed. At a SLOT
    any content token except the next required one may extend the fill; the
    next required token (or EOS at the end) closes the fill once it holds at
    least one token, and is forced once it holds ``max_fill`` tokens.
    """

    def __init__(self, template: Template, vocabulary: Vocabulary, max_fill: int):
        self.template = template.tokens
        self.vocabulary = vocabulary
        self.max_fill = max_fill
        self.ids = [vocabulary.slot_id if t == SLOT else vocabulary.id_of(t) for t in self.template]
        self._content = np.asarray(list(vocabulary.content_ids()), dtype=np.int64)
        self._eos = np.asarray([vocabulary.eos_id], dtype=np.int64)

    @property
    def max_steps(self) -> int:
        content = len(self.template) - self.template.count(SLOT)
        return content + self.template.count(SLOT) * self.max_fill + 1

    def initial(self):
        return 0, 0, ()

    def _closing(self, index: int) -> int:
        return self.ids[index + 1] if index + 1 < len(self.ids) else self.vocabulary.eos_id

    def allowed(self, state, step: int) -> np.ndarray:
        index, count, _ = state
        if index >= len(self.ids):
            return self._eos
        if self.template[index] != SLOT:
            return np.asarray([self.ids[index]], dtype=np.int64)
        closing = self._closing(index)
        if count >= self.max_fill:
            return np.asarray([closing], dtype=np.int64)
        free = self._content[self._content != closing]
        if count == 0:
            return free
        return np.concatenate([free, [closing]])

    def advance(self, state, token: int):
        index, count, surfaces = state
        if index >= len(self.ids):
            return (index, 0, surfaces), True
        if self.template[index] != SLOT:
            return (index + 1, 0, surfaces + (self.template[index],)), False
        if count >= 1 and token == self._closing(index):
            if index + 1 >= len(self.ids):
                return (index + 1, 0, surfaces), True
            return (index + 2, 0, surfaces + (self.template[index + 1],)), False
        return (index, count + 1, surfaces + (self.vocabulary.surface_of(token),)), False


class Seq2SeqInfiller(Infiller):
    """Constrained decoding over a trained ``infiller`` ModelBundle.

    The encoder input is the template ids followed by EOS; the output
    surfaces for content positions are copied from the template, so
    out-of-vocabulary scaffold tokens survive unchanged.
    """

    kind = "seq2seq"

    def __init__(self, model: ModelBundle, vocabulary: Vocabulary):
        if model.role != "infiller":
            raise ValueError(f"Expected an infiller model, got role '{model.role}'")
        super().__init__(StyleLabel(model.style, int(model.metadata.get("style_index", 0))))
        self.model = model
        self.vocabulary = vocabulary

    def fill_template(self, request: InfillRequest) -> TokenSeq:
        """Fills every SLOT of the template.

        Raises:
            ConstraintFailure: If the shortest admissible output cannot fit the
                decoder's max_len.
        """
        self._check_style(request)
        template = request.template
        if template.slot_count == 0:
            return TokenSeq(template.tokens)
        constraint = TemplateConstraint(template, self.vocabulary, request.max_fill_length)
        shortest = len(template) + 2
        if shortest > self.model.config.max_len:
            raise ConstraintFailure(
                "Template cannot be filled within the decoder length budget",
                template=template.render(),
                max_len=self.model.config.max_len,
            )
        max_steps = min(constraint.max_steps, self.model.config.max_len - 1)
        src_ids = [*constraint.ids, self.vocabulary.eos_id]
        if request.beam > 1:
            hyps = beam_search(self.model.net, src_ids, self.vocabulary.bos_id, constraint, max_steps, request.beam)
            finished = [h for h in hyps if h.finished]
            best: Optional[Hypothesis] = finished[0] if finished else None
        else:
            rng = np.random.default_rng(request.seed) if request.temperature > 0 else None
            best = sample(self.model.net, src_ids, self.vocabulary.bos_id, constraint, max_steps, rng,
                          request.temperature)
            if not best.finished:
                best = None
        if best is None:
            raise ConstraintFailure("Constrained decoding did not place every template token",
                                    template=template.render())
        return TokenSeq(best.state[2])


def noise_sentence(seq: Sequence[str], rng: np.random.Generator) -> Template:
    """Replaces 1-3 non-overlapping spans (geometric lengths, mean 2, at most
    4 tokens) with SLOT and merges adjacent SLOTs."""
    n = len(seq)
    slotted = [False] * n
    wanted = int(rng.integers(1, MAX_NOISE_SPANS + 1))
    placed = 0
    for _ in range(wanted * 4):
        if placed == wanted:
            break
        length = min(int(rng.geometric(NOISE_SPAN_P)), MAX_NOISE_SPAN_LENGTH, n)
        start = int(rng.integers(0, n - length + 1))
        if any(slotted[start : start + length]):
            continue
        slotted[start : start + length] = [True] * length
        placed += 1
    tokens: list[str] = []
    for tok, is_slot in zip(seq, slotted):
        if not is_slot:
            tokens.append(tok)
        elif not tokens or tokens[-1] != SLOT:
            tokens.append(SLOT)
    return Template(tuple(tokens))


def noised_pairs(corpus: Sequence[TokenSeq], seed: int, copies: int = 1) -> list[tuple[Template, TokenSeq]]:
    """``copies`` noised templates per sentence, from one seeded stream."""
    rng = np.random.default_rng(seed)
    return [(noise_sentence(seq, rng), seq) for _ in range(copies) for seq in corpus]


def _collate(vocabulary: Vocabulary):
    def collate(batch: list[tuple[Template, TokenSeq]]) -> Seq2SeqBatch:
        src_ids, src_mask = pad_batch([[*vocabulary.encode(t.tokens), vocabulary.eos_id] for t, _ in batch],
                                      vocabulary.pad_id)
        targets = [vocabulary.encode(seq) for _, seq in batch]
        dec_ids, dec_mask = pad_batch([[vocabulary.bos_id, *t] for t in targets], vocabulary.pad_id)
        labels = pad_labels([[*t, vocabulary.eos_id] for t in targets], dec_ids.shape[1])
        return Seq2SeqBatch(src_ids, src_mask, dec_ids, dec_mask, labels)

    return collate


def train_infiller(
    corpus: Sequence[TokenSeq],
    style: StyleLabel,
    vocabulary: Vocabulary,
    model_config: Optional[ModelConfig] = None,
    train_config: Optional[TrainConfig] = None,
    seed: int = 0,
    copies: int = 4,
    min_corpus_size: int = MIN_INFILL_CORPUS,
) -> Seq2SeqInfiller:
    """Trains a denoising infiller on one style's corpus.

    Raises:
        DegenerateData: If the corpus has fewer than ``min_corpus_size``
            sentences.
    """
    if len(corpus) < min_corpus_size:
        raise DegenerateData("Infiller corpus is too small", style=style.name, size=len(corpus),
                             minimum=min_corpus_size)
    pairs = noised_pairs(corpus, seed, copies)
    model = new_model("infiller", vocabulary.hash, len(vocabulary), model_config or ModelConfig(), seed,
                      style=style.name)
    model.metadata.update(style_index=style.index, noise_copies=copies)
    result = train(model, pairs, _collate(vocabulary), train_config or TrainConfig(), seed)
    model.metadata["final_loss"] = result.final_loss
    logger.info("Infiller '%s' trained on %d noised pairs, final loss %.4f", style.name, len(pairs),
                result.final_loss)
    return Seq2SeqInfiller(model, vocabulary)


# ---------------------------------------------------------------------------
# n-gram infiller
# ---------------------------------------------------------------------------


class NgramInfiller(Infiller):
    """Backoff n-gram model over token surfaces.

    ``counts[context][token]`` holds counts for every context length from
    ``n - 1`` down to 0. Sentences are padded with ``n - 1`` BOS markers and
    end with EOS.
    """

    kind = "ngram"

    def __init__(self, n: int, style: StyleLabel, counts: dict[tuple[str, ...], Counter]):
        if n not in (2, 3):
            raise ValueError("n-gram order must be 2 or 3")
        super().__init__(style)
        self.n = n
        self.counts = counts

    def distribution(self, history: Sequence[str]) -> Counter:
        """Counts for the longest context seen in training (unigram last)."""
        padded = (BOS,) * (self.n - 1) + tuple(history)
        for order in range(self.n - 1, -1, -1):
            context = padded[len(padded) - order :] if order else ()
            if self.counts.get(context):
                return self.counts[context]
        return Counter()

    def _choose(self, history: list[str], closing: str, count: int, max_fill: int) -> Optional[str]:
        """Next fill token, or None to close the slot.

        After the first fill token the slot closes as soon as the closing
        token (or EOS) is among the most frequent continuations.
        """
        if count >= max_fill:
            return None
        dist = self.distribution(history)
        top = max(dist.values(), default=0)
        if count >= 1 and any(dist.get(t, 0) == top > 0 for t in (closing, EOS)):
            return None
        ranked = sorted(dist.items(), key=lambda kv: (-kv[1], kv[0]))
        for token, _ in ranked:
            if token not in (closing, EOS):
                return token
        if count >= 1:
            return None
        # An empty slot must get at least one token; fall back to the unigram table.
        for token, _ in sorted(self.counts.get((), Counter()).items(), key=lambda kv: (-kv[1], kv[0])):
            if token not in (closing, EOS):
                return token
        return None

    def fill_template(self, request: InfillRequest) -> TokenSeq:
        self._check_style(request)
        tokens = request.template.tokens
        out: list[str] = []
        for index, tok in enumerate(tokens):
            if tok != SLOT:
                out.append(tok)
                continue
            closing = tokens[index + 1] if index + 1 < len(tokens) else EOS
            count = 0
            while True:
                choice = self._choose(out, closing, count, request.max_fill_length)
                if choice is None:
                    break
                out.append(choice)
                count += 1
        return TokenSeq(tuple(out))

    def to_text(self) -> str:
        lines = [f"{NGRAM_HEADER}\tn={self.n}\tstyle={self.style.name}\tindex={self.style.index}"]
        for context in sorted(self.counts):
            for token, count in sorted(self.counts[context].items()):
                lines.append(f"{' '.join(context)}\t{token}\t{count}")
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "NgramInfiller":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        header = lines[0].split("\t") if lines else []
        if len(header) != 4 or header[0] != NGRAM_HEADER:
            raise FormatError("Bad n-gram model header", path=str(path))
        try:
            fields = dict(part.split("=", 1) for part in header[1:])
            n, style = int(fields["n"]), StyleLabel(fields["style"], int(fields["index"]))
        except (KeyError, ValueError) as e:
            raise FormatError("Bad n-gram model header", path=str(path), detail=str(e)) from e
        counts: dict[tuple[str, ...], Counter] = defaultdict(Counter)
        for line_no, line in enumerate(lines[1:], start=2):
            parts = line.split("\t")
            if len(parts) != 3 or not parts[2].isdigit():
                raise FormatError("Malformed n-gram line", path=str(path), line=line_no)
            context = tuple(parts[0].split()) if parts[0] else ()
            counts[context][parts[1]] = int(parts[2])
        return cls(n, style, dict(counts))


def build_ngram_infiller(corpus: Sequence[TokenSeq], n: int, style: StyleLabel) -> NgramInfiller:
    """Counts n-grams of every order up to ``n`` over the corpus.

    Raises:
        DegenerateData: If the corpus is empty.
    """
    if not corpus:
        raise DegenerateData("Cannot build an n-gram model from an empty corpus", style=style.name)
    counts: dict[tuple[str, ...], Counter] = defaultdict(Counter)
    for seq in corpus:
        padded = (BOS,) * (n - 1) + tuple(seq) + (EOS,)
        for i in range(n - 1, len(padded)):
            for order in range(n):
                counts[padded[i - order : i]][padded[i]] += 1
    return NgramInfiller(n, style, dict(counts))
