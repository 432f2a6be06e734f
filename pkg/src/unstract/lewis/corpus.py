"""Tokenization, vocabulary management and dataset IO for style-labeled
corpora.

Corpora are UTF-8 text, one example per line, one file per style per split.
Tokens are lowercased whitespace tokens with trailing punctuation split off,
which keeps Levenshtein edit scripts readable.
"""

import os
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Union

from unstract.lewis.exceptions import EmptyCorpus, EmptyInput, FormatError
from unstract.lewis.utils import LewisUtils

VOCAB_HEADER = "LEWIS-VOCAB v1"
DEFAULT_MAX_LEN = 128

PAD = "<PAD>"
UNK = "<UNK>"
BOS = "<BOS>"
EOS = "<EOS>"
SEP = "<SEP>"
MASK = "<MASK>"
SLOT = "SLOT"
CLS = "<CLS>"
FILL_SEP = "<FSEP>"
STYLE_MARKERS = ("<STYLE0>", "<STYLE1>")

# Upper-case surfaces never survive the lowercasing tokenizer, so natural
# text cannot collide with them.
SPECIALS = (PAD, UNK, BOS, EOS, SEP, MASK, SLOT, CLS, FILL_SEP, *STYLE_MARKERS)

logger = LewisUtils.get_logger(__name__)


@dataclass(frozen=True)
class Token:
    surface: str
    id: int


@dataclass(frozen=True)
class TokenSeq:
    """An ordered sequence of token surfaces."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, item):
        return self.tokens[item]

    @property
    def text(self) -> str:
        return detokenize(self)

    @classmethod
    def of(cls, text: str) -> "TokenSeq":
        """Builds a sequence from already-tokenized, space-separated text
        (specials such as ``SLOT`` or ``<MASK>`` are kept verbatim)."""
        return cls(tuple(text.split()))


@dataclass(frozen=True)
class StyleLabel:
    """One of the two styles of a task; ``index`` selects the style marker."""

    name: str
    index: int

    @property
    def marker(self) -> str:
        return STYLE_MARKERS[self.index]


@dataclass(frozen=True)
class TaskStyles:
    """The two styles of a task configuration."""

    first: StyleLabel
    second: StyleLabel

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "TaskStyles":
        if len(names) != 2 or names[0] == names[1]:
            raise ValueError("A task needs exactly two distinct style names")
        return cls(StyleLabel(names[0], 0), StyleLabel(names[1], 1))

    def __iter__(self):
        return iter((self.first, self.second))

    def by_index(self, index: int) -> StyleLabel:
        return (self.first, self.second)[index]

    def by_name(self, name: str) -> StyleLabel:
        for label in self:
            if label.name == name:
                return label
        raise KeyError(name)

    def other(self, label: StyleLabel) -> StyleLabel:
        return self.second if label.index == 0 else self.first


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _split_word(word: str) -> list[str]:
    core, tail = word, []
    while len(core) > 1 and _is_punct(core[-1]):
        tail.append(core[-1])
        core = core[:-1]
    return [core, *reversed(tail)]


def tokenize(text: str) -> TokenSeq:
    """Lowercases, splits on whitespace and separates trailing punctuation.

    Args:
        text (str): Raw UTF-8 text.

    Returns:
        TokenSeq: The tokens, in order.

    Raises:
        EmptyInput: If nothing remains after normalization.
    """
    tokens: list[str] = []
    for word in text.lower().split():
        tokens.extend(_split_word(word))
    if not tokens:
        raise EmptyInput("Text is empty after normalization", text=text)
    return TokenSeq(tuple(tokens))


def detokenize(seq: Union[TokenSeq, Iterable[str]]) -> str:
    return " ".join(seq)


class Vocabulary:
    """Immutable bijection between token surfaces and ids.

    Specials occupy the first ids in a fixed order; content tokens follow in
    descending frequency, ties broken lexicographically.
    """

    def __init__(self, surfaces: Sequence[str], counts: Sequence[int]):
        if tuple(surfaces[: len(SPECIALS)]) != SPECIALS:
            raise FormatError("Vocabulary must start with the special tokens in canonical order")
        if len(set(surfaces)) != len(surfaces):
            raise FormatError("Vocabulary surfaces must be unique")
        self.surfaces = tuple(surfaces)
        self.counts = tuple(int(c) for c in counts)
        self._index = {s: i for i, s in enumerate(self.surfaces)}
        self.pad_id = self._index[PAD]
        self.unk_id = self._index[UNK]
        self.bos_id = self._index[BOS]
        self.eos_id = self._index[EOS]
        self.sep_id = self._index[SEP]
        self.mask_id = self._index[MASK]
        self.slot_id = self._index[SLOT]
        self.cls_id = self._index[CLS]
        self.fill_sep_id = self._index[FILL_SEP]
        self.style_ids = tuple(self._index[m] for m in STYLE_MARKERS)
        self.num_specials = len(SPECIALS)
        self._hash = LewisUtils.sha256_bytes(self.to_bytes())

    def __len__(self):
        return len(self.surfaces)

    def __contains__(self, surface: str):
        return surface in self._index

    @property
    def hash(self) -> str:
        return self._hash

    def token(self, surface: str) -> Token:
        return Token(surface, self._index.get(surface, self.unk_id))

    def id_of(self, surface: str) -> int:
        return self._index.get(surface, self.unk_id)

    def surface_of(self, token_id: int) -> str:
        return self.surfaces[token_id]

    def is_special(self, token_id: int) -> bool:
        return token_id < self.num_specials

    def content_ids(self) -> range:
        return range(self.num_specials, len(self.surfaces))

    def encode(self, seq: Iterable[str]) -> list[int]:
        return [self._index.get(s, self.unk_id) for s in seq]

    def decode(self, ids: Iterable[int]) -> TokenSeq:
        return TokenSeq(tuple(self.surfaces[int(i)] for i in ids))

    def to_bytes(self) -> bytes:
        lines = [VOCAB_HEADER]
        lines.extend(f"{i}\t{s}\t{c}" for i, (s, c) in enumerate(zip(self.surfaces, self.counts)))
        return ("\n".join(lines) + "\n").encode("utf-8")

    def save(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        if not lines or lines[0] != VOCAB_HEADER:
            raise FormatError("Bad vocabulary header", path=str(path))
        surfaces, counts = [], []
        for expected_id, line in enumerate(lines[1:]):
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0].isdigit() or int(parts[0]) != expected_id:
                raise FormatError("Malformed vocabulary line", path=str(path), line=expected_id + 2)
            surfaces.append(parts[1])
            counts.append(int(parts[2]))
        return cls(surfaces, counts)


def build_vocabulary(files: Sequence[Union[str, os.PathLike]], min_count: int = 1) -> Vocabulary:
    """Builds a deterministic vocabulary from corpus files.

    Args:
        files (list): Corpus paths, one example per line.
        min_count (int): Minimum frequency for a token to get its own id.

    Returns:
        Vocabulary: Specials first, then tokens by frequency desc, surface asc.

    Raises:
        EmptyCorpus: If the files contain no tokens at all.
    """
    counter: Counter = Counter()
    for path in files:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    counter.update(tokenize(line))
    if not counter:
        raise EmptyCorpus("Corpus contains no tokens", files=[str(p) for p in files])
    content = sorted((s for s, c in counter.items() if c >= min_count), key=lambda s: (-counter[s], s))
    logger.info("Vocabulary built: %d content tokens (min_count=%d)", len(content), min_count)
    return Vocabulary([*SPECIALS, *content], [0] * len(SPECIALS) + [counter[s] for s in content])


class StyleCorpus:
    """A re-iterable stream of ``(TokenSeq, StyleLabel)`` examples read from
    one style file.

    Lines longer than ``max_len`` tokens are truncated; the number of
    truncated lines is available as ``truncated`` after a full pass.
    """

    def __init__(self, path: Union[str, os.PathLike], label: StyleLabel, max_len: int = DEFAULT_MAX_LEN):
        self.path = str(path)
        self.label = label
        self.max_len = max_len
        self.truncated = 0

    def iter_with_lines(self) -> Iterator[tuple[int, TokenSeq, StyleLabel]]:
        self.truncated = 0
        with open(self.path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    logger.debug("Skipping blank line %s:%d", self.path, line_no)
                    continue
                seq = tokenize(line)
                if len(seq) > self.max_len:
                    self.truncated += 1
                    seq = TokenSeq(seq.tokens[: self.max_len])
                yield line_no, seq, self.label
        if self.truncated:
            logger.info("%s: truncated %d line(s) to %d tokens", self.path, self.truncated, self.max_len)

    def __iter__(self) -> Iterator[tuple[TokenSeq, StyleLabel]]:
        for _, seq, label in self.iter_with_lines():
            yield seq, label


def load_style_corpus(
    path: Union[str, os.PathLike], label: StyleLabel, max_len: int = DEFAULT_MAX_LEN
) -> StyleCorpus:
    return StyleCorpus(path, label, max_len=max_len)


def read_sequences(path: Union[str, os.PathLike], max_len: Optional[int] = DEFAULT_MAX_LEN) -> list[TokenSeq]:
    """Reads every non-blank line of a file as a TokenSeq."""
    seqs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                seq = tokenize(line)
                seqs.append(TokenSeq(seq.tokens[:max_len]) if max_len else seq)
    return seqs
