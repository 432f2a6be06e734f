"""Generator for small two-style corpora with known structure.

Sentences come from shared style-agnostic scaffolds whose style slots are
filled from disjoint per-style lexicons, so a classifier can separate the
styles perfectly and every test sentence has an exact opposite-style
reference (same scaffold, same neutral words, aligned lexicon entries).

Layout written to the output directory::

    train.<style>.txt  valid.<style>.txt  test.<style>.txt
    test.<style>.ref.txt   # opposite-style reference for each test line
"""

import os
from dataclasses import dataclass
from typing import Union

import numpy as np

from unstract.lewis.utils import LewisUtils

logger = LewisUtils.get_logger(__name__)

_POSITIVE_ADJ = (
    "great amazing excellent wonderful fantastic delicious friendly awesome perfect lovely superb terrific "
    "outstanding brilliant pleasant fresh tasty charming incredible marvelous splendid fabulous stellar spotless "
    "cozy generous helpful attentive gorgeous heavenly impressive phenomenal remarkable satisfying superior "
    "welcoming exquisite flawless divine sublime glorious cheerful"
).split()
_NEGATIVE_ADJ = (
    "terrible awful horrible disgusting rude bland dirty stale cold greasy mediocre disappointing gross nasty "
    "lousy pathetic dreadful unpleasant soggy overpriced slow filthy inedible atrocious abysmal subpar unfriendly "
    "careless rotten noisy crappy poor tasteless burnt sloppy miserable shabby appalling dismal inferior gloomy "
    "hostile"
).split()
_POSITIVE_VERB = "loved enjoyed adored liked appreciated savored praised cherished".split()
_NEGATIVE_VERB = "hated disliked loathed regretted despised resented criticized detested".split()

_POLITE_MARK = (
    "please kindly gladly graciously respectfully thankfully humbly gently warmly sincerely politely courteously "
    "patiently considerately cordially tactfully"
).split()
_IMPOLITE_MARK = (
    "now immediately whatever seriously honestly obviously finally already quickly instantly clearly frankly "
    "bluntly rudely impatiently angrily"
).split()
_POLITE_ADJ = (
    "appreciated helpful thoughtful wonderful lovely kind generous gracious considerate pleasant patient "
    "splendid valuable respectful excellent delightful superb brilliant"
).split()
_IMPOLITE_ADJ = (
    "stupid useless ridiculous lazy clueless pointless worthless idiotic absurd sloppy incompetent annoying "
    "pathetic careless hopeless terrible awful lousy"
).split()
_POLITE_VERB = "appreciate welcome value thank respect treasure cherish await".split()
_IMPOLITE_VERB = "demand expect need want require insist order command".split()

_SENTIMENT_NOUNS = (
    "food service staff pizza burger coffee room menu waiter place pasta salad dessert soup steak sandwich "
    "breakfast lunch dinner bar patio price manager hotel bed"
).split()
_OFFICE_NOUNS = (
    "report file draft invoice schedule summary update email meeting document budget slides contract list "
    "proposal plan review notes agenda memo"
).split()

_SENTIMENT_SCAFFOLDS = (
    "the {N} was {A} .",
    "the {N} here is {A} !",
    "we had {A} {N} and {A} {N} .",
    "i {V} the {N} at this place .",
    "the {N} was {A} and the {N} was {A} .",
    "our {N} came out {A} .",
    "what a {A} {N} .",
    "honestly the {N} is {A} .",
    "i {V} the {A} {N} .",
    "my {N} tasted {A} tonight .",
    "this is {A} {A}",
    "the {N} and the {N} were {A} .",
)
_POLITENESS_SCAFFOLDS = (
    "{M} send me the {N} .",
    "could you {M} check the {N} ?",
    "your {N} is {A} .",
    "{M} fix the {N} by friday .",
    "i {V} an update on the {N} .",
    "the {N} you sent was {A} .",
    "{M} , review the {N} and the {N} .",
    "that {N} was {A} , {M} redo it .",
    "we {V} the {N} before monday .",
    "{M} share the {A} {N} with the team .",
)


@dataclass(frozen=True)
class ToyTask:
    """A two-style task: lexicons per slot kind as (first style, second style)
    word lists of equal length, aligned by index."""

    styles: tuple[str, str]
    scaffolds: tuple[str, ...]
    nouns: tuple[str, ...]
    lexicons: dict

    def lexicon_size(self, style_index: int) -> int:
        return sum(len(pair[style_index]) for pair in self.lexicons.values())


TASKS = {
    "sentiment": ToyTask(
        styles=("negative", "positive"),
        scaffolds=_SENTIMENT_SCAFFOLDS,
        nouns=tuple(_SENTIMENT_NOUNS),
        lexicons={"A": (_NEGATIVE_ADJ, _POSITIVE_ADJ), "V": (_NEGATIVE_VERB, _POSITIVE_VERB)},
    ),
    "politeness": ToyTask(
        styles=("impolite", "polite"),
        scaffolds=_POLITENESS_SCAFFOLDS,
        nouns=tuple(_OFFICE_NOUNS),
        lexicons={
            "M": (_IMPOLITE_MARK, _POLITE_MARK),
            "A": (_IMPOLITE_ADJ, _POLITE_ADJ),
            "V": (_IMPOLITE_VERB, _POLITE_VERB),
        },
    ),
}


def generate_parallel(task: ToyTask, count: int, rng: np.random.Generator) -> list[tuple[str, str]]:
    """``count`` aligned (first style, second style) sentence pairs."""
    pairs = []
    for _ in range(count):
        scaffold = task.scaffolds[int(rng.integers(len(task.scaffolds)))]
        sides: tuple[list[str], list[str]] = ([], [])
        for word in scaffold.split():
            key = word[1:-1] if word.startswith("{") and word.endswith("}") else None
            if key == "N":
                noun = task.nouns[int(rng.integers(len(task.nouns)))]
                sides[0].append(noun)
                sides[1].append(noun)
            elif key in task.lexicons:
                first, second = task.lexicons[key]
                k = int(rng.integers(min(len(first), len(second))))
                sides[0].append(first[k])
                sides[1].append(second[k])
            else:
                sides[0].append(word)
                sides[1].append(word)
        pairs.append((" ".join(sides[0]), " ".join(sides[1])))
    return pairs


def make_toy_corpus(
    out_dir: Union[str, os.PathLike],
    task: str = "sentiment",
    train_size: int = 5000,
    valid_size: int = 500,
    test_size: int = 500,
    seed: int = 0,
) -> dict[str, str]:
    """Writes a toy two-style corpus and returns the written paths by name
    (``train.negative``, ``test.positive.ref``, ...)."""
    if task not in TASKS:
        raise ValueError(f"Unknown toy task '{task}', expected one of {sorted(TASKS)}")
    spec = TASKS[task]
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    first, second = spec.styles
    files: dict[str, list[str]] = {}
    for split, size in (("train", train_size), ("valid", valid_size)):
        # Independent draws per style keep the training data non-parallel.
        files[f"{split}.{first}"] = [a for a, _ in generate_parallel(spec, size, rng)]
        files[f"{split}.{second}"] = [b for _, b in generate_parallel(spec, size, rng)]
    test_pairs = generate_parallel(spec, test_size, rng)
    files[f"test.{first}"] = [a for a, _ in test_pairs]
    files[f"test.{second}"] = [b for _, b in test_pairs]
    files[f"test.{first}.ref"] = [b for _, b in test_pairs]
    files[f"test.{second}.ref"] = [a for a, _ in test_pairs]
    paths = {}
    for name, lines in files.items():
        path = os.path.join(out_dir, f"{name}.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        paths[name] = path
    logger.info("Toy '%s' corpus written to %s (%d train sentences per style)", task, out_dir, train_size)
    return paths
