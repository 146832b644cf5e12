"""Synthetic multilingual corpora with controlled word-order divergence.

Each toy language relabels a shared base symbol space into its own disjoint
surface vocabulary and permutes word order with a fixed transform
(identity, reversal, or rotation).  Translation between any two languages
is therefore an exact, invertible function, which gives evaluation perfect
references and lets zero-shot behavior be measured directly: trained pairs
all include the hub language, the remaining pairs appear only in test data.
"""

from dataclasses import dataclass, field

import numpy as np

from .corpus import ConfigError


class VocabularyError(ValueError):
    """A token does not belong to the expected surface vocabulary."""


@dataclass(frozen=True)
class OrderTransform:
    """identity | reverse | rotate(k): a bijection on token positions."""

    kind: str
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("identity", "reverse", "rotate"):
            raise ConfigError(f"unknown transform {self.kind!r}")

    def apply(self, seq):
        seq = list(seq)
        if self.kind == "identity":
            return seq
        if self.kind == "reverse":
            return seq[::-1]
        if not seq:
            raise ValueError("rotate needs a non-empty sequence")
        k = self.k % len(seq)
        return seq[k:] + seq[:k]

    def invert(self, seq):
        if self.kind != "rotate":
            return self.apply(seq)
        seq = list(seq)
        if not seq:
            raise ValueError("rotate needs a non-empty sequence")
        k = (-self.k) % len(seq)
        return seq[k:] + seq[:k]

    def __str__(self):
        return f"rotate:{self.k}" if self.kind == "rotate" else self.kind

    @classmethod
    def parse(cls, text):
        if text.startswith("rotate:"):
            return cls("rotate", int(text.split(":", 1)[1]))
        return cls(text)


@dataclass
class ToyLanguage:
    """A language code, its order transform, and its symbol relabeling.

    Surface tokens are the language letter plus a fixed-width symbol
    number ("b17"), so vocabularies of different languages never share a
    whole word, while joint subword learning can still discover the shared
    number parts across languages - the same bridge a merged natural-
    language vocabulary provides.
    """

    code: str
    transform: OrderTransform
    base_vocab: int

    _OFFSET = 10  # keeps every symbol number two digits wide

    def surface(self, base_id):
        return f"{self.code.lower()}{base_id + self._OFFSET}"

    def base_of(self, token):
        prefix = self.code.lower()
        if token.startswith(prefix):
            try:
                base = int(token[len(prefix):]) - self._OFFSET
            except ValueError:
                base = -1
            if 0 <= base < self.base_vocab:
                return base
        raise VocabularyError(f"token {token!r} is not in the surface "
                              f"vocabulary of language {self.code}")

    def render(self, base_ids):
        return [self.surface(i) for i in self.transform.apply(base_ids)]

    def recover(self, tokens):
        return self.transform.invert([self.base_of(t) for t in tokens])


@dataclass
class ToyCorpusSpec:
    """Corpus shape: hub-star trained pairs, held-out zero-shot pairs."""

    transforms: dict = field(default_factory=lambda: {
        "A": OrderTransform("identity"),
        "B": OrderTransform("reverse"),
        "C": OrderTransform("rotate", 1),
    })
    hub: str = "A"
    base_vocab: int = 50
    min_len: int = 3
    max_len: int = 10
    sentences_per_pair: int = 2000
    val_sentences: int = 200
    test_sentences: int = 200
    seed: int = 1

    def __post_init__(self):
        if self.hub not in self.transforms:
            raise ConfigError(f"hub {self.hub!r} is not a configured "
                              f"language")
        if not 0 < self.min_len <= self.max_len:
            raise ConfigError("bad sentence length range")

    @property
    def languages(self):
        return tuple(sorted(self.transforms))

    def language(self, code):
        return ToyLanguage(code, self.transforms[code], self.base_vocab)

    @property
    def trained_pairs(self):
        """Undirected hub pairs as (hub, other) tuples."""
        return tuple((self.hub, l) for l in self.languages
                     if l != self.hub)

    @property
    def trained_directions(self):
        out = []
        for a, b in self.trained_pairs:
            out.extend([(a, b), (b, a)])
        return tuple(out)

    @property
    def zero_shot_pairs(self):
        """Undirected non-hub pairs, sorted."""
        spokes = [l for l in self.languages if l != self.hub]
        return tuple((a, b) for i, a in enumerate(spokes)
                     for b in spokes[i + 1:])

    @property
    def zero_shot_directions(self):
        out = []
        for a, b in self.zero_shot_pairs:
            out.extend([(a, b), (b, a)])
        return tuple(out)

    def to_config(self):
        lines = [f"languages = {','.join(self.languages)}",
                 f"hub = {self.hub}"]
        for code in self.languages:
            lines.append(f"transform.{code} = {self.transforms[code]}")
        for name in ("base_vocab", "min_len", "max_len",
                     "sentences_per_pair", "val_sentences",
                     "test_sentences", "seed"):
            lines.append(f"{name} = {getattr(self, name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, text):
        values = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"bad config line {raw!r}")
            values[key.strip()] = value.strip()
        languages = [l for l in values.pop("languages", "").split(",") if l]
        if not languages:
            raise ConfigError("config must list languages")
        transforms = {}
        for code in languages:
            transforms[code] = OrderTransform.parse(
                values.pop(f"transform.{code}", "identity"))
        kwargs = {"transforms": transforms}
        if "hub" in values:
            kwargs["hub"] = values.pop("hub")
        for name in ("base_vocab", "min_len", "max_len",
                     "sentences_per_pair", "val_sentences",
                     "test_sentences", "seed"):
            if name in values:
                kwargs[name] = int(values.pop(name))
        if values:
            raise ConfigError(f"unknown config keys: {sorted(values)}")
        return cls(**kwargs)


def transform_sequence(transform, seq):
    return transform.apply(seq)


def oracle_translate(spec, src_lang, tgt_lang, tokens):
    """Exact translation: invert the source maps, apply the target maps."""
    base = spec.language(src_lang).recover(tokens)
    return spec.language(tgt_lang).render(base)


@dataclass
class ToyCorpus:
    """Generated splits: (split, (a, b)) -> (side-a sentences, side-b)."""

    spec: ToyCorpusSpec
    splits: dict

    def sides(self, split, pair):
        return self.splits[(split, tuple(pair))]

    def directed(self, split, direction):
        """(src sentences, ref sentences) for one direction."""
        src_lang, tgt_lang = direction
        pair = (src_lang, tgt_lang)
        if pair in {k[1] for k in self.splits if k[0] == split}:
            a, b = self.sides(split, pair)
            return a, b
        b, a = self.sides(split, (tgt_lang, src_lang))
        return a, b


def generate_parallel_corpus(spec):
    """Sample aligned surface corpora for every pair and split.

    Trained pairs get train/val/test splits; zero-shot pairs only test.
    Sentences are i.i.d. uniform base symbols, deterministic per seed.
    """
    splits = {}
    sizes = {"train": spec.sentences_per_pair, "val": spec.val_sentences,
             "test": spec.test_sentences}
    split_ids = {"train": 0, "val": 1, "test": 2}

    def sample(pair, split, n):
        a, b = pair
        rng = np.random.default_rng(
            [spec.seed, split_ids[split], hash_code(a), hash_code(b)])
        lang_a = spec.language(a)
        lang_b = spec.language(b)
        sents_a, sents_b = [], []
        for _ in range(n):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            base = [int(x) for x in rng.integers(0, spec.base_vocab,
                                                 size=length)]
            sents_a.append(lang_a.render(base))
            sents_b.append(lang_b.render(base))
        splits[(split, pair)] = (sents_a, sents_b)

    for pair in spec.trained_pairs:
        for split in ("train", "val", "test"):
            sample(pair, split, sizes[split])
    for pair in spec.zero_shot_pairs:
        sample(pair, "test", sizes["test"])
    return ToyCorpus(spec=spec, splits=splits)


def hash_code(code):
    from zlib import crc32
    return crc32(code.encode("utf-8"))


def write_corpus(corpus, out_dir):
    """Write every split as aligned .src/.tgt files plus the spec config."""
    from pathlib import Path

    from .corpus import write_token_lines

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (split, (a, b)), (sents_a, sents_b) in sorted(corpus.splits.items()):
        write_token_lines(out / f"{split}.{a}-{b}.src", sents_a)
        write_token_lines(out / f"{split}.{a}-{b}.tgt", sents_b)
    (out / "toy.cfg").write_text(corpus.spec.to_config(), encoding="utf-8")
    return out
