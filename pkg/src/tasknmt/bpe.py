"""Byte-pair encoding learned jointly over the merged corpus.

Words start as character symbols plus a separate end-of-word marker symbol;
learning repeatedly merges the most frequent adjacent pair (ties break to
the lexicographically smallest pair) and stops at the merge budget, or once
no remaining pair occurs at least twice.  Application replays the merge
rules in learned order; non-final subwords carry the ``@@`` continuation
suffix seen in the corpus files.
"""

from dataclasses import dataclass, field

MARKER = "</w>"
CONTINUATION = "@@"
FORMAT_TAG = "bpe-v1"


class MalformedStreamError(ValueError):
    """A subword stream ends with a dangling continuation marker."""


@dataclass
class BpeModel:
    """An ordered merge-rule list; order is learning order."""

    rules: list = field(default_factory=list)  # [(left, right), ...]
    marker: str = MARKER
    version: str = FORMAT_TAG

    def __post_init__(self):
        if len(set(self.rules)) != len(self.rules):
            raise ValueError("duplicate merge rule")

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.version + "\n")
            for left, right in self.rules:
                f.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            tag = f.readline().rstrip("\n")
            if tag != FORMAT_TAG:
                raise ValueError(f"{path} is not a {FORMAT_TAG} file "
                                 f"(got {tag!r})")
            rules = []
            for line in f:
                left, sep, right = line.rstrip("\n").partition(" ")
                if not sep or not left or not right:
                    raise ValueError(f"bad merge rule line {line!r}")
                rules.append((left, right))
        return cls(rules=rules)


def _symbols(word):
    return tuple(word) + (MARKER,)


def _merge_word(symbols, pair):
    """Replace non-overlapping occurrences of ``pair``, left to right."""
    left, right = pair
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def _pairs_of(symbols):
    return [(symbols[i], symbols[i + 1]) for i in range(len(symbols) - 1)]


def learn_bpe(word_freqs, num_merges):
    """Learn up to ``num_merges`` rules from a word frequency map.

    Pair statistics are maintained incrementally: each merge touches only
    the words it occurs in.  After a merge, learning stops early once no
    remaining pair reaches a count of two.
    """
    words = [( _symbols(w), int(f)) for w, f in sorted(word_freqs.items())
             if w]
    stats = {}
    where = {}  # pair -> set of word indices containing it
    for idx, (symbols, freq) in enumerate(words):
        for pair in _pairs_of(symbols):
            stats[pair] = stats.get(pair, 0) + freq
            where.setdefault(pair, set()).add(idx)

    rules = []
    while len(rules) < int(num_merges) and stats:
        best = min(stats.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        for idx in sorted(where.get(best, ())):
            symbols, freq = words[idx]
            merged = _merge_word(symbols, best)
            for pair in _pairs_of(symbols):
                stats[pair] -= freq
                if stats[pair] <= 0:
                    del stats[pair]
                    where.pop(pair, None)
            for pair in set(_pairs_of(symbols)):
                bucket = where.get(pair)
                if bucket is not None:
                    bucket.discard(idx)
            for pair in _pairs_of(merged):
                stats[pair] = stats.get(pair, 0) + freq
                where.setdefault(pair, set()).add(idx)
            words[idx] = (merged, freq)
        rules.append(best)
        if not stats or max(stats.values()) < 2:
            break
    return BpeModel(rules=rules)


def apply_bpe(model, word):
    """Segment one whitespace-free word into @@-continued subwords."""
    if not word or any(c.isspace() for c in word):
        raise ValueError(f"apply_bpe needs a non-empty word without "
                         f"whitespace, got {word!r}")
    symbols = _symbols(word)
    for rule in model.rules:
        if len(symbols) == 1:
            break
        symbols = _merge_word(symbols, rule)
    if symbols[-1] == model.marker:
        symbols = symbols[:-1]
    elif symbols[-1].endswith(model.marker):
        symbols = symbols[:-1] + (symbols[-1][:-len(model.marker)],)
    out = [s + CONTINUATION for s in symbols[:-1]]
    final = symbols[-1]
    if final.endswith(CONTINUATION):
        # a literal trailing "@@" would read as a dangling continuation;
        # split its last character off so decoding stays unambiguous
        out.append(final[:-1] + CONTINUATION)
        out.append(final[-1])
    else:
        out.append(final)
    return out


def decode_bpe(tokens, strict=True):
    """Join @@-continued subwords back into words (inverse of apply).

    A dangling continuation on the final token raises unless
    ``strict=False``, which keeps the partial word (useful when scoring
    model output that may end mid-word).
    """
    words = []
    partial = ""
    dangling = False
    for tok in tokens:
        if tok.endswith(CONTINUATION):
            partial += tok[:-len(CONTINUATION)]
            dangling = True
        else:
            words.append(partial + tok)
            partial = ""
            dangling = False
    if dangling:
        if strict:
            raise MalformedStreamError(
                "subword stream ends with a dangling continuation marker")
        if partial:
            words.append(partial)
    return words


class BpeApplier:
    """Sentence-level application with a per-word memo."""

    def __init__(self, model):
        self.model = model
        self._cache = {}

    def word(self, word):
        out = self._cache.get(word)
        if out is None:
            out = self._cache[word] = apply_bpe(self.model, word)
        return out

    def sentence(self, tokens):
        out = []
        for tok in tokens:
            out.extend(self.word(tok))
        return out


def word_freqs(token_lines):
    """Token frequency map over an iterable of token lists."""
    freqs = {}
    for tokens in token_lines:
        for tok in tokens:
            freqs[tok] = freqs.get(tok, 0) + 1
    return freqs
