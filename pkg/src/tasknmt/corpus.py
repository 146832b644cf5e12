"""Parallel-data pipeline: task tokens, vocabularies, task-homogeneous batches.

The source side of every training sentence is bracketed by task tokens
(``<ToEn> ... <ToEn>`` style) so both encoder directions see the task early;
the source-specific variant adds one extra leading selector token that is
stripped again before the model ever sees the sentence.  Batches are packed
greedily in stream order and flushed whenever the task changes, so one graph
with one attention parameter set serves every sentence in a batch.
"""

import re
from dataclasses import dataclass

import numpy as np

from .model import TaskKey, task_key_for_direction

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

_TOKEN_RE = re.compile(r"[^\s.,:;!?]+|[.,:;!?]")


class AlignmentError(ValueError):
    """Two sides of a parallel corpus disagree in length."""


class ParseError(ValueError):
    """A sentence does not match the expected task-token grammar."""


class ConfigError(ValueError):
    """A language or direction is outside the configured set."""


class OversizeExampleError(ValueError):
    """A single example exceeds the batch token cap."""


def tokenize(line):
    """Whitespace split with `.,:;!?` separated into standalone tokens."""
    return _TOKEN_RE.findall(line)


def detokenize(tokens):
    """Inverse of :func:`tokenize` up to spacing: punctuation reattaches."""
    out = []
    for tok in tokens:
        if out and len(tok) == 1 and tok in ".,:;!?":
            out[-1] += tok
        else:
            out.append(tok)
    return " ".join(out)


def target_token(lang):
    return f"<To{lang}>"


def source_token(lang):
    return f"<From{lang}>"


def pair_token(src, tgt):
    return f"<{src}{tgt}>"


def task_token_inventory(variant, languages, directions):
    """All control tokens a variant can place on the source side."""
    languages = sorted(languages)
    if variant in ("shared", "target"):
        return [target_token(l) for l in languages]
    if variant == "source":
        return ([source_token(l) for l in languages]
                + [target_token(l) for l in languages])
    if variant == "paired":
        return [pair_token(s, t) for s, t in sorted(directions)]
    raise ConfigError(f"unknown variant {variant!r}")


def augment_task_tokens(variant, direction, tokens, languages):
    """Bracket a tokenized source sentence with its task tokens."""
    src, tgt = direction
    if src not in languages or tgt not in languages:
        raise ConfigError(f"direction {src}->{tgt} outside configured "
                          f"languages {sorted(languages)}")
    if variant in ("shared", "target"):
        return [target_token(tgt)] + list(tokens) + [target_token(tgt)]
    if variant == "source":
        return ([source_token(src), target_token(tgt)] + list(tokens)
                + [target_token(tgt)])
    if variant == "paired":
        tok = pair_token(src, tgt)
        return [tok] + list(tokens) + [tok]
    raise ConfigError(f"unknown variant {variant!r}")


def _parse_target_token(token, languages):
    m = re.fullmatch(r"<To(.+)>", token)
    if m and m.group(1) in languages:
        return m.group(1)
    return None


def _parse_source_token(token, languages):
    m = re.fullmatch(r"<From(.+)>", token)
    if m and m.group(1) in languages:
        return m.group(1)
    return None


def _parse_pair_token(token, languages):
    m = re.fullmatch(r"<(.+)>", token)
    if not m:
        return None
    body = m.group(1)
    hits = [(s, t) for s in languages for t in languages
            if s != t and s + t == body]
    return hits[0] if len(hits) == 1 else None


def strip_attention_selector(variant, tokens, languages):
    """Derive the TaskKey from the leading tokens; drop selector-only ones.

    Only the source-specific variant carries a token that exists purely to
    select parameters; after dropping it the sentence is identical to the
    target-specific form.  Returns ``(key, model_tokens)``.
    """
    if not tokens:
        raise ParseError("empty sentence has no task tokens")
    head = tokens[0]
    if variant in ("shared", "target"):
        tgt = _parse_target_token(head, languages)
        if tgt is None:
            raise ParseError(f"expected a <To...> task token, got {head!r}")
        return TaskKey.target(tgt), list(tokens)
    if variant == "source":
        src = _parse_source_token(head, languages)
        if src is None:
            raise ParseError(f"expected a <From...> selector token, got "
                             f"{head!r}")
        if len(tokens) < 2 or \
                _parse_target_token(tokens[1], languages) is None:
            nxt = tokens[1] if len(tokens) > 1 else "<nothing>"
            raise ParseError(f"expected a <To...> token after the selector, "
                             f"got {nxt!r}")
        return TaskKey.source(src), list(tokens[1:])
    if variant == "paired":
        pair = _parse_pair_token(head, languages)
        if pair is None:
            raise ParseError(f"expected a language-pair task token, got "
                             f"{head!r}")
        return TaskKey.pair(*pair), list(tokens)
    raise ConfigError(f"unknown variant {variant!r}")


def merge_bidirectional_corpus(pair_corpora):
    """Duplicate every sentence pair once per direction.

    ``pair_corpora`` is an iterable of ``(lang_a, lang_b, sents_a, sents_b)``
    with token-list sentences.  Yields ``(direction, src_tokens,
    tgt_tokens)`` with all a->b examples of a pair followed by its b->a
    examples.
    """
    out = []
    for lang_a, lang_b, sents_a, sents_b in pair_corpora:
        if len(sents_a) != len(sents_b):
            short = min(len(sents_a), len(sents_b))
            raise AlignmentError(
                f"{lang_a}-{lang_b} corpus misaligned at line {short + 1}: "
                f"{len(sents_a)} vs {len(sents_b)} sentences")
        for a, b in zip(sents_a, sents_b):
            out.append(((lang_a, lang_b), list(a), list(b)))
        for a, b in zip(sents_a, sents_b):
            out.append(((lang_b, lang_a), list(b), list(a)))
    return out


@dataclass
class ParallelExample:
    """One directed training sentence, source side already augmented."""

    src_tokens: list
    tgt_tokens: list
    task: TaskKey
    direction: tuple


def make_examples(directed, variant, languages):
    """Augment merged directed sentences into ParallelExamples."""
    examples = []
    for direction, src_tokens, tgt_tokens in directed:
        examples.append(ParallelExample(
            src_tokens=augment_task_tokens(variant, direction, src_tokens,
                                           languages),
            tgt_tokens=list(tgt_tokens),
            task=task_key_for_direction(variant, *direction),
            direction=direction,
        ))
    return examples


class Vocab:
    """token <-> id bijection with reserved control tokens up front."""

    def __init__(self, tokens):
        self._tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate token in vocabulary")
        for required in (BOS, EOS, UNK):
            if required not in self._ids:
                raise ValueError(f"vocabulary missing reserved {required!r}")

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    @property
    def bos_id(self):
        return self._ids[BOS]

    @property
    def eos_id(self):
        return self._ids[EOS]

    @property
    def unk_id(self):
        return self._ids[UNK]

    def id_of(self, token):
        return self._ids.get(token, self._ids[UNK])

    def token_of(self, idx):
        return self._tokens[idx]

    def encode(self, tokens):
        unk = self._ids[UNK]
        return np.array([self._ids.get(t, unk) for t in tokens],
                        dtype=np.int64)

    def decode(self, ids):
        return [self._tokens[int(i)] for i in ids]

    @property
    def tokens(self):
        return tuple(self._tokens)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self._tokens):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path):
        tokens = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                tok, idx = line.rstrip("\n").split("\t")
                if int(idx) != len(tokens):
                    raise ValueError(f"vocab file {path} has non-contiguous "
                                     f"ids at {tok!r}")
                tokens.append(tok)
        return cls(tokens)


def build_vocab(examples, side, reserved=()):
    """Collect a side's tokens: reserved first, then by frequency.

    Ties in frequency break lexicographically; reserved tokens (sentence
    markers, unknown, task tokens) take the low ids in the given order.
    """
    reserved_list = [BOS, EOS, UNK] + [t for t in reserved
                                       if t not in (BOS, EOS, UNK)]
    reserved_set = set(reserved_list)
    counts = {}
    for ex in examples:
        tokens = ex.src_tokens if side == "src" else ex.tgt_tokens
        for tok in tokens:
            if tok not in reserved_set:
                counts[tok] = counts.get(tok, 0) + 1
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocab(reserved_list + ordered)


@dataclass
class Batch:
    """A task-homogeneous batch with padded id matrices.

    Source rows are the *stripped* (model-visible) token ids right-padded
    with the sentence-end id; target rows are teacher-forcing inputs and
    gold outputs with the loss mask zero at pad positions.  ``token_count``
    is the raw source+target token total, pads excluded.
    """

    task: TaskKey
    examples: list
    src_ids: np.ndarray   # (B, l) int64
    tgt_in: np.ndarray    # (B, m) int64
    tgt_out: np.ndarray   # (B, m) int64
    tgt_mask: np.ndarray  # (B, m) float32
    token_count: int

    def __len__(self):
        return len(self.examples)


def _model_src_tokens(example, languages):
    grammar = {"shared": "shared", "target": "target", "source": "source",
               "pair": "paired"}[example.task.kind]
    key, tokens = strip_attention_selector(grammar, example.src_tokens,
                                           languages)
    if key != example.task:
        raise ParseError(f"example labeled {example.task} but source tokens "
                         f"select {key}")
    return tokens


def _pack(task, rows, src_vocab, tgt_vocab):
    n = len(rows)
    l_max = max(len(src) for _, src, _ in rows)
    m_max = max(len(tgt) for _, _, tgt in rows) + 1  # one step for </s>
    src_ids = np.full((n, l_max), src_vocab.eos_id, dtype=np.int64)
    tgt_in = np.full((n, m_max), tgt_vocab.eos_id, dtype=np.int64)
    tgt_out = np.full((n, m_max), tgt_vocab.eos_id, dtype=np.int64)
    mask = np.zeros((n, m_max), dtype=np.float32)
    examples = []
    count = 0
    for b, (ex, src, tgt) in enumerate(rows):
        examples.append(ex)
        count += len(src) + len(tgt)
        src_ids[b, :len(src)] = src_vocab.encode(src)
        t = tgt_vocab.encode(tgt)
        tgt_in[b, 0] = tgt_vocab.bos_id
        tgt_in[b, 1:len(t) + 1] = t
        tgt_out[b, :len(t)] = t
        mask[b, :len(t) + 1] = 1.0
    return Batch(task=task, examples=examples, src_ids=src_ids,
                 tgt_in=tgt_in, tgt_out=tgt_out, tgt_mask=mask,
                 token_count=count)


def make_batches(examples, cap_tokens, src_vocab, tgt_vocab, languages):
    """Greedy in-order packing, flushed on token cap or task change."""
    batches = []
    rows = []
    task = None
    count = 0
    for ex in examples:
        src = _model_src_tokens(ex, languages)
        size = len(src) + len(ex.tgt_tokens)
        if size > cap_tokens:
            raise OversizeExampleError(
                f"example with {size} tokens exceeds the batch cap "
                f"{cap_tokens}")
        if rows and (ex.task != task or count + size > cap_tokens):
            batches.append(_pack(task, rows, src_vocab, tgt_vocab))
            rows, count = [], 0
        task = ex.task
        rows.append((ex, src, ex.tgt_tokens))
        count += size
    if rows:
        batches.append(_pack(task, rows, src_vocab, tgt_vocab))
    return batches


def group_batches(examples, cap_tokens, src_vocab, tgt_vocab, languages):
    """Task-grouped packing for evaluation passes (order is not a signal)."""
    by_task = {}
    for ex in examples:
        by_task.setdefault(str(ex.task), []).append(ex)
    batches = []
    for key in sorted(by_task):
        batches.extend(make_batches(by_task[key], cap_tokens, src_vocab,
                                    tgt_vocab, languages))
    return batches


def shuffle_epoch(examples, seed, epoch):
    """Deterministic per-(seed, epoch) permutation of the example list."""
    rng = np.random.default_rng([seed, epoch, 89])
    perm = rng.permutation(len(examples))
    return [examples[i] for i in perm]


def read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def read_token_lines(path):
    """A tokenized corpus file: one sentence per line, space-separated."""
    return [line.split() for line in read_lines(path)]


def write_token_lines(path, sentences):
    with open(path, "w", encoding="utf-8") as f:
        for tokens in sentences:
            f.write(" ".join(tokens) + "\n")
