"""Scoring and analysis: corpus BLEU, zero-shot enumeration, attention export.

BLEU follows the multi-bleu conventions: case-sensitive, single reference,
corpus-level clipped 1..4-gram precisions, brevity penalty
``exp(1 - r/c)`` when the hypothesis is short, and a hard zero when any
precision is zero.
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .bpe import decode_bpe
from .corpus import AlignmentError, ConfigError, augment_task_tokens
from .decoding import greedy_decode_batch
from .model import UnknownTaskError


@dataclass
class BleuReport:
    bleu: float
    precisions: list
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    @property
    def ratio(self):
        return self.hyp_len / self.ref_len if self.ref_len else 0.0

    def format(self):
        p = "/".join(f"{100.0 * x:.1f}" for x in self.precisions)
        return (f"BLEU = {self.bleu:.2f}, {p} "
                f"(BP={self.brevity_penalty:.4f}, ratio={self.ratio:.3f}, "
                f"hyp_len={self.hyp_len}, ref_len={self.ref_len})")


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_score(hyp_lines, ref_lines, max_n=4):
    """Corpus-level case-sensitive BLEU over whitespace tokens."""
    if len(hyp_lines) != len(ref_lines):
        raise AlignmentError(f"hypothesis/reference line counts differ: "
                             f"{len(hyp_lines)} vs {len(ref_lines)}")
    hits = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyp_lines, ref_lines):
        h = hyp.split()
        r = ref.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            totals[n - 1] += sum(hc.values())
            hits[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    precisions = [(hits[i] / totals[i]) if totals[i] else 0.0
                  for i in range(max_n)]
    if hyp_len == 0 or ref_len == 0:
        bp = 0.0 if hyp_len == 0 else 1.0
    else:
        bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    if any(p == 0.0 for p in precisions):
        bleu = 0.0
    else:
        bleu = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuReport(bleu=100.0 * bleu, precisions=precisions,
                      brevity_penalty=bp, hyp_len=hyp_len, ref_len=ref_len)


def exact_match(hyp_lines, ref_lines):
    """Sequence-level exact-match accuracy of two line lists."""
    if len(hyp_lines) != len(ref_lines):
        raise AlignmentError(f"hypothesis/reference line counts differ: "
                             f"{len(hyp_lines)} vs {len(ref_lines)}")
    if not hyp_lines:
        return 0.0
    same = sum(1 for h, r in zip(hyp_lines, ref_lines) if h == r)
    return same / len(hyp_lines)


def zero_shot_directions(languages, trained_pairs):
    """Ordered language pairs that never appear in the trained set."""
    trained = {tuple(p) for p in trained_pairs}
    if not trained <= {(a, b) for a in languages for b in languages}:
        raise ConfigError("trained pairs mention unknown languages")
    return [(a, b) for a in sorted(languages) for b in sorted(languages)
            if a != b and (a, b) not in trained]


def attention_entropy(matrix):
    """Mean Shannon entropy (nats) of the attention columns."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise ValueError("attention_entropy needs an (l, m) matrix with "
                         "at least one column")
    safe = np.where(m > 0.0, m, 1.0)
    return float(-(m * np.log(safe)).sum(axis=0).mean())


# ---------------------------------------------------------------------------
# attention export


CELL = 24
PAD = 6


def export_attention(matrix, src_tokens, tgt_tokens, path):
    """Write an SVG heat grid plus a parseable plain-text dump.

    Rows are source tokens, columns target tokens; darker cells carry more
    weight.  The text dump lands next to the SVG with an ``.att.txt``
    suffix and round-trips through :func:`parse_attention_dump`.
    """
    matrix = np.asarray(matrix)
    rows, cols = matrix.shape
    if rows != len(src_tokens) or cols != len(tgt_tokens):
        raise ValueError(
            f"attention matrix {matrix.shape} does not match "
            f"{len(src_tokens)} source / {len(tgt_tokens)} target tokens")

    path = str(path)
    base = path[:-4] if path.endswith(".svg") else path
    svg_path = base + ".svg"
    txt_path = base + ".att.txt"

    label_w = PAD + 8 * max((len(t) for t in src_tokens), default=0)
    label_h = PAD + 8 * max((len(t) for t in tgt_tokens), default=0)
    width = label_w + cols * CELL + PAD
    height = label_h + rows * CELL + PAD

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-family="monospace" font-size="11">']
    for i, tok in enumerate(src_tokens):
        y = label_h + i * CELL + CELL * 0.65
        parts.append(f'<text x="{PAD}" y="{y:.1f}">{escape(tok)}</text>')
    for j, tok in enumerate(tgt_tokens):
        x = label_w + j * CELL + CELL * 0.65
        parts.append(f'<text x="{x:.1f}" y="{label_h - PAD}" '
                     f'transform="rotate(-60 {x:.1f} {label_h - PAD})">'
                     f'{escape(tok)}</text>')
    for i in range(rows):
        for j in range(cols):
            w = float(matrix[i, j])
            shade = int(round(255 * (1.0 - min(max(w, 0.0), 1.0))))
            color = f"rgb({shade},{shade},{shade})"
            parts.append(
                f'<rect x="{label_w + j * CELL}" y="{label_h + i * CELL}" '
                f'width="{CELL}" height="{CELL}" fill="{color}" '
                f'stroke="#888"/>')
    parts.append("</svg>")
    with open(svg_path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")

    with open(txt_path, "w", encoding="utf-8") as f:
        f.write(f"{rows} {cols}\n")
        for i in range(rows):
            f.write(" ".join(f"{float(v):.8f}" for v in matrix[i]) + "\n")
    return svg_path, txt_path


def parse_attention_dump(path):
    with open(path, encoding="utf-8") as f:
        rows, cols = (int(x) for x in f.readline().split())
        matrix = np.array([[float(v) for v in f.readline().split()]
                           for _ in range(rows)])
    if matrix.shape != (rows, cols):
        raise ValueError(f"{path} does not contain a {rows}x{cols} matrix")
    return matrix


# ---------------------------------------------------------------------------
# per-direction evaluation


@dataclass
class DirectionReport:
    """Per-seed and mean scores for one translation direction."""

    direction: tuple
    zero_shot: bool = False
    per_seed_bleu: list = field(default_factory=list)
    per_seed_accuracy: list = field(default_factory=list)
    per_seed_entropy: list = field(default_factory=list)
    skipped: str = ""

    @property
    def mean_bleu(self):
        return (sum(self.per_seed_bleu) / len(self.per_seed_bleu)
                if self.per_seed_bleu else float("nan"))

    @property
    def mean_accuracy(self):
        return (sum(self.per_seed_accuracy) / len(self.per_seed_accuracy)
                if self.per_seed_accuracy else float("nan"))

    @property
    def mean_entropy(self):
        return (sum(self.per_seed_entropy) / len(self.per_seed_entropy)
                if self.per_seed_entropy else float("nan"))


def evaluate_direction(models, src_token_lines, ref_token_lines, direction,
                       zero_shot=False, max_len=None):
    """Decode a direction with every seed's model and average the scores.

    ``src_token_lines`` are BPE-applied but unaugmented source sentences;
    references are plain word tokens.  A model whose bank cannot serve the
    direction (paired variant on a zero-shot pair) yields a skipped report
    rather than an exception.
    """
    if not models:
        raise ConfigError(f"no models supplied for direction {direction}")
    variant = models[0].variant
    languages = models[0].languages
    report = DirectionReport(direction=tuple(direction), zero_shot=zero_shot)
    refs = [" ".join(tokens) for tokens in ref_token_lines]
    augmented = [augment_task_tokens(variant, direction, toks, languages)
                 for toks in src_token_lines]
    for model in models:
        try:
            decoded = greedy_decode_batch(model, augmented, max_len=max_len)
        except UnknownTaskError as err:
            report.skipped = str(err)
            report.per_seed_bleu.clear()
            report.per_seed_accuracy.clear()
            report.per_seed_entropy.clear()
            return report
        hyps = []
        entropies = []
        for tokens, matrix in decoded:
            hyps.append(" ".join(decode_bpe(tokens, strict=False)))
            if matrix.shape[1]:
                entropies.append(attention_entropy(matrix))
        report.per_seed_bleu.append(bleu_score(hyps, refs).bleu)
        report.per_seed_accuracy.append(exact_match(hyps, refs))
        report.per_seed_entropy.append(
            sum(entropies) / len(entropies) if entropies else float("nan"))
    return report
