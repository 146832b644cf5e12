"""Greedy and beam decoding with run-time task selection.

Inputs are augmented source token sequences; the task key is recovered from
the leading task tokens, which means a paired-variant model refuses
zero-shot directions here with an :class:`UnknownTaskError` before any
graph is built.  Decoding is deterministic: argmax ties resolve to the
lowest token id, beam ties to the lexicographically smallest sequence.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .corpus import strip_attention_selector
from .model import (GraphBinding, decoder_step, encode,
                    select_attention_params)


@dataclass
class TranslationModel:
    """Frozen parameters plus everything needed to decode with them."""

    params: "ModelParams"
    src_vocab: "Vocab"
    tgt_vocab: "Vocab"
    languages: list
    variant: str
    query_mode: str = "intermediate"

    @classmethod
    def from_checkpoint(cls, ckpt):
        return cls(params=ckpt.params, src_vocab=ckpt.src_vocab,
                   tgt_vocab=ckpt.tgt_vocab, languages=ckpt.languages,
                   variant=ckpt.config.variant,
                   query_mode=ckpt.config.attention_query)


def default_max_len(src_len):
    return 3 * src_len + 10


@dataclass
class Hypothesis:
    """A (partial) decode: token ids, total log-probability, attention."""

    token_ids: list = field(default_factory=list)
    logprob: float = 0.0
    attention: list = field(default_factory=list)  # one (l,) per token
    finished: bool = False


def _prepare(model, src_tokens):
    key, tokens = strip_attention_selector(model.variant, src_tokens,
                                           model.languages)
    select_attention_params(model.params.attention, key)  # fail fast
    return key, tokens


def _log_softmax(logits):
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def greedy_decode(model, src_tokens, max_len=None):
    """Argmax decoding of one sentence.

    Returns ``(tgt_tokens, attention)`` where attention is an (l, m) matrix
    with one column per emitted token (the final sentence-end step is not a
    token and gets no column).
    """
    results = greedy_decode_batch(model, [src_tokens], max_len=max_len)
    return results[0]


def greedy_decode_batch(model, sentences, max_len=None):
    """Greedy decoding of many sentences, batched by (task, length).

    Grouping by exact source length keeps every sequence pad-free, so the
    results are identical to decoding each sentence alone.
    """
    prepared = [_prepare(model, toks) for toks in sentences]
    groups = {}
    for i, (key, tokens) in enumerate(prepared):
        groups.setdefault((str(key), len(tokens)), []).append(i)

    results = [None] * len(sentences)
    eos = model.tgt_vocab.eos_id
    bos = model.tgt_vocab.bos_id
    for (_, length), indices in sorted(groups.items()):
        key = prepared[indices[0]][0]
        ids = np.stack([model.src_vocab.encode(prepared[i][1])
                        for i in indices])
        limit = max_len if max_len is not None else default_max_len(length)
        n = len(indices)

        graph = ad.Graph(dtype=model.params.src_emb.dtype)
        binding = GraphBinding(graph, model.params)
        enc = encode(binding, ids)
        state = enc.s0
        y_prev = np.full(n, bos, dtype=np.int64)
        out_ids = [[] for _ in range(n)]
        out_alpha = [[] for _ in range(n)]
        alive = np.ones(n, dtype=bool)
        for _ in range(limit):
            step = decoder_step(binding, key, state, y_prev, enc,
                                model.query_mode)
            picks = np.argmax(step.logits.value, axis=0)
            for j in range(n):
                if not alive[j]:
                    picks[j] = eos
                    continue
                if picks[j] == eos:
                    alive[j] = False
                else:
                    out_ids[j].append(int(picks[j]))
                    out_alpha[j].append(step.alpha.value[:, j].copy())
            if not alive.any():
                break
            state = step.state
            y_prev = picks.astype(np.int64)
        for j, i in enumerate(indices):
            tokens = model.tgt_vocab.decode(out_ids[j])
            if out_alpha[j]:
                matrix = np.stack(out_alpha[j], axis=1)
            else:
                matrix = np.zeros((length, 0),
                                  dtype=model.params.src_emb.dtype)
            results[i] = (tokens, matrix)
    return results


def beam_decode(model, src_tokens, beam=4, max_len=None):
    """Length-unnormalized beam search; returns the best Hypothesis.

    Finished and unfinished hypotheses compete on total log-probability;
    beam size 1 reproduces greedy decoding token for token.
    """
    if beam < 1:
        raise ValueError("beam size must be at least 1")
    key, tokens = _prepare(model, src_tokens)
    ids = model.src_vocab.encode(tokens)[None, :]
    limit = max_len if max_len is not None else default_max_len(len(tokens))
    eos = model.tgt_vocab.eos_id
    bos = model.tgt_vocab.bos_id

    graph = ad.Graph(dtype=model.params.src_emb.dtype)
    binding = GraphBinding(graph, model.params)
    enc = encode(binding, ids)

    live = [(Hypothesis(), enc.s0, bos)]
    done = []
    for _ in range(limit):
        expanded = []
        for hyp, state, y_prev in live:
            step = decoder_step(binding, key, state,
                                np.array([y_prev], dtype=np.int64), enc,
                                model.query_mode)
            logprobs = _log_softmax(step.logits.value[:, 0].astype(
                np.float64))
            top = np.argsort(-logprobs, kind="stable")[:beam]
            for tok in top:
                tok = int(tok)
                cand = Hypothesis(
                    token_ids=hyp.token_ids + ([] if tok == eos else [tok]),
                    logprob=hyp.logprob + float(logprobs[tok]),
                    attention=hyp.attention + (
                        [] if tok == eos
                        else [step.alpha.value[:, 0].copy()]),
                    finished=tok == eos)
                if cand.finished:
                    done.append(cand)
                else:
                    expanded.append((cand, step.state, tok))
        expanded.sort(key=lambda e: (-e[0].logprob, e[0].token_ids))
        live = expanded[:beam]
        if not live:
            break
        if done:
            best_done = min(done, key=lambda h: (-h.logprob, h.token_ids))
            if best_done.logprob >= live[0][0].logprob:
                break
    pool = done + [h for h, _, _ in live]
    return min(pool, key=lambda h: (-h.logprob, h.token_ids))
