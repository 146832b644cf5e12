"""Shared test fixtures: tiny models and independent 64-bit oracles.

The oracle functions re-implement the model math directly in numpy float64
with no graph machinery, so graph outputs can be checked against a fully
separate evaluation path.
"""

import numpy as np

from tasknmt import autodiff as ad
from tasknmt.model import (GraphBinding, TaskKey, init_params,
                           select_attention_params, task_keys_for_variant)
from tasknmt.training import build_sequence_loss

LANGS = ("A", "B", "C")
DIRECTIONS = (("A", "B"), ("B", "A"), ("A", "C"), ("C", "A"))


def small_model(variant="target", d=6, emb=5, n_src=12, n_tgt=11, seed=0,
                dtype=np.float32, langs=LANGS, directions=DIRECTIONS):
    keys = task_keys_for_variant(variant, langs, directions)
    return init_params(d, emb, n_src, n_tgt, variant, keys, seed,
                       dtype=dtype)


# ---------------------------------------------------------------------------
# direct numpy oracles (float64, loop-level, independent of the graph code)


def o_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def o_gru(gru, x, h):
    """GRU transition for 1-D vectors, straight from the gate formulas."""
    z = o_sigmoid(gru.w_z @ x + gru.u_z @ h + gru.b_z)
    r = o_sigmoid(gru.w_r @ x + gru.u_r @ h + gru.b_r)
    cand = np.tanh(gru.w_h @ x + gru.u_h @ (r * h) + gru.b_h)
    return (1.0 - z) * h + z * cand


def o_encode(params, src_ids):
    """Bidirectional encoding of one sentence; states are [bwd; fwd]."""
    d = params.d_hidden
    xs = [params.src_emb[i].astype(np.float64) for i in src_ids]
    fwd = []
    h = np.zeros(d)
    for x in xs:
        h = o_gru(params.enc_fwd, x, h)
        fwd.append(h)
    bwd = [None] * len(xs)
    h = np.zeros(d)
    for i in range(len(xs) - 1, -1, -1):
        h = o_gru(params.enc_bwd, xs[i], h)
        bwd[i] = h
    states = [np.concatenate([bwd[i], fwd[i]]) for i in range(len(xs))]
    summary = np.concatenate([bwd[0], fwd[-1]])
    s0 = np.tanh(params.init_proj @ summary + params.init_bias)
    return states, s0


def o_attention(params, key, query, states, y_emb):
    """Two-layer additive attention weights for one decoding step."""
    task = select_attention_params(params.attention, key)
    att = params.attention
    energies = []
    for h in states:
        pre = (task.state_proj @ query + att.enc_proj @ h
               + att.prev_emb_proj @ y_emb + task.bias)
        energies.append(float(att.score_vec @ np.tanh(pre)))
    e = np.array(energies, dtype=np.float64)
    e -= e.max()
    w = np.exp(e)
    return w / w.sum()


def o_context(alpha, states):
    out = np.zeros_like(states[0])
    for a, h in zip(alpha, states):
        out += a * h
    return out


def o_decoder_step(params, key, s_prev, y_prev_id, states,
                   query_mode="intermediate"):
    """One conditional-GRU step; returns (state, logits, alpha)."""
    y_emb = params.tgt_emb[y_prev_id].astype(np.float64)
    s_mid = o_gru(params.dec_gru1, y_emb, s_prev)
    query = s_prev if query_mode == "prev" else s_mid
    alpha = o_attention(params, key, query, states, y_emb)
    ctx = o_context(alpha, states)
    s_next = o_gru(params.dec_gru2, ctx, s_mid)
    hidden = np.tanh(params.out_state_proj @ s_next
                     + params.out_emb_proj @ y_emb
                     + params.out_ctx_proj @ ctx + params.out_bias)
    logits = params.vocab_proj @ hidden + params.vocab_bias
    return s_next, logits, alpha


def o_sequence_nll(params, key, src_ids, tgt_ids, bos_id, eos_id,
                   query_mode="intermediate"):
    """Teacher-forced NLL of one sentence, computed by the oracle chain."""
    states, s = o_encode(params, src_ids)
    inputs = [bos_id] + list(tgt_ids)
    outputs = list(tgt_ids) + [eos_id]
    nll = 0.0
    for y_prev, y_gold in zip(inputs, outputs):
        s, logits, _ = o_decoder_step(params, key, s, y_prev, states,
                                      query_mode)
        shifted = logits - logits.max()
        nll -= shifted[y_gold] - np.log(np.exp(shifted).sum())
    return float(nll)


# ---------------------------------------------------------------------------
# gradient-check plumbing


def sequence_loss_builder(structure, key, src_ids, tgt_in, tgt_out, mask,
                          query_mode="intermediate"):
    """A gradient_check loss builder for one full training step.

    ``structure`` supplies variant and bank keys; the perturbed tensors are
    taken from the graph's pre-registered parameter nodes by name.
    """
    from tasknmt.model import ModelParams

    variant = structure.attention.variant
    keys = list(structure.attention.sorted_keys())

    def build(graph, nodes):
        tensors = {name: node.value for name, node in nodes.items()}
        params = ModelParams.from_tensor_map(tensors, variant, keys)
        binding = GraphBinding(graph, params)
        return build_sequence_loss(binding, key, src_ids, tgt_in, tgt_out,
                                   mask, query_mode)

    return build


def batch_arrays(rng, n_batch, src_len, tgt_len, n_src, n_tgt):
    """Random id/mask matrices shaped like a packed batch."""
    src = rng.integers(0, n_src, size=(n_batch, src_len))
    tgt_in = rng.integers(0, n_tgt, size=(n_batch, tgt_len))
    tgt_out = rng.integers(0, n_tgt, size=(n_batch, tgt_len))
    mask = np.ones((n_batch, tgt_len), dtype=np.float64)
    return src, tgt_in, tgt_out, mask


def relabel_task_corpus(n, seed=0, reverse=True, min_len=2, max_len=5,
                        base_vocab=10):
    """A two-language toy corpus: relabeled symbols, optionally reversed."""
    rng = np.random.default_rng(seed)
    sents_a, sents_b = [], []
    for _ in range(n):
        ids = rng.integers(0, base_vocab,
                           size=rng.integers(min_len, max_len + 1))
        sents_a.append([f"a{i}" for i in ids])
        order = ids[::-1] if reverse else ids
        sents_b.append([f"b{i}" for i in order])
    return sents_a, sents_b


def pipeline_fixture(n=8, variant="target", seed=0, reverse=True):
    """Examples plus vocabularies for a small A<->B training set."""
    from tasknmt.corpus import (build_vocab, make_examples,
                                merge_bidirectional_corpus,
                                task_token_inventory)

    sents_a, sents_b = relabel_task_corpus(n, seed=seed, reverse=reverse)
    directed = merge_bidirectional_corpus([("A", "B", sents_a, sents_b)])
    examples = make_examples(directed, variant, ("A", "B"))
    reserved = task_token_inventory(variant, ("A", "B"),
                                    (("A", "B"), ("B", "A")))
    src_vocab = build_vocab(examples, "src", reserved=reserved)
    tgt_vocab = build_vocab(examples, "tgt")
    return examples, src_vocab, tgt_vocab
