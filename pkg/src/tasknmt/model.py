"""Bidirectional-GRU translation model with task-selected attention.

The encoder/decoder, embeddings and output layer are shared across every
translation task.  The only task-conditioned pieces are the decoder-state
projection and additive bias of the first attention layer: an
:class:`AttentionBank` maps a :class:`TaskKey` to one ``(d x d, d)`` pair,
so each extra task costs exactly ``d*d + d`` parameters.

All graph-building functions here take activations shaped ``(dim, B)`` with
the batch as the trailing axis; a single sentence is just ``B == 1``.
"""

from dataclasses import dataclass, field
from zlib import crc32

import numpy as np

from . import autodiff as ad

VARIANTS = ("shared", "target", "source", "paired")

INIT_SCALE = 0.08


class UnknownTaskError(KeyError):
    """The attention bank has no parameter set for the requested task."""

    def __str__(self):
        return self.args[0] if self.args else ""


@dataclass(frozen=True)
class TaskKey:
    """Names one attention parameter set.

    ``kind`` is one of shared / target / source / pair; target and source
    keys carry one language code, pair keys carry an ordered (src, tgt)
    couple with distinct languages.
    """

    kind: str
    src: str = ""
    tgt: str = ""

    def __post_init__(self):
        if self.kind not in ("shared", "target", "source", "pair"):
            raise ValueError(f"bad task key kind {self.kind!r}")
        if self.kind == "pair" and self.src == self.tgt:
            raise ValueError(f"pair task key needs distinct languages, got "
                             f"{self.src!r} twice")

    @classmethod
    def shared(cls):
        return cls("shared")

    @classmethod
    def target(cls, lang):
        return cls("target", tgt=lang)

    @classmethod
    def source(cls, lang):
        return cls("source", src=lang)

    @classmethod
    def pair(cls, src, tgt):
        return cls("pair", src=src, tgt=tgt)

    def __str__(self):
        if self.kind == "shared":
            return "shared"
        if self.kind == "target":
            return f"target:{self.tgt}"
        if self.kind == "source":
            return f"source:{self.src}"
        return f"pair:{self.src}:{self.tgt}"

    @classmethod
    def parse(cls, text):
        parts = text.split(":")
        if parts[0] == "shared" and len(parts) == 1:
            return cls.shared()
        if parts[0] == "target" and len(parts) == 2:
            return cls.target(parts[1])
        if parts[0] == "source" and len(parts) == 2:
            return cls.source(parts[1])
        if parts[0] == "pair" and len(parts) == 3:
            return cls.pair(parts[1], parts[2])
        raise ValueError(f"cannot parse task key {text!r}")


def task_keys_for_variant(variant, languages, directions):
    """The bank keys a variant trains, in deterministic order.

    ``directions`` is the set of trained (src, tgt) couples; only the
    paired variant uses it.
    """
    if variant == "shared":
        return [TaskKey.shared()]
    if variant == "target":
        return [TaskKey.target(l) for l in sorted(languages)]
    if variant == "source":
        return [TaskKey.source(l) for l in sorted(languages)]
    if variant == "paired":
        return [TaskKey.pair(s, t) for s, t in sorted(directions)]
    raise ValueError(f"unknown variant {variant!r}")


def task_key_for_direction(variant, src_lang, tgt_lang):
    """The key a (src, tgt) sentence selects under a variant.

    The shared variant derives target keys too: the task token still names
    the target language and batches stay grouped the same way as under the
    target-specific variant, while the single-entry bank ignores the key.
    """
    if variant in ("shared", "target"):
        return TaskKey.target(tgt_lang)
    if variant == "source":
        return TaskKey.source(src_lang)
    if variant == "paired":
        return TaskKey.pair(src_lang, tgt_lang)
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class GruParams:
    """One GRU cell: input projections, state projections, gate biases."""

    w_z: np.ndarray
    w_r: np.ndarray
    w_h: np.ndarray
    u_z: np.ndarray
    u_r: np.ndarray
    u_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    FIELDS = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")


@dataclass
class AttentionParams:
    """The per-task slice of the attention network."""

    state_proj: np.ndarray  # (d, d)
    bias: np.ndarray        # (d,)


@dataclass
class AttentionBank:
    """Shared attention pieces plus the task-keyed (weights, bias) map."""

    variant: str
    enc_proj: np.ndarray      # (d, 2d), applied to encoder states
    prev_emb_proj: np.ndarray  # (d, emb), applied to the previous target emb
    score_vec: np.ndarray     # (d,)
    tasks: dict = field(default_factory=dict)  # TaskKey -> AttentionParams

    def sorted_keys(self):
        return sorted(self.tasks, key=str)


def select_attention_params(bank, key):
    """Pick the task slice for ``key``; a shared bank accepts any key."""
    if bank.variant == "shared":
        return bank.tasks[TaskKey.shared()]
    try:
        return bank.tasks[key]
    except KeyError:
        raise UnknownTaskError(
            f"no attention parameters for task {key} in a "
            f"{bank.variant}-specific bank (trained: "
            f"{', '.join(str(k) for k in bank.sorted_keys())})") from None


@dataclass
class ModelParams:
    """Every learned tensor of the model.

    Everything outside ``attention.tasks`` is shared across tasks,
    including both embedding tables.
    """

    src_emb: np.ndarray
    tgt_emb: np.ndarray
    enc_fwd: GruParams
    enc_bwd: GruParams
    dec_gru1: GruParams
    dec_gru2: GruParams
    attention: AttentionBank
    init_proj: np.ndarray   # (d, 2d)
    init_bias: np.ndarray   # (d,)
    out_state_proj: np.ndarray  # (d, d)
    out_emb_proj: np.ndarray    # (d, emb)
    out_ctx_proj: np.ndarray    # (d, 2d)
    out_bias: np.ndarray        # (d,)
    vocab_proj: np.ndarray      # (V_tgt, d)
    vocab_bias: np.ndarray      # (V_tgt,)

    @property
    def d_hidden(self):
        return self.init_proj.shape[0]

    @property
    def d_emb(self):
        return self.src_emb.shape[1]

    def named_tensors(self):
        """(name, array) pairs in a fixed canonical order."""
        yield "src_emb", self.src_emb
        yield "tgt_emb", self.tgt_emb
        for prefix, gru in (("enc_fwd", self.enc_fwd),
                            ("enc_bwd", self.enc_bwd),
                            ("dec_gru1", self.dec_gru1),
                            ("dec_gru2", self.dec_gru2)):
            for f in GruParams.FIELDS:
                yield f"{prefix}.{f}", getattr(gru, f)
        yield "attn.enc_proj", self.attention.enc_proj
        yield "attn.prev_emb_proj", self.attention.prev_emb_proj
        yield "attn.score_vec", self.attention.score_vec
        for key in self.attention.sorted_keys():
            task = self.attention.tasks[key]
            yield f"attn.task.{key}.state_proj", task.state_proj
            yield f"attn.task.{key}.bias", task.bias
        yield "init.proj", self.init_proj
        yield "init.bias", self.init_bias
        yield "out.state_proj", self.out_state_proj
        yield "out.emb_proj", self.out_emb_proj
        yield "out.ctx_proj", self.out_ctx_proj
        yield "out.bias", self.out_bias
        yield "out.vocab_proj", self.vocab_proj
        yield "out.vocab_bias", self.vocab_bias

    def tensor_map(self):
        return dict(self.named_tensors())

    def astype(self, dtype):
        return ModelParams.from_tensor_map(
            {n: a.astype(dtype) for n, a in self.named_tensors()},
            self.attention.variant,
            list(self.attention.sorted_keys()))

    @classmethod
    def from_tensor_map(cls, tensors, variant, task_keys):
        def gru(prefix):
            return GruParams(**{f: tensors[f"{prefix}.{f}"]
                                for f in GruParams.FIELDS})

        bank = AttentionBank(
            variant=variant,
            enc_proj=tensors["attn.enc_proj"],
            prev_emb_proj=tensors["attn.prev_emb_proj"],
            score_vec=tensors["attn.score_vec"],
            tasks={key: AttentionParams(tensors[f"attn.task.{key}.state_proj"],
                                        tensors[f"attn.task.{key}.bias"])
                   for key in task_keys})
        return cls(
            src_emb=tensors["src_emb"],
            tgt_emb=tensors["tgt_emb"],
            enc_fwd=gru("enc_fwd"),
            enc_bwd=gru("enc_bwd"),
            dec_gru1=gru("dec_gru1"),
            dec_gru2=gru("dec_gru2"),
            attention=bank,
            init_proj=tensors["init.proj"],
            init_bias=tensors["init.bias"],
            out_state_proj=tensors["out.state_proj"],
            out_emb_proj=tensors["out.emb_proj"],
            out_ctx_proj=tensors["out.ctx_proj"],
            out_bias=tensors["out.bias"],
            vocab_proj=tensors["out.vocab_proj"],
            vocab_bias=tensors["out.vocab_bias"],
        )


def _tensor_shapes(d, emb, n_src, n_tgt, task_keys):
    shapes = {"src_emb": (n_src, emb), "tgt_emb": (n_tgt, emb)}
    for prefix, d_in in (("enc_fwd", emb), ("enc_bwd", emb),
                         ("dec_gru1", emb), ("dec_gru2", 2 * d)):
        for f in ("w_z", "w_r", "w_h"):
            shapes[f"{prefix}.{f}"] = (d, d_in)
        for f in ("u_z", "u_r", "u_h"):
            shapes[f"{prefix}.{f}"] = (d, d)
        for f in ("b_z", "b_r", "b_h"):
            shapes[f"{prefix}.{f}"] = (d,)
    shapes["attn.enc_proj"] = (d, 2 * d)
    shapes["attn.prev_emb_proj"] = (d, emb)
    shapes["attn.score_vec"] = (d,)
    for key in task_keys:
        shapes[f"attn.task.{key}.state_proj"] = (d, d)
        shapes[f"attn.task.{key}.bias"] = (d,)
    shapes["init.proj"] = (d, 2 * d)
    shapes["init.bias"] = (d,)
    shapes["out.state_proj"] = (d, d)
    shapes["out.emb_proj"] = (d, emb)
    shapes["out.ctx_proj"] = (d, 2 * d)
    shapes["out.bias"] = (d,)
    shapes["out.vocab_proj"] = (n_tgt, d)
    shapes["out.vocab_bias"] = (n_tgt,)
    return shapes


def init_params(d_hidden, d_emb, n_src_vocab, n_tgt_vocab, variant,
                task_keys, seed, dtype=np.float32):
    """Fresh parameters: uniform(-0.08, 0.08) matrices, zero biases.

    Each tensor draws from its own stream keyed by (seed, name), so tensors
    shared between variants are bit-identical across variants for the same
    seed, and adding bank entries never shifts the other initializations.
    """
    shapes = _tensor_shapes(d_hidden, d_emb, n_src_vocab, n_tgt_vocab,
                            task_keys)
    tensors = {}
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("bias") or leaf in ("b_z", "b_r", "b_h"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            rng = np.random.default_rng([seed, crc32(name.encode())])
            tensors[name] = rng.uniform(-INIT_SCALE, INIT_SCALE,
                                        size=shape).astype(dtype)
    return ModelParams.from_tensor_map(tensors, variant, task_keys)


@dataclass
class ParameterCount:
    total: int
    groups: dict

    def __str__(self):
        lines = [f"total\t{self.total}"]
        lines += [f"{g}\t{n}" for g, n in sorted(self.groups.items())]
        return "\n".join(lines)


def count_parameters(params):
    """Exact parameter totals, grouped by model component."""
    groups = {"embeddings": 0, "encoder": 0, "decoder": 0,
              "attention_shared": 0, "attention_tasks": 0, "output": 0,
              "init": 0}
    for name, arr in params.named_tensors():
        if name.startswith(("src_emb", "tgt_emb")):
            g = "embeddings"
        elif name.startswith("enc_"):
            g = "encoder"
        elif name.startswith("dec_"):
            g = "decoder"
        elif name.startswith("attn.task."):
            g = "attention_tasks"
        elif name.startswith("attn."):
            g = "attention_shared"
        elif name.startswith("init."):
            g = "init"
        else:
            g = "output"
        groups[g] += arr.size
    return ParameterCount(total=sum(groups.values()), groups=groups)


# ---------------------------------------------------------------------------
# graph construction


class GraphBinding:
    """Binds model tensors to parameter nodes of one graph, lazily.

    Only tensors actually used by the batch become graph parameters, which
    is what makes per-task gradient selectivity fall out for free.
    """

    def __init__(self, graph, params):
        self.graph = graph
        self.params = params
        self._nodes = {}

    def node(self, name, array):
        node = self._nodes.get(name)
        if node is None:
            # gradient checks pre-register perturbed parameter nodes; reuse
            # them by name instead of registering twice
            node = self.graph.params.get(name)
            if node is None:
                node = self.graph.param(name, array)
            self._nodes[name] = node
        return node

    def gru(self, prefix):
        block = getattr(self.params, prefix)
        return {f: self.node(f"{prefix}.{f}", getattr(block, f))
                for f in GruParams.FIELDS}

    def task_attention(self, key):
        task = select_attention_params(self.params.attention, key)
        # the node name uses the bank's own key so a shared bank stays a
        # single parameter set no matter which key selected it
        bank_key = (TaskKey.shared()
                    if self.params.attention.variant == "shared" else key)
        return (self.node(f"attn.task.{bank_key}.state_proj",
                          task.state_proj),
                self.node(f"attn.task.{bank_key}.bias", task.bias))


def gru_step(binding, prefix, x, h_prev):
    """One GRU transition h' = (1-z) h + z tanh(W_h x + U_h (r o h) + b)."""
    p = binding.gru(prefix)
    return ad.gru_cell(x, h_prev, p["w_z"], p["u_z"], p["b_z"], p["w_r"],
                       p["u_r"], p["b_r"], p["w_h"], p["u_h"], p["b_h"])


@dataclass
class EncodedSource:
    """Everything the decoder needs about one encoded source batch."""

    states: list          # l nodes of shape (2d, B)
    stack: ad.Node        # (l, 2d, B)
    attn_proj: ad.Node    # (l, d, B), encoder-side attention projection
    s0: ad.Node           # (d, B) initial decoder state
    src_ids: np.ndarray   # (B, l) the encoded token ids


def encode(binding, src_ids):
    """Run both encoder directions and derive the initial decoder state.

    ``src_ids`` is an int array of shape (B, l); position i of every
    sequence is encoded in lockstep.
    """
    src_ids = np.asarray(src_ids)
    if src_ids.ndim != 2 or src_ids.shape[1] < 1:
        raise ValueError("encode needs a (B, l) id matrix with l >= 1")
    n_batch, length = src_ids.shape
    g = binding.graph
    d = binding.params.d_hidden

    emb_node = binding.node("src_emb", binding.params.src_emb)
    xs = [ad.lookup_columns(emb_node, src_ids[:, i]) for i in range(length)]

    zeros = g.input(np.zeros((d, n_batch), dtype=g.dtype))
    fwd = []
    h = zeros
    for i in range(length):
        h = gru_step(binding, "enc_fwd", xs[i], h)
        fwd.append(h)
    bwd = [None] * length
    h = zeros
    for i in range(length - 1, -1, -1):
        h = gru_step(binding, "enc_bwd", xs[i], h)
        bwd[i] = h

    states = [ad.concat_rows(bwd[i], fwd[i]) for i in range(length)]
    stack = ad.stack_states(states)
    attn_proj = ad.project_states(
        binding.node("attn.enc_proj", binding.params.attention.enc_proj),
        stack)

    summary = ad.concat_rows(bwd[0], fwd[length - 1])
    s0 = ad.tanh(ad.affine(
        binding.node("init.bias", binding.params.init_bias),
        (binding.node("init.proj", binding.params.init_proj), summary)))
    return EncodedSource(states, stack, attn_proj, s0, src_ids)


def attention_scores(binding, key, query, enc, y_prev_emb):
    """Normalized attention weights over source positions: (l, B)."""
    state_proj, bias = binding.task_attention(key)
    prev_proj = binding.node("attn.prev_emb_proj",
                             binding.params.attention.prev_emb_proj)
    base = ad.affine(bias, (state_proj, query), (prev_proj, y_prev_emb))
    energies = ad.attention_energy(
        base, enc.attn_proj,
        binding.node("attn.score_vec", binding.params.attention.score_vec))
    return ad.softmax_columns(energies)


def context_vector(alpha, enc):
    """Attention-weighted sum of the encoder states: (2d, B)."""
    return ad.context_combine(alpha, enc.stack)


@dataclass
class DecoderStep:
    state: ad.Node    # (d, B)
    logits: ad.Node   # (V_tgt, B)
    alpha: ad.Node    # (l, B)


def decoder_step(binding, key, s_prev, y_prev_ids, enc,
                 query_mode="intermediate"):
    """One conditional-GRU decoder transition.

    GRU block 1 advances the state on the previous target embedding, the
    attention network (with the task-selected first-layer weights) reads
    the encoder, and GRU block 2 folds the context back into the state.
    ``query_mode`` picks the attention query: the block-1 output
    ("intermediate", default) or the incoming state ("prev").
    """
    if query_mode not in ("intermediate", "prev"):
        raise ValueError(f"bad query_mode {query_mode!r}")
    y_prev = ad.lookup_columns(
        binding.node("tgt_emb", binding.params.tgt_emb), y_prev_ids)
    s_mid = gru_step(binding, "dec_gru1", y_prev, s_prev)
    query = s_prev if query_mode == "prev" else s_mid
    alpha = attention_scores(binding, key, query, enc, y_prev)
    ctx = context_vector(alpha, enc)
    s_next = gru_step(binding, "dec_gru2", ctx, s_mid)

    p = binding.params
    hidden = ad.tanh(ad.affine(
        binding.node("out.bias", p.out_bias),
        (binding.node("out.state_proj", p.out_state_proj), s_next),
        (binding.node("out.emb_proj", p.out_emb_proj), y_prev),
        (binding.node("out.ctx_proj", p.out_ctx_proj), ctx)))
    logits = ad.affine(
        binding.node("out.vocab_bias", p.vocab_bias),
        (binding.node("out.vocab_proj", p.vocab_proj), hidden))
    return DecoderStep(state=s_next, logits=logits, alpha=alpha)
