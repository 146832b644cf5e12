"""Teacher-forced NLL training with Adam, validation, and checkpoints.

One computation graph is built per batch with exactly the attention
parameters its task selects, so bank entries of other tasks receive no
gradient and are not touched by the optimizer.  Adam is applied lazily with
a per-parameter step count: a tensor's bias correction advances only when
the tensor itself participates in an update.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import kernels
from .corpus import group_batches, make_batches, shuffle_epoch
from .model import GraphBinding, ModelParams, decoder_step, encode

CHECKPOINT_MAGIC = b"TSNMT1\n"


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite; carries the offending batch index."""


class CheckpointError(Exception):
    """Base for checkpoint read failures."""


class CheckpointVersionError(CheckpointError):
    """Magic bytes or format version do not match."""


class CheckpointTruncatedError(CheckpointError):
    """The payload ends before the manifest says it should."""


class CheckpointFormatError(CheckpointError):
    """Header or manifest inconsistent with the payload."""


@dataclass
class TrainingConfig:
    """Model and optimizer settings; defaults follow the reference setup.

    Desk-scale runs (tests, the toy experiment) pass ``d_hidden=64`` and
    ``batch_tokens=500`` instead of the full 256/5000.
    """

    d_hidden: int = 256
    d_emb: int = 256
    layers: int = 1
    batch_tokens: int = 5000
    variant: str = "target"
    seeds: int = 5
    epochs: int = 5
    validate_every: int = 2000  # examples between validations; 0 = epoch end
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0  # 0 disables clipping
    attention_query: str = "intermediate"

    def __post_init__(self):
        if self.d_hidden <= 0 or self.d_emb <= 0 or self.layers != 1:
            raise ValueError("dimensions must be positive (single layer)")
        if self.variant not in ("shared", "target", "source", "paired"):
            raise ValueError(f"bad variant {self.variant!r}")
        if self.attention_query not in ("intermediate", "prev"):
            raise ValueError(f"bad attention_query "
                             f"{self.attention_query!r}")

    _FLOATS = ("lr", "beta1", "beta2", "adam_eps", "grad_clip")
    _STRS = ("variant", "attention_query")

    def to_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            out[name] = str(getattr(self, name))
        return out

    @classmethod
    def from_dict(cls, data):
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in data:
                continue
            raw = data[name]
            if name in cls._FLOATS:
                kwargs[name] = float(raw)
            elif name in cls._STRS:
                kwargs[name] = raw
            else:
                kwargs[name] = int(raw)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# loss


def build_sequence_loss(binding, key, src_ids, tgt_in, tgt_out, mask,
                        query_mode="intermediate"):
    """Teacher-forced masked NLL over all target positions of one batch."""
    enc = encode(binding, src_ids)
    state = enc.s0
    losses = []
    for t in range(tgt_in.shape[1]):
        step = decoder_step(binding, key, state, tgt_in[:, t], enc,
                            query_mode)
        losses.append(ad.masked_cross_entropy(step.logits, tgt_out[:, t],
                                              mask[:, t]))
        state = step.state
    return losses[0] if len(losses) == 1 else ad.add_n(losses)


def compute_loss(params, batch, query_mode="intermediate",
                 dtype=np.float32):
    """Build the batch graph; returns (graph, loss node, real token count)."""
    graph = ad.Graph(dtype=dtype)
    binding = GraphBinding(graph, params)
    loss = build_sequence_loss(binding, batch.task, batch.src_ids,
                               batch.tgt_in, batch.tgt_out, batch.tgt_mask,
                               query_mode)
    return graph, loss, int(batch.tgt_mask.sum())


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Per-parameter Adam moments and step counts."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, config):
        return cls(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                   eps=config.adam_eps)

    @property
    def t(self):
        return max(self.steps.values(), default=0)


def adam_update(state, params, grads, grad_clip=0.0):
    """Bias-corrected Adam step over exactly the parameters with gradients.

    Updates the parameter arrays in place and returns ``params``.
    """
    if grad_clip > 0.0 and grads:
        total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > grad_clip:
            scale = grad_clip / total
            grads = {n: g * scale for n, g in grads.items()}
    tensors = params.tensor_map() if isinstance(params, ModelParams) \
        else params
    for name in sorted(grads):
        g = grads[name]
        arr = tensors[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
            state.steps[name] = 0
        state.steps[name] += 1
        kernels.adam_step(arr, g, m, state.v[name], state.steps[name],
                          state.lr, state.beta1, state.beta2, state.eps)
    return params


# ---------------------------------------------------------------------------
# training loop


def train_batch(params, state, batch, config):
    """One forward/backward/update step; returns the batch NLL sum."""
    graph, loss, _ = compute_loss(params, batch,
                                  query_mode=config.attention_query)
    value = float(loss.value)
    if not math.isfinite(value):
        raise TrainingDivergedError(
            f"non-finite loss on a {batch.task} batch of {len(batch)} "
            f"examples")
    graph.backward(loss)
    adam_update(state, params, graph.gradients(),
                grad_clip=config.grad_clip)
    return value


def train_epoch(params, state, batches, config):
    """One deterministic pass over prepared batches.

    Returns the per-batch NLL sums (useful for bit-identity checks) plus
    the token total.  Raises :class:`TrainingDivergedError` naming the
    offending batch if a loss goes non-finite.
    """
    losses = []
    tokens = 0
    for i, batch in enumerate(batches):
        try:
            losses.append(train_batch(params, state, batch, config))
        except TrainingDivergedError as e:
            raise TrainingDivergedError(f"batch {i}: {e}") from None
        tokens += int(batch.tgt_mask.sum())
    return losses, tokens


def validate(params, val_batches, query_mode="intermediate"):
    """Perplexity over the merged validation set: exp(NLL / tokens)."""
    nll = 0.0
    tokens = 0
    for batch in val_batches:
        _, loss, n = compute_loss(params, batch, query_mode=query_mode)
        nll += float(loss.value)
        tokens += n
    if tokens == 0:
        return float("inf"), 0.0, 0
    return math.exp(nll / tokens), nll, tokens


@dataclass
class MetricsRow:
    seed: int
    epoch: float
    examples: int
    train_nll: float
    val_ppl: float
    val_score: float


class MetricsLog:
    """Learning-curve rows, one per validation checkpoint."""

    HEADER = "seed\tepoch\texamples\ttrain_nll\tval_ppl\tval_score"

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def append(self, row):
        self.rows.append(row)

    def to_tsv(self):
        lines = [self.HEADER]
        for r in self.rows:
            lines.append(f"{r.seed}\t{r.epoch:.4f}\t{r.examples}\t"
                         f"{r.train_nll:.6f}\t{r.val_ppl:.6f}\t"
                         f"{r.val_score:.6f}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_tsv())

    @classmethod
    def load(cls, path):
        rows = []
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if header != cls.HEADER:
                raise ValueError(f"unexpected metrics header {header!r}")
            for line in f:
                s, e, n, t, p, sc = line.rstrip("\n").split("\t")
                rows.append(MetricsRow(int(s), float(e), int(n), float(t),
                                       float(p), float(sc)))
        return cls(rows)


@dataclass
class TrainOutcome:
    params: ModelParams        # parameters at the best validation ppl
    final_params: ModelParams  # parameters after the last update
    state: AdamState           # optimizer state at the best checkpoint
    metrics: MetricsLog
    best_val_ppl: float


def _copy_params(params):
    return ModelParams.from_tensor_map(
        {n: a.copy() for n, a in params.named_tensors()},
        params.attention.variant, list(params.attention.sorted_keys()))


def _copy_state(state):
    return AdamState(lr=state.lr, beta1=state.beta1, beta2=state.beta2,
                     eps=state.eps,
                     m={n: a.copy() for n, a in state.m.items()},
                     v={n: a.copy() for n, a in state.v.items()},
                     steps=dict(state.steps))


def train_model(params, examples, val_examples, src_vocab, tgt_vocab,
                languages, config, seed, score_fn=None, log=None):
    """Full training run: shuffled epochs, periodic validation, best keep.

    ``score_fn(params) -> float`` optionally adds a decode-based validation
    score to each metrics row (NaN when absent).  Deterministic given
    (params, data, config, seed).
    """
    state = AdamState.for_config(config)
    metrics = MetricsLog()
    val_batches = group_batches(val_examples, config.batch_tokens,
                                src_vocab, tgt_vocab, languages)
    best = None
    best_state = None
    best_ppl = float("inf")
    seen = 0
    nll_since = 0.0
    tokens_since = 0
    epoch_size = max(len(examples), 1)
    next_val = config.validate_every if config.validate_every else None

    def checkpoint():
        nonlocal best, best_state, best_ppl, nll_since, tokens_since
        ppl, _, _ = validate(params, val_batches,
                             query_mode=config.attention_query)
        score = float("nan") if score_fn is None else float(score_fn(params))
        train_nll = (nll_since / tokens_since) if tokens_since else \
            float("nan")
        metrics.append(MetricsRow(seed=seed, epoch=seen / epoch_size,
                                  examples=seen, train_nll=train_nll,
                                  val_ppl=ppl, val_score=score))
        if log:
            log(metrics.rows[-1])
        if ppl < best_ppl:
            best_ppl = ppl
            best = _copy_params(params)
            best_state = _copy_state(state)
        nll_since = 0.0
        tokens_since = 0

    for epoch in range(config.epochs):
        shuffled = shuffle_epoch(examples, seed, epoch)
        batches = make_batches(shuffled, config.batch_tokens, src_vocab,
                               tgt_vocab, languages)
        for i, batch in enumerate(batches):
            try:
                nll_since += train_batch(params, state, batch, config)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(
                    f"epoch {epoch} batch {i}: {e}") from None
            tokens_since += int(batch.tgt_mask.sum())
            seen += len(batch)
            if next_val is not None and seen >= next_val:
                checkpoint()
                next_val += config.validate_every
    checkpoint()
    if best is None:
        best = _copy_params(params)
        best_state = _copy_state(state)
    return TrainOutcome(params=best, final_params=params, state=best_state,
                        metrics=metrics, best_val_ppl=best_ppl)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params, state, config, src_vocab, tgt_vocab,
                    languages, extra=None):
    """Write the binary checkpoint: magic, UTF-8 manifest, float32 payload.

    Canonical ordering throughout makes save -> load -> save byte-stable.
    """
    tensors = list(params.named_tensors())
    adam_names = [n for n, _ in tensors]
    for which, bank in (("adam.m", state.m), ("adam.v", state.v)):
        for name in adam_names:
            if name in bank:
                tensors.append((f"{which}.{name}", bank[name]))

    header = []
    cfg = dict(config.to_dict())
    cfg["languages"] = ",".join(sorted(languages))
    if extra:
        cfg.update({k: str(v) for k, v in extra.items()})
    for key in sorted(cfg):
        header.append(f"config\t{key}\t{cfg[key]}")
    for key in params.attention.sorted_keys():
        header.append(f"task\t{key}")
    for tok in src_vocab.tokens:
        header.append(f"srcvocab\t{tok}")
    for tok in tgt_vocab.tokens:
        header.append(f"tgtvocab\t{tok}")
    for name in adam_names:
        if name in state.steps:
            header.append(f"adamstep\t{name}\t{state.steps[name]}")

    payload = bytearray()
    for name, arr in tensors:
        if arr.dtype != np.float32:
            raise ValueError(f"checkpoint tensors must be float32, {name} "
                             f"is {arr.dtype}")
        shape = ",".join(str(d) for d in arr.shape)
        header.append(f"tensor\t{name}\t{shape}\t{len(payload)}")
        payload += arr.astype("<f4", copy=False).tobytes()

    blob = "\n".join(header).encode("utf-8") + b"\n"
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(f"{len(blob)}\n".encode("ascii"))
        f.write(blob)
        f.write(bytes(payload))


@dataclass
class Checkpoint:
    params: ModelParams
    state: AdamState
    config: TrainingConfig
    src_vocab: "Vocab"
    tgt_vocab: "Vocab"
    languages: list
    extra: dict


def load_checkpoint(path):
    from .corpus import Vocab
    from .model import TaskKey

    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointVersionError(
                f"{path} does not start with the TSNMT1 magic")
        length_line = f.readline()
        try:
            header_len = int(length_line.strip())
        except ValueError:
            raise CheckpointVersionError(
                f"{path} has a malformed header length") from None
        blob = f.read(header_len)
        if len(blob) < header_len:
            raise CheckpointTruncatedError(f"{path} header is truncated")
        payload = f.read()

    known_cfg = set(TrainingConfig.__dataclass_fields__)
    cfg = {}
    extra = {}
    task_keys = []
    src_tokens = []
    tgt_tokens = []
    adam_steps = {}
    manifest = []
    try:
        for line in blob.decode("utf-8").splitlines():
            kind, _, rest = line.partition("\t")
            if kind == "config":
                key, _, value = rest.partition("\t")
                (cfg if key in known_cfg else extra)[key] = value
            elif kind == "task":
                task_keys.append(TaskKey.parse(rest))
            elif kind == "srcvocab":
                src_tokens.append(rest)
            elif kind == "tgtvocab":
                tgt_tokens.append(rest)
            elif kind == "adamstep":
                name, _, value = rest.partition("\t")
                adam_steps[name] = int(value)
            elif kind == "tensor":
                name, shape_s, offset_s = rest.split("\t")
                shape = tuple(int(d) for d in shape_s.split(","))
                manifest.append((name, shape, int(offset_s)))
            else:
                raise CheckpointFormatError(
                    f"{path}: unknown header record {kind!r}")
    except (ValueError, KeyError) as e:
        raise CheckpointFormatError(f"{path}: bad header ({e})") from None

    tensors = {}
    for name, shape, offset in manifest:
        size = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + size > len(payload):
            raise CheckpointTruncatedError(
                f"{path}: tensor {name} at offset {offset} runs past the "
                f"payload end")
        arr = np.frombuffer(payload, dtype="<f4", count=size // 4,
                            offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float32, copy=True)

    config = TrainingConfig.from_dict(cfg)
    languages = extra.get("languages", "")
    languages = languages.split(",") if languages else []

    try:
        model_tensors = {n: a for n, a in tensors.items()
                         if not n.startswith("adam.")}
        params = ModelParams.from_tensor_map(model_tensors, config.variant,
                                             task_keys)
    except KeyError as e:
        raise CheckpointFormatError(
            f"{path}: manifest is missing tensor {e}") from None

    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                      eps=config.adam_eps, steps=adam_steps)
    for name, arr in tensors.items():
        if name.startswith("adam.m."):
            state.m[name[len("adam.m."):]] = arr
        elif name.startswith("adam.v."):
            state.v[name[len("adam.v."):]] = arr

    extra.pop("languages", None)
    return Checkpoint(params=params, state=state, config=config,
                      src_vocab=Vocab(src_tokens), tgt_vocab=Vocab(tgt_tokens),
                      languages=languages, extra=extra)
