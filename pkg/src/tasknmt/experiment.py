"""End-to-end toy experiments: the full pipeline for every variant and seed.

One experiment generates the toy corpus, learns joint BPE, prepares
augmented task-token data per attention variant, trains ``n_seeds`` models
per variant with identical data order and per-tensor-seeded inits, then
greedy-decodes every trained and zero-shot test direction and tabulates
accuracy, BLEU, and attention entropy, averaged over seeds.

All randomness descends from the experiment seed, so repeated runs write
byte-identical metrics and results files.  Per-(variant, seed) trainings
are independent and can run in parallel worker processes.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .bpe import BpeApplier, learn_bpe, word_freqs
from .corpus import (build_vocab, make_examples, merge_bidirectional_corpus,
                     task_token_inventory)
from .decoding import TranslationModel
from .evaluation import DirectionReport, evaluate_direction, exact_match
from .model import init_params, task_keys_for_variant
from .toy import ToyCorpusSpec, generate_parallel_corpus
from .training import (MetricsLog, TrainingConfig, load_checkpoint,
                       save_checkpoint, train_model)
from .bpe import decode_bpe
from .decoding import greedy_decode_batch
from .corpus import augment_task_tokens

VARIANT_ORDER = ("shared", "target", "source", "paired")


@dataclass
class ExperimentConfig:
    spec: ToyCorpusSpec = field(default_factory=ToyCorpusSpec)
    out_dir: str = "experiment-out"
    variants: tuple = VARIANT_ORDER
    n_seeds: int = 5
    base_seed: int = 1
    d_hidden: int = 64
    d_emb: int = 64
    batch_tokens: int = 500
    epochs: int = 6
    validate_every: int = 2000
    lr: float = 0.001
    # stop after the language-prefix and digit merges so the trailing
    # number subwords stay shared across languages; full-word merges would
    # leave the zero-shot directions without common vocabulary to transfer
    # through
    bpe_merges: int = 25
    attention_query: str = "intermediate"
    jobs: int = 1
    val_score_sentences: int = 25  # per direction, for the metrics column
    eval_sentences: int = 0        # test sentences per direction; 0 = all

    @property
    def seeds(self):
        return [self.base_seed + i for i in range(self.n_seeds)]

    def training_config(self, variant):
        return TrainingConfig(
            d_hidden=self.d_hidden, d_emb=self.d_emb,
            batch_tokens=self.batch_tokens, variant=variant,
            seeds=self.n_seeds, epochs=self.epochs,
            validate_every=self.validate_every, lr=self.lr,
            attention_query=self.attention_query)


@dataclass
class VariantData:
    """Everything one variant needs to train and evaluate."""

    variant: str
    languages: tuple
    train_examples: list
    val_examples: list
    src_vocab: "Vocab"
    tgt_vocab: "Vocab"
    val_directed: dict    # direction -> (bpe'd src lines, raw ref lines)
    test_directed: dict   # direction -> (bpe'd src lines, raw ref lines)
    zero_shot: tuple


def prepare_variant_data(cfg, variant):
    """Generate, BPE, merge, augment, and build vocabularies."""
    spec = cfg.spec
    corpus = generate_parallel_corpus(spec)
    languages = spec.languages

    train_sides = {pair: corpus.sides("train", pair)
                   for pair in spec.trained_pairs}
    model = learn_bpe(word_freqs(
        [s for pair in spec.trained_pairs for side in train_sides[pair]
         for s in side]), cfg.bpe_merges)
    applier = BpeApplier(model)

    def bpe_lines(lines):
        return [applier.sentence(tokens) for tokens in lines]

    directed_train = merge_bidirectional_corpus(
        [(a, b, bpe_lines(train_sides[(a, b)][0]),
          bpe_lines(train_sides[(a, b)][1]))
         for a, b in spec.trained_pairs])
    train_examples = make_examples(directed_train, variant, languages)

    directed_val = merge_bidirectional_corpus(
        [(a, b, bpe_lines(corpus.sides("val", (a, b))[0]),
          bpe_lines(corpus.sides("val", (a, b))[1]))
         for a, b in spec.trained_pairs])
    val_examples = make_examples(directed_val, variant, languages)

    reserved = task_token_inventory(variant, languages,
                                    spec.trained_directions)
    src_vocab = build_vocab(train_examples, "src", reserved=reserved)
    tgt_vocab = build_vocab(train_examples, "tgt")

    def directed_eval(split, directions):
        out = {}
        for direction in directions:
            src_raw, ref_raw = corpus.directed(split, direction)
            out[direction] = (bpe_lines(src_raw), ref_raw)
        return out

    return VariantData(
        variant=variant, languages=languages,
        train_examples=train_examples, val_examples=val_examples,
        src_vocab=src_vocab, tgt_vocab=tgt_vocab,
        val_directed=directed_eval("val", spec.trained_directions),
        test_directed=directed_eval(
            "test", spec.trained_directions + spec.zero_shot_directions),
        zero_shot=spec.zero_shot_directions)


def _subset_scorer(cfg, data, tconfig):
    """Decode a fixed validation slice and report exact-match accuracy."""
    take = cfg.val_score_sentences
    if take <= 0:
        return None
    slices = []
    for direction, (src, refs) in sorted(data.val_directed.items()):
        aug = [augment_task_tokens(data.variant, direction, toks,
                                   data.languages)
               for toks in src[:take]]
        slices.append((aug, [" ".join(r) for r in refs[:take]]))

    def score(params):
        model = TranslationModel(params, data.src_vocab, data.tgt_vocab,
                                 data.languages, data.variant,
                                 tconfig.attention_query)
        hyps, refs = [], []
        for aug, ref_lines in slices:
            for tokens, _ in greedy_decode_batch(model, aug):
                hyps.append(" ".join(decode_bpe(tokens, strict=False)))
            refs.extend(ref_lines)
        return exact_match(hyps, refs)

    return score


def checkpoint_path(out_dir, variant, seed):
    return Path(out_dir) / f"model.{variant}.seed{seed}.ckpt"


def metrics_path(out_dir, variant, seed):
    return Path(out_dir) / f"metrics.{variant}.seed{seed}.tsv"


def train_one(cfg, variant, seed):
    """Train one (variant, seed) model and persist checkpoint + metrics.

    Runs standalone in a worker process: data preparation is deterministic
    and regenerated locally.
    """
    data = prepare_variant_data(cfg, variant)
    tconfig = cfg.training_config(variant)
    keys = task_keys_for_variant(variant, data.languages,
                                 cfg.spec.trained_directions)
    params = init_params(cfg.d_hidden, cfg.d_emb, len(data.src_vocab),
                         len(data.tgt_vocab), variant, keys, seed)
    outcome = train_model(params, data.train_examples, data.val_examples,
                          data.src_vocab, data.tgt_vocab, data.languages,
                          tconfig, seed,
                          score_fn=_subset_scorer(cfg, data, tconfig))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = checkpoint_path(cfg.out_dir, variant, seed)
    save_checkpoint(ckpt, outcome.params, outcome.state, tconfig,
                    data.src_vocab, data.tgt_vocab, data.languages,
                    extra={"experiment_seed": seed})
    outcome.metrics.save(metrics_path(cfg.out_dir, variant, seed))
    return str(ckpt)


def _train_star(args):
    return train_one(*args)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: dict        # variant -> {direction -> DirectionReport}
    metrics: dict        # (variant, seed) -> MetricsLog
    directions: tuple
    zero_shot: tuple


def run_experiment(cfg):
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "toy.cfg").write_text(cfg.spec.to_config(), encoding="utf-8")

    tasks = [(cfg, variant, seed) for variant in cfg.variants
             for seed in cfg.seeds]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            list(pool.map(_train_star, tasks))
    else:
        for task in tasks:
            _train_star(task)

    reports = {}
    metrics = {}
    directions = cfg.spec.trained_directions + cfg.spec.zero_shot_directions
    for variant in cfg.variants:
        data = prepare_variant_data(cfg, variant)
        models = []
        for seed in cfg.seeds:
            ckpt = load_checkpoint(checkpoint_path(cfg.out_dir, variant,
                                                   seed))
            models.append(TranslationModel.from_checkpoint(ckpt))
            metrics[(variant, seed)] = MetricsLog.load(
                metrics_path(cfg.out_dir, variant, seed))
        reports[variant] = {}
        for direction in directions:
            src, refs = data.test_directed[direction]
            if cfg.eval_sentences:
                src = src[:cfg.eval_sentences]
                refs = refs[:cfg.eval_sentences]
            reports[variant][direction] = evaluate_direction(
                models, src, refs, direction,
                zero_shot=direction in cfg.spec.zero_shot_directions)

    result = ExperimentResult(config=cfg, reports=reports, metrics=metrics,
                              directions=directions,
                              zero_shot=cfg.spec.zero_shot_directions)
    write_results(result, out_dir)
    return result


def _direction_label(direction, zero_shot):
    label = f"{direction[0]}-{direction[1]}"
    return label + "*" if direction in zero_shot else label


def results_table(result):
    """Rows of (variant, metric, cells...) matching the direction order."""
    header = ["variant", "metric"] + [
        _direction_label(d, result.zero_shot) for d in result.directions]
    rows = [header]
    for variant in result.config.variants:
        for metric in ("accuracy", "bleu"):
            cells = [variant, metric]
            for direction in result.directions:
                report = result.reports[variant][direction]
                if report.skipped:
                    cells.append("skipped")
                elif metric == "accuracy":
                    cells.append(f"{report.mean_accuracy:.4f}")
                else:
                    cells.append(f"{report.mean_bleu:.2f}")
            rows.append(cells)
    return rows


def format_aligned(rows):
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def write_results(result, out_dir):
    out_dir = Path(out_dir)
    rows = results_table(result)
    with open(out_dir / "results.tsv", "w", encoding="utf-8") as f:
        for row in rows:
            f.write("\t".join(row) + "\n")
    (out_dir / "results.txt").write_text(format_aligned(rows),
                                         encoding="utf-8")

    with open(out_dir / "entropy.tsv", "w", encoding="utf-8") as f:
        f.write("variant\tdirection\tmean_entropy\tper_seed\n")
        for variant in result.config.variants:
            for direction in result.directions:
                report = result.reports[variant][direction]
                if report.skipped or not report.per_seed_entropy:
                    continue
                per_seed = ",".join(f"{e:.6f}"
                                    for e in report.per_seed_entropy)
                f.write(f"{variant}\t{_direction_label(direction, result.zero_shot)}"
                        f"\t{report.mean_entropy:.6f}\t{per_seed}\n")
