"""Command-line entry point wiring the pipeline into reproducible runs.

Every subcommand prints its fully resolved configuration before doing any
work, takes all randomness from explicit seeds, and writes deterministic
outputs.  ``--config`` files hold ``key = value`` lines mirroring the flag
names one to one; explicit flags win on conflict.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bpe import BpeApplier, BpeModel, decode_bpe, learn_bpe, word_freqs
from .corpus import (ConfigError, build_vocab, detokenize, make_examples,
                     merge_bidirectional_corpus, read_lines,
                     read_token_lines, task_token_inventory, tokenize,
                     write_token_lines, augment_task_tokens)
from .decoding import TranslationModel, beam_decode, greedy_decode
from .evaluation import bleu_score, export_attention
from .experiment import ExperimentConfig, format_aligned, results_table, \
    run_experiment
from .model import init_params, task_keys_for_variant
from .toy import ToyCorpusSpec, generate_parallel_corpus, write_corpus
from .training import (TrainingConfig, load_checkpoint, save_checkpoint,
                       train_model)

VARIANTS = ("shared", "target", "source", "paired")


def _read_config_file(path):
    values = {}
    for raw in read_lines(path):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"bad config line {raw!r} in {path}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, defaults):
    """Overlay precedence: explicit flag > config file > default."""
    overlay = {}
    if getattr(args, "config", None):
        overlay = _read_config_file(args.config)
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in overlay:
            caster = type(default) if default is not None else str
            resolved[key] = caster(overlay.pop(key))
        else:
            resolved[key] = default
    unknown = set(overlay) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return resolved


def _print_config(name, values):
    print(f"[{name}] resolved configuration:")
    for key in sorted(values):
        print(f"  {key} = {values[key]}")


def _parse_direction(text):
    parts = text.split("-")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"direction must look like Src-Tgt, got {text!r}")
    return tuple(parts)


def _parse_pairs(text):
    return tuple(_parse_direction(p) for p in text.split(",") if p)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_toy(args):
    if args.spec:
        spec = ToyCorpusSpec.from_config(
            Path(args.spec).read_text(encoding="utf-8"))
    else:
        spec = ToyCorpusSpec()
    if args.seed is not None:
        from dataclasses import replace
        spec = replace(spec, seed=args.seed)
    _print_config("gen-toy", {"spec": args.spec or "<default>",
                              "out_dir": args.out_dir, "seed": spec.seed})
    corpus = generate_parallel_corpus(spec)
    out = write_corpus(corpus, args.out_dir)
    n_train = sum(len(v[0]) for (split, _), v in corpus.splits.items()
                  if split == "train")
    print(f"wrote {out}: {n_train} training sentence pairs, languages "
          f"{','.join(spec.languages)}")
    return 0


def cmd_learn_bpe(args):
    _print_config("learn-bpe", {"input": ",".join(args.input),
                                "merges": args.merges,
                                "output": args.output})
    lines = []
    for path in args.input:
        lines.extend(read_token_lines(path))
    model = learn_bpe(word_freqs(lines), args.merges)
    model.save(args.output)
    print(f"learned {len(model.rules)} merge rules from {len(lines)} "
          f"sentences -> {args.output}")
    return 0


def cmd_apply_bpe(args):
    _print_config("apply-bpe", {"model": args.model, "input": args.input,
                                "output": args.output})
    applier = BpeApplier(BpeModel.load(args.model))
    sentences = [applier.sentence(tokens)
                 for tokens in read_token_lines(args.input)]
    write_token_lines(args.output, sentences)
    print(f"applied BPE to {len(sentences)} sentences -> {args.output}")
    return 0


def cmd_prepare(args):
    pairs = _parse_pairs(args.pairs)
    languages = tuple(sorted({l for p in pairs for l in p}))
    values = {"data_dir": args.data_dir, "pairs": args.pairs,
              "variant": args.variant, "bpe": args.bpe or "<none>",
              "out_dir": args.out_dir, "languages": ",".join(languages)}
    _print_config("prepare", values)

    applier = BpeApplier(BpeModel.load(args.bpe)) if args.bpe else None

    def load_side(split, a, b, ext):
        path = Path(args.data_dir) / f"{split}.{a}-{b}.{ext}"
        sents = read_token_lines(path)
        if applier:
            sents = [applier.sentence(t) for t in sents]
        return sents

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    directions = tuple((a, b) for a, b in pairs) + \
        tuple((b, a) for a, b in pairs)
    for split in ("train", "val"):
        pair_corpora = []
        for a, b in pairs:
            pair_corpora.append((a, b, load_side(split, a, b, "src"),
                                 load_side(split, a, b, "tgt")))
        directed = merge_bidirectional_corpus(pair_corpora)
        examples = make_examples(directed, args.variant, languages)
        by_direction = {}
        for ex in examples:
            by_direction.setdefault(ex.direction, []).append(ex)
        for direction, exs in sorted(by_direction.items()):
            stem = f"{split}.{direction[0]}-{direction[1]}"
            write_token_lines(out / f"{stem}.src",
                              [e.src_tokens for e in exs])
            write_token_lines(out / f"{stem}.tgt",
                              [e.tgt_tokens for e in exs])
        if split == "train":
            reserved = task_token_inventory(args.variant, languages,
                                            directions)
            build_vocab(examples, "src", reserved=reserved).save(
                out / "vocab.src.tsv")
            build_vocab(examples, "tgt").save(out / "vocab.tgt.tsv")
    meta = [f"variant = {args.variant}",
            f"languages = {','.join(languages)}",
            f"pairs = {args.pairs}"]
    (out / "prepare.cfg").write_text("\n".join(meta) + "\n",
                                     encoding="utf-8")
    print(f"prepared {args.variant} data for {len(directions)} directions "
          f"-> {out}")
    return 0


TRAIN_DEFAULTS = {
    "d_hidden": 64, "d_emb": 64, "batch_tokens": 500, "epochs": 5,
    "validate_every": 2000, "lr": 0.001, "seed": 1,
    "attention_query": "intermediate",
}


def cmd_train(args):
    values = _resolve(args, TRAIN_DEFAULTS)
    prep = _read_config_file(Path(args.data_dir) / "prepare.cfg")
    variant = prep["variant"]
    languages = tuple(prep["languages"].split(","))
    pairs = _parse_pairs(prep["pairs"])
    directions = tuple((a, b) for a, b in pairs) + \
        tuple((b, a) for a, b in pairs)
    values.update({"data_dir": args.data_dir, "variant": variant,
                   "out": args.out, "metrics": args.metrics or "<none>"})
    _print_config("train", values)

    from .corpus import ParallelExample, Vocab, strip_attention_selector
    src_vocab = Vocab.load(Path(args.data_dir) / "vocab.src.tsv")
    tgt_vocab = Vocab.load(Path(args.data_dir) / "vocab.tgt.tsv")

    def load_examples(split):
        examples = []
        for direction in directions:
            stem = f"{split}.{direction[0]}-{direction[1]}"
            src = read_token_lines(Path(args.data_dir) / f"{stem}.src")
            tgt = read_token_lines(Path(args.data_dir) / f"{stem}.tgt")
            for s, t in zip(src, tgt):
                key, _ = strip_attention_selector(variant, s, languages)
                examples.append(ParallelExample(s, t, key, direction))
        return examples

    train_examples = load_examples("train")
    val_examples = load_examples("val")
    config = TrainingConfig(
        d_hidden=values["d_hidden"], d_emb=values["d_emb"],
        batch_tokens=values["batch_tokens"], variant=variant,
        epochs=values["epochs"], validate_every=values["validate_every"],
        lr=values["lr"], attention_query=values["attention_query"])
    keys = task_keys_for_variant(variant, languages, directions)
    params = init_params(config.d_hidden, config.d_emb, len(src_vocab),
                         len(tgt_vocab), variant, keys, values["seed"])

    def log(row):
        print(f"  epoch {row.epoch:6.2f}  examples {row.examples:7d}  "
              f"train_nll {row.train_nll:7.4f}  val_ppl {row.val_ppl:9.3f}")

    outcome = train_model(params, train_examples, val_examples, src_vocab,
                          tgt_vocab, languages, config, values["seed"],
                          log=log)
    save_checkpoint(args.out, outcome.params, outcome.state, config,
                    src_vocab, tgt_vocab, languages,
                    extra={"experiment_seed": values["seed"]})
    if args.metrics:
        outcome.metrics.save(args.metrics)
    print(f"best validation perplexity {outcome.best_val_ppl:.4f} -> "
          f"{args.out}")
    return 0


def _load_model(args):
    ckpt = load_checkpoint(args.checkpoint)
    return TranslationModel.from_checkpoint(ckpt)


def _prepare_source(model, args, line):
    tokens = tokenize(line)
    if args.bpe:
        applier = _prepare_source.appliers.setdefault(
            args.bpe, BpeApplier(BpeModel.load(args.bpe)))
        tokens = applier.sentence(tokens)
    direction = _parse_direction(args.direction)
    return augment_task_tokens(model.variant, direction, tokens,
                               model.languages)


_prepare_source.appliers = {}


def cmd_translate(args):
    values = {"checkpoint": args.checkpoint, "input": args.input,
              "output": args.output, "direction": args.direction,
              "beam": args.beam, "bpe": args.bpe or "<none>",
              "attention_dir": args.attention_dir or "<none>"}
    _print_config("translate", values)
    model = _load_model(args)
    lines = read_lines(args.input)
    outputs = []
    for i, line in enumerate(lines):
        augmented = _prepare_source(model, args, line)
        if args.beam > 1:
            hyp = beam_decode(model, augmented, beam=args.beam)
            tokens = model.tgt_vocab.decode(hyp.token_ids)
            matrix = (np.stack(hyp.attention, axis=1)
                      if hyp.attention else np.zeros((len(augmented), 0)))
        else:
            tokens, matrix = greedy_decode(model, augmented)
        words = decode_bpe(tokens, strict=False)
        outputs.append(detokenize(words))
        if args.attention_dir:
            out = Path(args.attention_dir)
            out.mkdir(parents=True, exist_ok=True)
            export_attention(matrix, augmented, tokens,
                             out / f"sentence{i:04d}.svg")
    with open(args.output, "w", encoding="utf-8") as f:
        for line in outputs:
            f.write(line + "\n")
    print(f"translated {len(outputs)} sentences -> {args.output}")
    return 0


def cmd_score(args):
    _print_config("score", {"hyp": args.hyp, "ref": args.ref})
    report = bleu_score(read_lines(args.hyp), read_lines(args.ref))
    print(report.format())
    return 0


def cmd_export_attention(args):
    values = {"checkpoint": args.checkpoint, "direction": args.direction,
              "sentence": args.sentence, "out": args.out,
              "bpe": args.bpe or "<none>"}
    _print_config("export-attention", values)
    model = _load_model(args)
    augmented = _prepare_source(model, args, args.sentence)
    tokens, matrix = greedy_decode(model, augmented)
    svg_path, txt_path = export_attention(matrix, augmented, tokens,
                                          args.out)
    print(f"decoded {len(tokens)} tokens; wrote {svg_path} and {txt_path}")
    return 0


EXPERIMENT_DEFAULTS = {
    "variants": "shared,target,source,paired", "seeds": 5, "base_seed": 1,
    "d_hidden": 64, "d_emb": 64, "batch_tokens": 500, "epochs": 5,
    "validate_every": 2000, "lr": 0.001, "bpe_merges": 200, "jobs": 1,
    "eval_sentences": 0, "attention_query": "intermediate",
}


def cmd_experiment(args):
    values = _resolve(args, EXPERIMENT_DEFAULTS)
    if args.spec:
        spec = ToyCorpusSpec.from_config(
            Path(args.spec).read_text(encoding="utf-8"))
    else:
        spec = ToyCorpusSpec()
    variants = tuple(v for v in values["variants"].split(",") if v)
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    values.update({"spec": args.spec or "<default>",
                   "out_dir": args.out_dir})
    _print_config("experiment", values)
    cfg = ExperimentConfig(
        spec=spec, out_dir=args.out_dir, variants=variants,
        n_seeds=values["seeds"], base_seed=values["base_seed"],
        d_hidden=values["d_hidden"], d_emb=values["d_emb"],
        batch_tokens=values["batch_tokens"], epochs=values["epochs"],
        validate_every=values["validate_every"], lr=values["lr"],
        bpe_merges=values["bpe_merges"], jobs=values["jobs"],
        eval_sentences=values["eval_sentences"],
        attention_query=values["attention_query"])
    result = run_experiment(cfg)
    print(format_aligned(results_table(result)))
    print(f"full outputs in {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tasknmt",
        description="Multilingual GRU translation with task-selected "
                    "attention banks")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate the synthetic corpus")
    p.add_argument("--spec", help="toy corpus config file (key = value)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_gen_toy)

    p = sub.add_parser("learn-bpe", help="learn joint merge rules")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--merges", type=int, default=200)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_learn_bpe)

    p = sub.add_parser("apply-bpe", help="apply merge rules to a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_apply_bpe)

    p = sub.add_parser("prepare",
                       help="augment and index parallel data for training")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--pairs", required=True,
                   help="comma list of trained pairs, e.g. A-B,A-C")
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--bpe", help="BPE model file to apply")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train one model on prepared data")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="metrics TSV path")
    p.add_argument("--config", help="key = value overlay file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--d-hidden", type=int)
    p.add_argument("--d-emb", type=int)
    p.add_argument("--batch-tokens", type=int)
    p.add_argument("--validate-every", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--attention-query", choices=("intermediate", "prev"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("translate", help="decode a file of sentences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--direction", required=True, help="e.g. A-B")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--bpe", help="BPE model file for the source side")
    p.add_argument("--attention-dir",
                   help="write per-sentence attention SVG exports here")
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("score", help="corpus BLEU of hypothesis vs "
                                     "reference")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("export-attention",
                       help="decode one sentence and export its attention")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--direction", required=True)
    p.add_argument("--sentence", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bpe")
    p.set_defaults(fn=cmd_export_attention)

    p = sub.add_parser("experiment",
                       help="full multi-variant, multi-seed comparison")
    p.add_argument("--spec", help="toy corpus config file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key = value overlay file")
    p.add_argument("--variants")
    p.add_argument("--seeds", type=int)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--d-hidden", type=int)
    p.add_argument("--d-emb", type=int)
    p.add_argument("--batch-tokens", type=int)
    p.add_argument("--validate-every", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--bpe-merges", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--eval-sentences", type=int)
    p.add_argument("--attention-query", choices=("intermediate", "prev"))
    p.set_defaults(fn=cmd_experiment)
    return parser


def run(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as err:  # surface a one-line tagged diagnostic
        module = type(err).__module__.split(".")[-1]
        print(f"error[{module}]: {err}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
