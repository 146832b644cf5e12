"""CLI subcommands: full workflow on a miniature corpus."""

import re
from pathlib import Path

import numpy as np
import pytest

from tasknmt.cli import run
from tasknmt.corpus import read_lines, read_token_lines

MINI_SPEC = """\
languages = A,B,C
hub = A
transform.A = identity
transform.B = reverse
transform.C = rotate:1
base_vocab = 12
min_len = 2
max_len = 4
sentences_per_pair = 60
val_sentences = 12
test_sentences = 12
seed = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "toy.cfg"
    spec_path.write_text(MINI_SPEC, encoding="utf-8")
    assert run(["gen-toy", "--spec", str(spec_path), "--out-dir",
                str(root / "data")]) == 0
    assert run(["learn-bpe", "--input", str(root / "data/train.A-B.src"),
                str(root / "data/train.A-B.tgt"),
                str(root / "data/train.A-C.src"),
                str(root / "data/train.A-C.tgt"),
                "--merges", "25", "--output", str(root / "toy.bpe")]) == 0
    assert run(["prepare", "--data-dir", str(root / "data"), "--pairs",
                "A-B,A-C", "--variant", "target", "--bpe",
                str(root / "toy.bpe"), "--out-dir",
                str(root / "prepared")]) == 0
    assert run(["train", "--data-dir", str(root / "prepared"), "--out",
                str(root / "model.ckpt"), "--metrics",
                str(root / "metrics.tsv"), "--seed", "1", "--epochs", "2",
                "--d-hidden", "24", "--d-emb", "24", "--batch-tokens",
                "120", "--validate-every", "0"]) == 0
    return root


class TestWorkflow:
    def test_gen_toy_files(self, workspace):
        assert (workspace / "data/train.A-B.src").exists()
        assert (workspace / "data/test.B-C.src").exists()

    def test_prepare_output_matches_task_grammar(self, workspace):
        lines = read_token_lines(workspace / "prepared/train.A-B.src")
        pattern = re.compile(r"<To[A-C]>")
        for tokens in lines:
            assert pattern.fullmatch(tokens[0])
            assert tokens[-1] == tokens[0]

    def test_prepare_source_specific_grammar(self, workspace):
        out = workspace / "prepared-src"
        assert run(["prepare", "--data-dir", str(workspace / "data"),
                    "--pairs", "A-B,A-C", "--variant", "source", "--bpe",
                    str(workspace / "toy.bpe"), "--out-dir", str(out)]) == 0
        for tokens in read_token_lines(out / "train.B-A.src"):
            assert re.fullmatch(r"<From[A-C]>", tokens[0])
            assert re.fullmatch(r"<To[A-C]>", tokens[1])
            assert tokens[-1] == tokens[1]

    def test_train_wrote_checkpoint_and_metrics(self, workspace):
        assert (workspace / "model.ckpt").exists()
        lines = read_lines(workspace / "metrics.tsv")
        assert lines[0].startswith("seed\tepoch\texamples")
        assert len(lines) >= 2

    def test_translate_and_attention_export(self, workspace):
        src = workspace / "input.txt"
        src.write_text("a11 a13 a12\n", encoding="utf-8")
        out = workspace / "hyp.txt"
        code = run(["translate", "--checkpoint",
                    str(workspace / "model.ckpt"), "--input", str(src),
                    "--output", str(out), "--direction", "A-B", "--bpe",
                    str(workspace / "toy.bpe"), "--attention-dir",
                    str(workspace / "att")])
        assert code == 0
        assert len(read_lines(out)) == 1
        assert (workspace / "att/sentence0000.svg").exists()
        assert (workspace / "att/sentence0000.att.txt").exists()

    def test_translate_beam_flag(self, workspace):
        src = workspace / "input2.txt"
        src.write_text("a11 a12\n", encoding="utf-8")
        out = workspace / "hyp-beam.txt"
        assert run(["translate", "--checkpoint",
                    str(workspace / "model.ckpt"), "--input", str(src),
                    "--output", str(out), "--direction", "A-C", "--bpe",
                    str(workspace / "toy.bpe"), "--beam", "3"]) == 0
        assert len(read_lines(out)) == 1

    def test_score_identity_is_100(self, workspace, capsys):
        hyp = workspace / "selfscore.txt"
        hyp.write_text("b11 b12 b13 b16\nb14 b15 b17 b18 b19\n",
                       encoding="utf-8")
        assert run(["score", "--hyp", str(hyp), "--ref", str(hyp)]) == 0
        out = capsys.readouterr().out
        assert "BLEU = 100.00" in out

    def test_export_attention_command(self, workspace):
        out = workspace / "plot.svg"
        assert run(["export-attention", "--checkpoint",
                    str(workspace / "model.ckpt"), "--direction", "A-B",
                    "--sentence", "a11 a12", "--out", str(out), "--bpe",
                    str(workspace / "toy.bpe")]) == 0
        assert out.exists()

    def test_bad_flags_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["train", "--no-such-flag"])
        assert exc.value.code == 2

    def test_runtime_failure_exits_1_with_tag(self, capsys, tmp_path):
        assert run(["score", "--hyp", str(tmp_path / "missing.txt"),
                    "--ref", str(tmp_path / "missing.txt")]) == 1
        assert "error[" in capsys.readouterr().err

    def test_resolved_config_printed(self, workspace, capsys):
        hyp = workspace / "echo.txt"
        hyp.write_text("x\n", encoding="utf-8")
        run(["score", "--hyp", str(hyp), "--ref", str(hyp)])
        out = capsys.readouterr().out
        assert "resolved configuration" in out

    def test_config_file_overlay_flags_win(self, workspace, capsys):
        cfg = workspace / "train.cfg"
        cfg.write_text("epochs = 9\nd-hidden = 48\n", encoding="utf-8")
        out = workspace / "model-overlay.ckpt"
        assert run(["train", "--data-dir", str(workspace / "prepared"),
                    "--out", str(out), "--config", str(cfg), "--epochs",
                    "1", "--d-emb", "16", "--batch-tokens", "120",
                    "--validate-every", "0", "--seed", "2"]) == 0
        text = capsys.readouterr().out
        assert "epochs = 1" in text       # flag beats config file
        assert "d_hidden = 48" in text    # config file beats default


class TestExperimentCommand:
    def test_mini_experiment_table(self, tmp_path, capsys):
        spec = tmp_path / "toy.cfg"
        spec.write_text(MINI_SPEC, encoding="utf-8")
        code = run(["experiment", "--spec", str(spec), "--out-dir",
                    str(tmp_path / "exp"), "--variants",
                    "shared,target,source,paired", "--seeds", "1",
                    "--epochs", "1", "--d-hidden", "16", "--d-emb", "16",
                    "--batch-tokens", "120", "--validate-every", "0",
                    "--bpe-merges", "25", "--jobs", "1"])
        assert code == 0
        out = capsys.readouterr().out
        table = read_lines(tmp_path / "exp/results.tsv")
        header = table[0].split("\t")
        # one row per variant and metric, zero-shot columns starred
        assert header[:2] == ["variant", "metric"]
        assert "B-C*" in header and "C-B*" in header
        assert len(table) == 1 + 4 * 2
        paired_acc = table[7].split("\t")
        assert paired_acc[0] == "paired"
        assert paired_acc[header.index("B-C*")] == "skipped"
        assert (tmp_path / "exp/model.shared.seed1.ckpt").exists()
        assert (tmp_path / "exp/metrics.target.seed1.tsv").exists()
