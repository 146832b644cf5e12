"""Model architecture: GRU cells, encoder, task-selected attention, decoder."""

import numpy as np
import pytest

import tasknmt.autodiff as ad
from helpers import (DIRECTIONS, LANGS, batch_arrays, o_attention, o_context,
                     o_decoder_step, o_encode, o_gru, sequence_loss_builder,
                     small_model)
from tasknmt.autodiff import Graph, gradient_check
from tasknmt.model import (AttentionParams, GraphBinding, TaskKey,
                           UnknownTaskError, attention_scores,
                           context_vector, count_parameters, decoder_step,
                           encode, gru_step, init_params,
                           select_attention_params, task_key_for_direction,
                           task_keys_for_variant)


def binding64(params):
    return GraphBinding(Graph(dtype=np.float64), params)


class TestTaskKey:
    def test_pair_requires_distinct_languages(self):
        with pytest.raises(ValueError):
            TaskKey.pair("A", "A")

    @pytest.mark.parametrize("key", [
        TaskKey.shared(), TaskKey.target("En"), TaskKey.source("Fr"),
        TaskKey.pair("Fr", "En")])
    def test_parse_roundtrip(self, key):
        assert TaskKey.parse(str(key)) == key

    def test_keys_for_variants(self):
        langs = ("En", "Fr")
        dirs = (("En", "Fr"), ("Fr", "En"))
        assert task_keys_for_variant("shared", langs, dirs) == \
            [TaskKey.shared()]
        assert task_keys_for_variant("target", langs, dirs) == \
            [TaskKey.target("En"), TaskKey.target("Fr")]
        assert task_keys_for_variant("paired", langs, dirs) == \
            [TaskKey.pair("En", "Fr"), TaskKey.pair("Fr", "En")]

    def test_direction_keys(self):
        assert task_key_for_direction("target", "Fr", "En") == \
            TaskKey.target("En")
        assert task_key_for_direction("shared", "Fr", "En") == \
            TaskKey.target("En")
        assert task_key_for_direction("source", "Fr", "En") == \
            TaskKey.source("Fr")
        assert task_key_for_direction("paired", "Fr", "En") == \
            TaskKey.pair("Fr", "En")


class TestSelectAttentionParams:
    def test_target_bank_returns_language_entry(self):
        params = small_model("target")
        key = TaskKey.target("B")
        task = select_attention_params(params.attention, key)
        assert task is params.attention.tasks[key]

    def test_shared_bank_accepts_any_key(self):
        params = small_model("shared")
        only = params.attention.tasks[TaskKey.shared()]
        for key in (TaskKey.shared(), TaskKey.target("A"),
                    TaskKey.pair("B", "C")):
            assert select_attention_params(params.attention, key) is only

    def test_paired_bank_rejects_untrained_direction(self):
        params = small_model("paired")  # trained A<->B, A<->C only
        with pytest.raises(UnknownTaskError, match="pair:B:C"):
            select_attention_params(params.attention, TaskKey.pair("B", "C"))


class TestGruStep:
    def test_zero_params_keep_zero_state(self):
        params = small_model(dtype=np.float64)
        for name, arr in params.named_tensors():
            arr[:] = 0.0
        b = binding64(params)
        x = b.graph.input(np.zeros((params.d_emb, 1)))
        h = b.graph.input(np.zeros((params.d_hidden, 1)))
        out = gru_step(b, "enc_fwd", x, h)
        assert np.all(out.value == 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_formula_oracle(self, seed):
        rng = np.random.default_rng(seed)
        params = small_model(seed=seed, dtype=np.float64)
        x = rng.normal(size=(params.d_emb,))
        h = rng.normal(size=(params.d_hidden,))
        b = binding64(params)
        out = gru_step(b, "dec_gru1", b.graph.input(x[:, None]),
                       b.graph.input(h[:, None]))
        np.testing.assert_allclose(out.value[:, 0],
                                   o_gru(params.dec_gru1, x, h), atol=1e-6)

    def test_gates_stay_in_unit_interval(self):
        rng = np.random.default_rng(3)
        params = small_model(dtype=np.float64)
        b = binding64(params)
        x = b.graph.input(rng.normal(size=(params.d_emb, 4)) * 5)
        h = b.graph.input(rng.normal(size=(params.d_hidden, 4)) * 5)
        cell = gru_step(b, "enc_fwd", x, h)
        z, r = cell.cache[0], cell.cache[1]
        for gate in (z, r):
            assert np.all((gate > 0) & (gate < 1))


class TestEncode:
    def test_single_position_zero_params(self):
        params = small_model(dtype=np.float64)
        for name, arr in params.named_tensors():
            arr[:] = 0.0
        b = binding64(params)
        enc = encode(b, np.array([[2]]))
        assert enc.states[0].value.shape == (2 * params.d_hidden, 1)
        assert np.all(enc.states[0].value == 0.0)

    def test_empty_sequence_rejected(self):
        params = small_model(dtype=np.float64)
        with pytest.raises(ValueError):
            encode(binding64(params), np.zeros((1, 0), dtype=np.int64))

    def test_matches_stepwise_gru_composition(self):
        rng = np.random.default_rng(4)
        params = small_model(seed=4, dtype=np.float64)
        ids = rng.integers(0, params.src_emb.shape[0], size=(1, 3))
        b = binding64(params)
        enc = encode(b, ids)
        states, s0 = o_encode(params, ids[0])
        for node, ref in zip(enc.states, states):
            np.testing.assert_allclose(node.value[:, 0], ref, atol=1e-6)
        np.testing.assert_allclose(enc.s0.value[:, 0], s0, atol=1e-6)

    def test_reversal_swaps_direction_roles(self):
        rng = np.random.default_rng(5)
        params = small_model(seed=5, dtype=np.float64)
        swapped = small_model(seed=5, dtype=np.float64)
        swapped.enc_fwd, swapped.enc_bwd = swapped.enc_bwd, swapped.enc_fwd
        ids = rng.integers(0, params.src_emb.shape[0], size=(1, 4))
        d = params.d_hidden
        enc = encode(binding64(params), ids)
        enc_rev = encode(binding64(swapped), ids[:, ::-1].copy())
        length = ids.shape[1]
        for i in range(length):
            fwd_rev = enc_rev.states[i].value[d:, 0]
            bwd_orig = enc.states[length - 1 - i].value[:d, 0]
            np.testing.assert_allclose(fwd_rev, bwd_orig, atol=1e-12)


class TestAttention:
    def test_zero_score_vector_gives_uniform_weights(self):
        params = small_model(dtype=np.float64)
        params.attention.score_vec[:] = 0.0
        rng = np.random.default_rng(0)
        b = binding64(params)
        enc = encode(b, rng.integers(0, 10, size=(2, 5)))
        query = b.graph.input(rng.normal(size=(params.d_hidden, 2)))
        y_emb = b.graph.input(rng.normal(size=(params.d_emb, 2)))
        alpha = attention_scores(b, TaskKey.target("A"), query, enc, y_emb)
        np.testing.assert_allclose(alpha.value, 0.2, atol=1e-12)

    def test_single_position_gets_full_weight(self):
        params = small_model(dtype=np.float64)
        rng = np.random.default_rng(1)
        b = binding64(params)
        enc = encode(b, rng.integers(0, 10, size=(1, 1)))
        query = b.graph.input(rng.normal(size=(params.d_hidden, 1)))
        y_emb = b.graph.input(rng.normal(size=(params.d_emb, 1)))
        alpha = attention_scores(b, TaskKey.target("B"), query, enc, y_emb)
        np.testing.assert_allclose(alpha.value, [[1.0]], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_oracle(self, seed):
        rng = np.random.default_rng(seed)
        params = small_model(seed=seed, dtype=np.float64)
        ids = rng.integers(0, 10, size=(1, 4))
        query = rng.normal(size=(params.d_hidden,))
        y_emb = rng.normal(size=(params.d_emb,))
        b = binding64(params)
        enc = encode(b, ids)
        alpha = attention_scores(b, TaskKey.target("C"),
                                 b.graph.input(query[:, None]), enc,
                                 b.graph.input(y_emb[:, None]))
        states = [n.value[:, 0] for n in enc.states]
        expected = o_attention(params, TaskKey.target("C"), query, states,
                               y_emb)
        np.testing.assert_allclose(alpha.value[:, 0], expected, atol=1e-6)
        assert abs(alpha.value.sum() - 1.0) < 1e-6


class TestContextVector:
    def _setup(self, seed, length=4):
        rng = np.random.default_rng(seed)
        params = small_model(seed=seed, dtype=np.float64)
        b = binding64(params)
        enc = encode(b, rng.integers(0, 10, size=(1, length)))
        return rng, b, enc

    def test_onehot_selects_state(self):
        rng, b, enc = self._setup(0)
        alpha = np.zeros((4, 1))
        alpha[2] = 1.0
        ctx = context_vector(b.graph.input(alpha), enc)
        np.testing.assert_allclose(ctx.value, enc.states[2].value,
                                   atol=1e-12)

    def test_uniform_averages_states(self):
        rng, b, enc = self._setup(1)
        alpha = np.full((4, 1), 0.25)
        ctx = context_vector(b.graph.input(alpha), enc)
        mean = sum(n.value for n in enc.states) / 4
        np.testing.assert_allclose(ctx.value, mean, atol=1e-12)

    def test_matches_direct_sum(self):
        rng, b, enc = self._setup(2)
        alpha = rng.dirichlet(np.ones(4))[:, None]
        ctx = context_vector(b.graph.input(alpha), enc)
        expected = o_context(alpha[:, 0], [n.value[:, 0] for n in enc.states])
        np.testing.assert_allclose(ctx.value[:, 0], expected, atol=1e-6)


class TestDecoderStep:
    def _run_graph_steps(self, params, key, ids, y_ids, query_mode):
        b = GraphBinding(Graph(dtype=params.src_emb.dtype), params)
        enc = encode(b, ids)
        state = enc.s0
        steps = []
        for y in y_ids:
            step = decoder_step(b, key, state,
                                np.full(ids.shape[0], y, dtype=np.int64),
                                enc, query_mode)
            steps.append(step)
            state = step.state
        return enc, steps

    @pytest.mark.parametrize("query_mode", ["intermediate", "prev"])
    def test_two_steps_match_compositional_oracle(self, query_mode):
        params = small_model(seed=7, dtype=np.float64)
        rng = np.random.default_rng(7)
        ids = rng.integers(0, 10, size=(1, 4))
        key = TaskKey.target("B")
        _, steps = self._run_graph_steps(params, key, ids, [1, 5],
                                         query_mode)

        states, s = o_encode(params, ids[0])
        for step, y_prev in zip(steps, [1, 5]):
            s, logits, alpha = o_decoder_step(params, key, s, y_prev, states,
                                              query_mode)
            np.testing.assert_allclose(step.logits.value[:, 0], logits,
                                       atol=1e-6)
            np.testing.assert_allclose(step.alpha.value[:, 0], alpha,
                                       atol=1e-6)

    def test_probabilities_and_attention_normalize(self):
        params = small_model(seed=8, dtype=np.float64)
        rng = np.random.default_rng(8)
        ids = rng.integers(0, 10, size=(3, 5))
        _, steps = self._run_graph_steps(params, TaskKey.target("A"), ids,
                                         [2, 3], "intermediate")
        for step in steps:
            g = step.logits.graph
            probs = ad.softmax_columns(step.logits)
            np.testing.assert_allclose(probs.value.sum(axis=0), 1.0,
                                       atol=1e-6)
            np.testing.assert_allclose(step.alpha.value.sum(axis=0), 1.0,
                                       atol=1e-6)

    def test_unknown_task_key_raises(self):
        params = small_model("paired", dtype=np.float64)
        b = binding64(params)
        enc = encode(b, np.array([[1, 2]]))
        with pytest.raises(UnknownTaskError):
            decoder_step(b, TaskKey.pair("B", "C"), enc.s0, np.array([0]),
                         enc)


class TestParameterAccounting:
    def test_per_task_increment_at_d256(self):
        shared = init_params(256, 32, 10, 10, "shared",
                             task_keys_for_variant("shared", LANGS,
                                                   DIRECTIONS), 0)
        four = ("En", "Fr", "Es", "De")
        target = init_params(256, 32, 10, 10, "target",
                             task_keys_for_variant("target", four, ()), 0)
        c_shared = count_parameters(shared)
        c_target = count_parameters(target)
        assert c_shared.groups["attention_tasks"] == 256 * 256 + 256 == 65792
        assert c_target.total - c_shared.total == 3 * 65792 == 197376

    def test_shared_vs_itself(self):
        params = small_model("shared")
        c = count_parameters(params)
        assert c.total - count_parameters(params).total == 0

    @pytest.mark.parametrize("variant,expected", [
        ("shared", 1), ("target", 3), ("source", 3), ("paired", 4)])
    def test_bank_size_law(self, variant, expected):
        params = small_model(variant)
        assert len(params.attention.tasks) == expected
        d = params.d_hidden
        shared = small_model("shared")
        delta = (count_parameters(params).total
                 - count_parameters(shared).total)
        assert delta == (expected - 1) * (d * d + d)


class TestParameterSelection:
    def _logits_bytes(self, params, key, ids):
        b = GraphBinding(Graph(dtype=np.float32), params)
        enc = encode(b, ids)
        step = decoder_step(b, key, enc.s0, np.array([1] * ids.shape[0]),
                            enc)
        return step.logits.value.tobytes()

    def test_swapping_entries_and_keys_is_identity(self):
        ids = np.array([[1, 4, 2]])
        params = small_model("target", seed=11)
        before = self._logits_bytes(params, TaskKey.target("A"), ids)
        tasks = params.attention.tasks
        a, b_key = TaskKey.target("A"), TaskKey.target("B")
        tasks[a], tasks[b_key] = tasks[b_key], tasks[a]
        after = self._logits_bytes(params, TaskKey.target("B"), ids)
        assert before == after

    def test_shared_bank_output_ignores_key(self):
        ids = np.array([[3, 1, 5, 2]])
        params = small_model("shared", seed=12)
        outs = {self._logits_bytes(params, key, ids)
                for key in (TaskKey.target("A"), TaskKey.target("C"),
                            TaskKey.source("B"), TaskKey.shared())}
        assert len(outs) == 1

    def test_non_bank_tensors_are_shared_nodes_across_tasks(self):
        params = small_model("target", seed=13)
        b = GraphBinding(Graph(dtype=np.float32), params)
        enc = encode(b, np.array([[1, 2]]))
        s1 = decoder_step(b, TaskKey.target("A"), enc.s0, np.array([0]), enc)
        decoder_step(b, TaskKey.target("B"), s1.state, np.array([0]), enc)
        names = list(b.graph.params)
        task_names = [n for n in names if n.startswith("attn.task.")]
        assert len(task_names) == 4  # two tasks x (weights, bias)
        # every shared tensor registered exactly once despite two tasks
        assert len(names) == len(set(names))

    def test_attention_columns_normalized_all_variants_float32(self):
        rng = np.random.default_rng(14)
        for variant in ("shared", "target", "source", "paired"):
            params = small_model(variant, seed=14)
            ids = rng.integers(0, 10, size=(4, 6))
            key = task_key_for_direction(variant, "A", "B")
            b = GraphBinding(Graph(dtype=np.float32), params)
            enc = encode(b, ids)
            step = decoder_step(b, key, enc.s0, np.array([1, 2, 3, 4]), enc)
            np.testing.assert_allclose(step.alpha.value.sum(axis=0), 1.0,
                                       atol=1e-5)


class TestEndToEndGradients:
    @pytest.mark.parametrize("query_mode", ["intermediate", "prev"])
    def test_full_step_gradient_check_small(self, query_mode):
        params = small_model("target", d=4, emb=3, n_src=7, n_tgt=6,
                             seed=15, dtype=np.float64)
        rng = np.random.default_rng(15)
        src, tgt_in, tgt_out, mask = batch_arrays(rng, 2, 3, 3, 7, 6)
        mask[1, 2] = 0.0
        build = sequence_loss_builder(params, TaskKey.target("B"), src,
                                      tgt_in, tgt_out, mask, query_mode)
        report = gradient_check(build, dict(params.named_tensors()),
                                eps=1e-5, tol=1e-5, sample=250)
        assert report.passed, str(report)
