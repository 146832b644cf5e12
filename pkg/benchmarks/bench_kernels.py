"""Benchmark the compiled kernel lane against the numpy fallback.

Times each kernel on training-shaped inputs, then an end-to-end training
step (graph build + forward + backward + Adam) on a realistic toy batch
with either lane selected.

Run:  python benchmarks/bench_kernels.py [--repeat 2000]
"""

import argparse
import time

import numpy as np

from tasknmt import kernels
from tasknmt.kernels import _python

try:
    from tasknmt.kernels import _speedups
except ImportError:
    _speedups = None


def timeit(fn, repeat):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat * 1e6  # us


def kernel_cases(dtype=np.float32, d=64, b=32, l=12, v=200):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(d, b)).astype(dtype)
    y = rng.normal(size=(d, b)).astype(dtype)
    z = rng.uniform(0.05, 0.95, size=(d, b)).astype(dtype)
    g = rng.normal(size=(d, b)).astype(dtype)
    logits = rng.normal(scale=3, size=(v, b)).astype(dtype)
    targets = rng.integers(0, v, size=b).astype(np.int64)
    mask = np.ones(b, dtype=dtype)
    proj = rng.normal(size=(l, d, b)).astype(dtype)
    vvec = rng.normal(size=d).astype(dtype)
    alpha = rng.dirichlet(np.ones(l), size=b).T.astype(dtype).copy()
    states = rng.normal(size=(l, 2 * d, b)).astype(dtype)
    g_lb = rng.normal(size=(l, b)).astype(dtype)
    g_hb = rng.normal(size=(2 * d, b)).astype(dtype)
    _, tcache = _python.attention_energy(x, proj, vvec)
    _, probs = _python.softmax_xent_columns(logits, targets, mask)
    param = rng.normal(size=(v, d)).astype(dtype)
    grad = rng.normal(size=(v, d)).astype(dtype)
    m = np.zeros_like(param)
    vmom = np.zeros_like(param)
    return [
        ("sigmoid", (x,)),
        ("tanh", (x,)),
        ("gru_gates_fwd", (x, y, g)),
        ("gru_out_fwd", (x, z, g)),
        ("gru_out_bwd", (g, z, np.tanh(x), y)),
        ("gru_gates_bwd", (g, x, z, z, y)),
        ("softmax_columns", (logits,)),
        ("softmax_xent_columns", (logits, targets, mask)),
        ("softmax_xent_columns_grad", (probs, targets, mask, 1.0)),
        ("attention_energy", (x, proj, vvec)),
        ("attention_energy_grad", (tcache, vvec, g_lb)),
        ("context_combine", (alpha, states)),
        ("context_combine_grad", (alpha, states, g_hb)),
        ("adam_step", (param, grad, m, vmom, 3, 1e-3, 0.9, 0.999, 1e-8)),
    ]


def bench_kernels(repeat):
    print(f"{'kernel':<28} {'numpy (us)':>12} {'compiled (us)':>14} "
          f"{'speedup':>8}")
    for name, args in kernel_cases():
        py = timeit(lambda: getattr(_python, name)(*args), repeat)
        if _speedups is None:
            print(f"{name:<28} {py:>12.2f} {'—':>14} {'—':>8}")
            continue
        cy = timeit(lambda: getattr(_speedups, name)(*args), repeat)
        print(f"{name:<28} {py:>12.2f} {cy:>14.2f} {py / cy:>8.2f}x")


def bench_training_step(repeat):
    from tasknmt.corpus import make_batches, shuffle_epoch
    from tasknmt.experiment import ExperimentConfig, prepare_variant_data
    from tasknmt.model import init_params, task_keys_for_variant
    from tasknmt.training import AdamState, train_batch

    cfg = ExperimentConfig(out_dir="/tmp/bench-unused")
    data = prepare_variant_data(cfg, "target")
    tconfig = cfg.training_config("target")
    keys = task_keys_for_variant("target", data.languages,
                                 cfg.spec.trained_directions)
    batches = make_batches(shuffle_epoch(data.train_examples, 1, 0),
                           cfg.batch_tokens, data.src_vocab, data.tgt_vocab,
                           data.languages)[:repeat]

    print(f"\nend-to-end training step ({len(batches)} batches, d=64):")
    results = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        params = init_params(cfg.d_hidden, cfg.d_emb, len(data.src_vocab),
                             len(data.tgt_vocab), "target", keys, 1)
        state = AdamState.for_config(tconfig)
        start = time.perf_counter()
        for batch in batches:
            train_batch(params, state, batch, tconfig)
        per = (time.perf_counter() - start) / len(batches) * 1e3
        results[backend] = per
        print(f"  {backend:<10} {per:8.3f} ms/batch")
    if len(results) == 2:
        print(f"  speedup    {results['python'] / results['compiled']:8.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=2000,
                        help="iterations per kernel timing")
    parser.add_argument("--batches", type=int, default=400,
                        help="batches for the end-to-end timing")
    args = parser.parse_args()
    print(f"active backend: {kernels.BACKEND} "
          f"(available: {', '.join(kernels.available_backends())})")
    bench_kernels(args.repeat)
    bench_training_step(args.batches)


if __name__ == "__main__":
    main()
