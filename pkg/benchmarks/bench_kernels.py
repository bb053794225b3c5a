#!/usr/bin/env python3
"""Benchmark the pure-numpy kernels against the compiled extension.

Times each hot kernel at training-realistic shapes, plus one full
forward+backward+update training step of the default desk-scale model on
both backends. Run from a checkout:

    python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from relex import kernels
from relex.encoding import EncodedInstance
from relex.model import AdamState, ModelConfig, adam_step, init_model, loss_and_grads


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def kernel_cases(rng):
    # batch 32 x seq 64 rows at d_model 64 / d_ff 128, float32
    x = rng.normal(size=(2048, 64)).astype(np.float32)
    gamma = np.ones(64, dtype=np.float32)
    beta = np.zeros(64, dtype=np.float32)
    dy = rng.normal(size=x.shape).astype(np.float32)
    _, mean, rstd = kernels.layer_norm_forward(x, gamma, beta, 1e-5)
    scores = rng.normal(size=(4096, 64)).astype(np.float32)
    probs = kernels.softmax_rows(scores)
    d_probs = rng.normal(size=scores.shape).astype(np.float32)
    z = rng.normal(size=(2048, 128)).astype(np.float32)
    dz = rng.normal(size=z.shape).astype(np.float32)
    param = rng.normal(size=65536).astype(np.float32)
    grad = rng.normal(size=65536).astype(np.float32)
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    return {
        "layer_norm_forward": lambda: kernels.layer_norm_forward(x, gamma, beta, 1e-5),
        "layer_norm_backward": lambda: kernels.layer_norm_backward(dy, x, gamma, mean, rstd),
        "softmax_rows": lambda: kernels.softmax_rows(scores),
        "softmax_backward_rows": lambda: kernels.softmax_backward_rows(probs, d_probs),
        "gelu_forward": lambda: kernels.gelu_forward(z),
        "gelu_backward": lambda: kernels.gelu_backward(z, dz),
        "adam_update": lambda: kernels.adam_update(param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 1),
    }


def train_step_case(rng):
    cfg = ModelConfig(vocab_size=512, n_labels=8)
    model = init_model(cfg, tuple(f"label{i}" for i in range(8)), "bench", seed=0)
    batch = []
    for _ in range(32):
        n = int(rng.integers(24, 48))
        ids = [2] + list(rng.integers(8, 512, size=n - 1))
        s1 = int(rng.integers(1, n - 8))
        ids[s1], ids[s1 + 2] = 4, 5
        s2 = s1 + 4
        ids[s2], ids[s2 + 2] = 6, 7
        batch.append(EncodedInstance(
            token_ids=tuple(ids), e1_span=(s1 + 1, s1 + 2), e2_span=(s2 + 1, s2 + 2),
            marker_idx=(s1, s1 + 2, s2, s2 + 2), label_id=int(rng.integers(8)),
            attention_len=n))
    weights = np.ones(8)
    state = AdamState()
    drop_rng = np.random.default_rng(2)

    def step():
        loss, grads = loss_and_grads(model, batch, weights, rng=drop_rng)
        adam_step(model, grads, state, lr=1e-3)

    return step


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if "native" not in kernels.available_backends():
        print("native backend not built; rebuild with `pip install -e . "
              "--no-build-isolation` to compare")
        return

    rng = np.random.default_rng(0)
    results = {}
    for backend in ("pure", "native"):
        kernels.set_backend(backend)
        cases = kernel_cases(np.random.default_rng(0))
        for name, fn in cases.items():
            results.setdefault(name, {})[backend] = timeit(fn, args.repeats)
        step = train_step_case(np.random.default_rng(1))
        results.setdefault("full train step (b32,d64,L2)", {})[backend] = timeit(
            step, max(5, args.repeats // 20))

    width = max(len(n) for n in results)
    print(f"{'kernel':<{width}}  {'pure':>10}  {'native':>10}  {'speedup':>8}")
    for name, t in results.items():
        speedup = t["pure"] / t["native"]
        print(f"{name:<{width}}  {t['pure'] * 1e6:>8.1f}us  {t['native'] * 1e6:>8.1f}us "
              f"{speedup:>7.2f}x")
    kernels.set_backend("native")


if __name__ == "__main__":
    main()
