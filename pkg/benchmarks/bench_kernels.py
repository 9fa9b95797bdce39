"""Benchmark the compiled kernel extension against the pure-Python fallback.

Times the hot kernels in isolation plus a composite "co-training batch"
that strings them together the way one SLKD iteration does.

Usage:
    python benchmarks/bench_kernels.py [--repeat 5] [--batch 64]
"""

from __future__ import annotations

import argparse
import random
import time
from array import array

from kdlab._kernels import pykernels

try:
    from kdlab._kernels import ckernels
except ImportError:
    ckernels = None


def _rand(rng: random.Random, n: int) -> array:
    return array("d", (rng.uniform(-1.5, 1.5) for _ in range(n)))


def _zeros(n: int) -> array:
    return array("d", bytes(8 * n))


def make_cases(batch: int):
    """(name, setup) pairs; setup returns a zero-argument callable to time."""
    rng = random.Random(0)
    b, din, h, c = batch, 16, 64, 10

    def matmul_case(K):
        a, w = _rand(rng, b * h), _rand(rng, h * h)
        out = _zeros(b * h)
        return lambda: K.matmul(a, w, out, b, h, h)

    def matmul_grads_case(K):
        g, w, a = _rand(rng, b * h), _rand(rng, h * h), _rand(rng, b * h)
        da, dw = _zeros(b * h), _zeros(h * h)

        def run():
            K.matmul_grad_a(g, w, da, b, h, h)
            K.matmul_grad_b(a, g, dw, b, h, h)

        return run

    def log_softmax_case(K):
        x = _rand(rng, b * c)
        out = _zeros(b * c)
        return lambda: K.log_softmax(x, out, b, c)

    def sgd_case(K):
        p, g, v = _rand(rng, h * h), _rand(rng, h * h), _zeros(h * h)
        return lambda: K.sgd_update(p, g, v, 0.05, 0.9, 5e-4, h * h)

    def cotrain_batch_case(K):
        # one student + two teacher-sized nets: forwards, backwards, updates
        dims = [(din, h), (h, h), (h, h), (h, c)]
        nets = []
        for _ in range(3):
            ws = [_rand(rng, i * o) for i, o in dims]
            gs = [_zeros(i * o) for i, o in dims]
            vs = [_zeros(i * o) for i, o in dims]
            nets.append((ws, gs, vs))
        x = _rand(rng, b * din)

        def run():
            for ws, gs, vs in nets:
                act = x
                acts = [act]
                width = din
                for (i_dim, o_dim), w in zip(dims, ws):
                    out = _zeros(b * o_dim)
                    K.matmul(act, w, out, b, i_dim, o_dim)
                    relu_out = _zeros(b * o_dim)
                    K.relu(out, relu_out, b * o_dim)
                    act = relu_out
                    acts.append(act)
                    width = o_dim
                g = _rand(random.Random(1), b * width)
                for (i_dim, o_dim), w, dw, a_in in zip(
                    reversed(dims), reversed(ws), reversed(gs), reversed(acts[:-1])
                ):
                    upstream = _zeros(b * i_dim)
                    K.matmul_grad_a(g, w, upstream, b, i_dim, o_dim)
                    K.matmul_grad_b(a_in, g, dw, b, i_dim, o_dim)
                    g = upstream
                for w, dw, v in zip(ws, gs, vs):
                    K.sgd_update(w, dw, v, 0.05, 0.9, 5e-4, len(w))

        return run

    return [
        ("matmul 64x64.64x64", matmul_case),
        ("matmul grads", matmul_grads_case),
        ("log_softmax 64x10", log_softmax_case),
        ("sgd_update 4096", sgd_case),
        ("co-training batch", cotrain_batch_case),
    ]


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=64)
    args = parser.parse_args()

    backends = [("python", pykernels)]
    if ckernels is not None:
        backends.append(("c", ckernels))
    else:
        print("compiled kernels not built; timing the pure-Python backend only\n")

    print(f"{'kernel':24s}" + "".join(f"{name:>14s}" for name, _ in backends) + f"{'speedup':>10s}")
    for case_name, case in make_cases(args.batch):
        times = []
        for _, K in backends:
            times.append(best_of(case(K), args.repeat))
        row = f"{case_name:24s}" + "".join(f"{t * 1e3:11.3f} ms" for t in times)
        if len(times) == 2 and times[1] > 0:
            row += f"{times[0] / times[1]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
