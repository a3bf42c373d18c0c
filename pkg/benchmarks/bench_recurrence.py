"""Compare the compiled and NumPy recurrence kernels.

Times the raw sequence kernels (forward and backward) and a full
two-layer network forward+backward pass at several sequence lengths.
Reports the best of --repeats runs; single-core wall clock.

Usage: python benchmarks/bench_recurrence.py [--lengths 800,5000]
"""

import argparse
import time

import numpy as np

from pigrn.nn import (
    available_backends,
    init_network,
    network_backward,
    network_forward,
    set_backend,
)
from pigrn.nn import backend as backend_mod


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(t_len, hidden, repeats):
    rng = np.random.default_rng(0)
    x_proj = rng.standard_normal((t_len, 3 * hidden))
    u_cat = rng.standard_normal((3 * hidden, hidden)) / np.sqrt(hidden)
    h0 = np.zeros(hidden)
    results = {}
    for name in available_backends():
        set_backend(name)
        k = backend_mod.kernels
        h_seq, z_seq, r_seq, hc_seq = k.gru_forward_seq(x_proj, u_cat, h0)
        dh_out = rng.standard_normal((t_len, hidden))
        fwd = best_of(lambda: k.gru_forward_seq(x_proj, u_cat, h0), repeats)
        bwd = best_of(
            lambda: k.gru_backward_seq(u_cat, h_seq, z_seq, r_seq, hc_seq,
                                       dh_out),
            repeats)
        results[name] = (fwd, bwd)
    return results


def bench_network(t_len, hidden, repeats):
    rng = np.random.default_rng(1)
    net = init_network(seed=0, hidden_size=hidden)
    x = rng.uniform(0.0, 1.0, (t_len, net.input_size))
    d_out = rng.standard_normal((t_len, net.output_size))
    results = {}
    for name in available_backends():
        set_backend(name)

        def step():
            out, cache = network_forward(net, x, mode="eval")
            network_backward(net, cache, d_out)

        results[name] = best_of(step, repeats)
    return results


def fmt_row(label, results):
    parts = ["%-26s" % label]
    base = None
    for name in ("numpy", "cython"):
        if name not in results:
            continue
        val = results[name]
        parts.append("%s %8.2f ms" % (name, 1e3 * val))
        base = val if base is None else base
    if "cython" in results and "numpy" in results:
        parts.append("speedup %5.2fx" % (results["numpy"] / results["cython"]))
    return "  ".join(parts)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", default="800,5000",
                    help="comma-separated sequence lengths")
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    lengths = [int(tok) for tok in args.lengths.split(",") if tok.strip()]

    print("backends available:", ", ".join(available_backends()))
    for t_len in lengths:
        res = bench_kernels(t_len, args.hidden, args.repeats)
        fwd = {k: v[0] for k, v in res.items()}
        bwd = {k: v[1] for k, v in res.items()}
        print(fmt_row("kernel fwd  T=%d H=%d" % (t_len, args.hidden), fwd))
        print(fmt_row("kernel bwd  T=%d H=%d" % (t_len, args.hidden), bwd))
        net = bench_network(t_len, args.hidden, args.repeats)
        print(fmt_row("network f+b T=%d H=%d" % (t_len, args.hidden), net))
    set_backend("auto")


if __name__ == "__main__":
    main()
