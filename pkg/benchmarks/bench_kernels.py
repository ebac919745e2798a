"""Timing comparison: compiled kernels vs the pure-numpy fallback.

Run from the repo root:

    python3 benchmarks/bench_kernels.py

Each kernel runs on fixed random workloads; times are per-call medians
over several repeats, so one-off interpreter noise mostly washes out.
"""

import statistics
import sys
import time

import numpy as np

from accentlab._kernels import _fallback

try:
    from accentlab._kernels import _speedups
except ImportError:
    _speedups = None


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def make_ctc_case(rng, t_frames, n_symbols, target_len):
    lp = log_softmax(rng.normal(size=(t_frames, n_symbols)))
    target = rng.integers(1, n_symbols, size=target_len)
    ext = np.zeros(2 * target_len + 1, dtype=np.int32)
    ext[1::2] = target
    return lp, ext


def time_call(fn, repeats=7, inner=5):
    """Median seconds per call."""
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return statistics.median(samples)


def bench(name, make_args, impls, repeats=7):
    args = make_args()
    row = {"case": name}
    for label, impl in impls:
        row[label] = time_call(lambda impl=impl: impl(*args),
                               repeats=repeats)
    return row


def main():
    if _speedups is None:
        print("compiled backend unavailable; only the fallback is timed",
              file=sys.stderr)
    rng = np.random.default_rng(0)

    cases = []
    for t_frames, n_symbols, target_len in ((50, 30, 10), (200, 30, 40),
                                            (400, 33, 80)):
        lp, ext = make_ctc_case(rng, t_frames, n_symbols, target_len)
        impls = [("python", _fallback.ctc_loss_grad)]
        if _speedups is not None:
            impls.append(("cython", _speedups.ctc_loss_grad))
        cases.append(bench(
            f"ctc_loss_grad T={t_frames} S={n_symbols} L={target_len}",
            lambda lp=lp, ext=ext: (lp, ext, 0), impls))

    for n, m in ((30, 30), (200, 180), (1000, 900)):
        a = rng.integers(0, 26, size=n).astype(np.int32)
        b = rng.integers(0, 26, size=m).astype(np.int32)
        impls = [("python", _fallback.levenshtein)]
        if _speedups is not None:
            impls.append(("cython", _speedups.levenshtein))
        cases.append(bench(f"levenshtein {n}x{m}",
                           lambda a=a, b=b: (a, b), impls))

    width = max(len(c["case"]) for c in cases)
    header = f"{'case':<{width}}  {'python':>10}"
    if _speedups is not None:
        header += f"  {'cython':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for c in cases:
        line = f"{c['case']:<{width}}  {c['python'] * 1e3:>8.3f}ms"
        if _speedups is not None:
            line += (f"  {c['cython'] * 1e3:>8.3f}ms"
                     f"  {c['python'] / c['cython']:>7.1f}x")
        print(line)


if __name__ == "__main__":
    main()
