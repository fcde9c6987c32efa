"""Timing comparison of the numba kernels against the pure-numpy fallback.

Imports both implementations directly (bypassing the environment-variable
dispatch) and times matched calls on identical inputs, so the numbers
reflect kernel cost only. Run:

    python benchmarks/bench_kernels.py [--batch 256] [--repeat 30]
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from switchlm.kernels import numpy_impl  # noqa: E402


def _load_numba_impl():
    try:
        from switchlm.kernels import numba_impl
    except ImportError:
        return None
    return numba_impl


def _inputs(batch: int, window: int, emb_dim: int, hidden_dim: int, n_vocab: int, seed: int):
    rng = np.random.default_rng(seed)
    ctx = rng.integers(0, n_vocab, size=(batch, window)).astype(np.int32)
    emb = rng.standard_normal((n_vocab, emb_dim)).astype(np.float32)
    wh = (rng.standard_normal((hidden_dim, window * emb_dim)) * 0.05).astype(np.float32)
    bh = np.zeros(hidden_dim, dtype=np.float32)
    wv = (rng.standard_normal((n_vocab, hidden_dim)) * 0.05).astype(np.float32)
    bv = np.zeros(n_vocab, dtype=np.float32)
    targets = rng.integers(0, n_vocab, size=batch).astype(np.int64)
    return ctx, emb, wh, bh, wv, bv, targets


def _time_step(impl, ctx, emb, wh, bh, wv, bv, targets, repeat: int) -> list[float]:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        h, x = impl.forward_hidden(ctx, emb, wh, bh)
        z = impl.word_logits_batch(h, wv, bv)
        impl.neg_log_probs(z, targets)
        _, dz = impl.xent_grad(z, targets)
        impl.backbone_backward(dz, h, x, ctx, wv, wh, emb.shape[0], emb.shape[1])
        times.append(time.perf_counter() - t0)
    return times


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--window", type=int, default=24)
    parser.add_argument("--emb-dim", type=int, default=32)
    parser.add_argument("--hidden-dim", type=int, default=128)
    parser.add_argument("--vocab", type=int, default=97)
    parser.add_argument("--repeat", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    data = _inputs(args.batch, args.window, args.emb_dim, args.hidden_dim, args.vocab, args.seed)
    print(f"batch={args.batch} window={args.window} emb={args.emb_dim} "
          f"hidden={args.hidden_dim} vocab={args.vocab} repeat={args.repeat}")

    results = {}
    numba_impl = _load_numba_impl()
    impls = [("numpy", numpy_impl)] + ([("numba", numba_impl)] if numba_impl else [])
    if numba_impl is None:
        print("numba unavailable; timing the numpy fallback only")
    for name, impl in impls:
        _time_step(impl, *data, repeat=3)  # warm-up (numba JIT compile)
        times = _time_step(impl, *data, repeat=args.repeat)
        results[name] = statistics.median(times)
        print(f"{name:6s} median {results[name] * 1e3:8.3f} ms  "
              f"min {min(times) * 1e3:8.3f} ms  max {max(times) * 1e3:8.3f} ms")
    if len(results) == 2:
        print(f"speedup (numpy/numba): {results['numpy'] / results['numba']:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
