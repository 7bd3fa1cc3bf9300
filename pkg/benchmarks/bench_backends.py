"""Benchmark the numba kernels against the pure-numpy fallback.

Times each hot kernel (attention, layernorm, gelu, median filter) forward and
backward at representative shapes, plus a full encoder forward+backward,
under both backends. Run:

    python3 benchmarks/bench_backends.py [--repeats 20]

The active default backend for the package is DAEP_BACKEND (numba unless set
to numpy); this script times both regardless.
"""

import argparse
import time

import numpy as np

from daep import autograd as ag
from daep import kernels
from daep.encoder import EncoderConfig
from daep.models import ModelSpec, build_model
from daep.decoder import DecoderConfig
from daep.tokenizer import TokenizerConfig


def timeit(fn, repeats):
    fn()  # warmup (numba JIT, BLAS thread pools)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    h, lq, lk, dh = 8, 64, 1024, 16
    q = rng.standard_normal((h, lq, dh))
    k = rng.standard_normal((h, lk, dh))
    v = rng.standard_normal((h, lk, dh))
    dout = rng.standard_normal((h, lq, dh))
    x = rng.standard_normal((1024, 128))
    gamma, beta = np.ones(128), np.zeros(128)
    dy = rng.standard_normal(x.shape)
    vals = rng.standard_normal(4096)

    cases = []
    for name in ("numpy", "numba"):
        if name == "numba" and not kernels.NUMBA_AVAILABLE:
            continue
        impl = kernels._IMPLS[name]
        _, probs = impl.attention_forward(q, k, v)
        _, mean, rstd = impl.layernorm_forward(x, gamma, beta, 1e-5)
        cases.append((name, {
            f"attention fwd ({h}x{lq}x{lk}x{dh})": lambda i=impl: i.attention_forward(q, k, v),
            "attention bwd": lambda i=impl, p=probs: i.attention_backward(q, k, v, p, dout),
            "layernorm fwd (1024x128)": lambda i=impl: i.layernorm_forward(x, gamma, beta, 1e-5),
            "layernorm bwd": lambda i=impl, m=mean, r=rstd: i.layernorm_backward(x, gamma, m, r, dy),
            "gelu fwd (1024x128)": lambda i=impl: i.gelu_forward(x),
            "gelu bwd": lambda i=impl: i.gelu_backward(x, dy),
            "median filter (4096, w=9)": lambda i=impl: i.median_filter(vals, 9),
        }))
    rows = {}
    for name, fns in cases:
        for label, fn in fns.items():
            rows.setdefault(label, {})[name] = timeit(fn, repeats)
    return rows


def bench_model(repeats):
    spec = ModelSpec(
        tokenizer=TokenizerConfig(d_model=128, d_embed=32, pos_sin_dim=32, num_channels=2),
        encoder=EncoderConfig(bottleneck_len=4, bottleneck_dim=8, num_layers=4,
                              d_model=128, num_heads=8),
        decoder=DecoderConfig(num_layers=4, d_model=128, num_heads=8, bottleneck_dim=8,
                              hidden_seq_len=64, time_embed_dim=64),
    )
    model = build_model("daep", spec, 0)
    rng = np.random.default_rng(1)
    n = 1024
    vals = rng.standard_normal(n)
    pos = np.sort(rng.uniform(-2, 2, n))
    ch = rng.integers(2, size=n)

    def fwd_bwd():
        model.zero_grad()
        toks = model.tokenizer.tokenize_values(vals, pos, ch)
        latent = model.encoder.encode(toks)
        out = model.decoder.score_forward(vals, pos, ch, latent, 500)
        ag.mse(out, ag.as_tensor(vals)).backward()

    rows = {}
    for name in ("numpy", "numba"):
        if name == "numba" and not kernels.NUMBA_AVAILABLE:
            continue
        kernels.set_backend(name)
        rows[name] = timeit(fwd_bwd, max(3, repeats // 4))
    return {"daep fwd+bwd (len 1024, Table-A1-like)": rows}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    rows = bench_kernels(args.repeats)
    rows.update(bench_model(args.repeats))
    width = max(len(k) for k in rows)
    print(f"{'case'.ljust(width)}  {'numpy':>12}  {'numba':>12}  {'speedup':>8}")
    for label, res in rows.items():
        np_t = res.get("numpy")
        nb_t = res.get("numba")
        ratio = f"{np_t / nb_t:.2f}x" if np_t and nb_t else "-"
        nps = f"{np_t*1e3:.3f} ms" if np_t else "-"
        nbs = f"{nb_t*1e3:.3f} ms" if nb_t else "-"
        print(f"{label.ljust(width)}  {nps:>12}  {nbs:>12}  {ratio:>8}")


if __name__ == "__main__":
    main()
