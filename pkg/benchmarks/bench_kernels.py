"""Microbenchmarks for the two kernel backends.

Times each elementwise kernel, the fused point-warp (the training hot
path), and a full training step, under the numpy backend and under the
compiled one when it is built. Run from the repository root:

    python3 benchmarks/bench_kernels.py [--quick]
"""
import argparse
import time

import numpy as np

import layerflow._backend as B
from layerflow._backend import pure


def best_of(fn, repeats, *args, **kwargs):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best


def row(label, t_pure, t_fast):
    if t_fast is None:
        print(f"  {label:<34} {t_pure * 1e3:9.3f} ms        (not built)")
    else:
        print(f"  {label:<34} {t_pure * 1e3:9.3f} ms {t_fast * 1e3:9.3f} ms "
              f"{t_pure / t_fast:6.1f}x")


def bench_elementwise(fast, n, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=n)
    g = rng.normal(size=n)
    y = pure.sigmoid_fwd(x)
    p3 = rng.uniform(-1.5, 1.5, size=(n // 36, 3))
    g3 = rng.normal(size=(p3.shape[0], 36))
    pr = {"param": x.copy(), "m": np.zeros(n), "v": np.zeros(n)}
    fr = {"param": x.copy(), "m": np.zeros(n), "v": np.zeros(n)}

    cases = [
        ("sine_fwd", lambda k: k.sine_fwd(x, 30.0)),
        ("sine_bwd", lambda k: k.sine_bwd(x, 30.0, g)),
        ("sigmoid_fwd", lambda k: k.sigmoid_fwd(x)),
        ("sigmoid_bwd", lambda k: k.sigmoid_bwd(y, g)),
        ("fourier_fwd (d=3, bands=6)", lambda k: k.fourier_fwd(p3, 6)),
        ("fourier_bwd (d=3, bands=6)", lambda k: k.fourier_bwd(p3, 6, g3)),
    ]
    print(f"elementwise kernels, n = {n}")
    print(f"  {'kernel':<34} {'pure':>12} {'fast':>12} {'speedup':>7}")
    for label, call in cases:
        tp = best_of(call, repeats, pure)
        tf = best_of(call, repeats, fast) if fast else None
        row(label, tp, tf)
    st = {"s": 0}

    def adam(k, state):
        st["s"] += 1
        k.adam_update(state["param"], g, state["m"], state["v"],
                      st["s"], 1e-3, 0.9, 0.999, 1e-8)

    tp = best_of(adam, repeats, pure, pr)
    tf = best_of(adam, repeats, fast, fr) if fast else None
    row("adam_update", tp, tf)


def bench_warp(fast, n_points, repeats):
    from layerflow.motion import IntegratorConfig, warp_points
    from layerflow.networks import VelocityNet
    from layerflow.tensor import Tape, backward, sum_

    net = VelocityNet(np.random.default_rng(1), hidden=64, depth=4, num_bands=4)
    for layer in [*net.layers, net.out]:  # nonzero output so work is real
        layer.W.data[:] = np.random.default_rng(2).normal(
            scale=0.05, size=layer.W.shape)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, size=(n_points, 2))
    tv = rng.uniform(-1, 1, size=n_points)
    cfg = IntegratorConfig(dt=0.05)

    def run():
        with Tape() as tape:
            loss = sum_(warp_points(net, pts, tv, 1.0, cfg))
        backward(tape, loss)

    print(f"\nfused warp fwd+bwd, {n_points} points, dt=0.05, span up to 2.0")
    print(f"  {'path':<34} {'pure':>12} {'fast':>12} {'speedup':>7}")
    saved = B.active
    try:
        B.active = pure
        tp = best_of(run, repeats)
        tf = None
        if fast:
            B.active = fast
            tf = best_of(run, repeats)
    finally:
        B.active = saved
    row("warp_points (36 Euler steps avg)", tp, tf)


def bench_train_step(fast, repeats):
    from layerflow.scenes import generate_scene
    from layerflow.trainer import TrainConfig, normalize_clip, train

    scene = generate_scene("linear_square", num_frames=3, resolution=(32, 32))
    clip = normalize_clip(scene.train_frames, scene.train_times)
    cfg = TrainConfig(num_layers=2, epochs=1, batch_size=1024, seed=0,
                      log_every=10 ** 6)

    def run():
        train(clip, cfg)

    print("\none training epoch, 32x32x3 clip, 2 layers, batch 1024 (3 steps)")
    print(f"  {'path':<34} {'pure':>12} {'fast':>12} {'speedup':>7}")
    saved = B.active
    try:
        B.active = pure
        tp = best_of(run, repeats)
        tf = None
        if fast:
            B.active = fast
            tf = best_of(run, repeats)
    finally:
        B.active = saved
    row("train epoch", tp, tf)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="smaller sizes, fewer repeats")
    args = ap.parse_args()

    fast = B.fast
    print(f"compiled backend: {'built' if fast else 'NOT BUILT (pip install -e .)'}\n")
    n = 1 << 18 if args.quick else 1 << 21
    repeats = 3 if args.quick else 5
    bench_elementwise(fast, n, repeats)
    bench_warp(fast, 2048 if args.quick else 8192, repeats)
    bench_train_step(fast, 2 if args.quick else 3)


if __name__ == "__main__":
    main()
