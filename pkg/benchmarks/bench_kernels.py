"""Compiled vs. pure-numpy Adam update, on the full-size parameter set.

Usage:
  python3 benchmarks/bench_kernels.py [--repeats 20]

Reports the median time of one fused Adam update over all 5,123,247
parameters for each backend, checks the two agree bit for bit, and times
one full training step (forward, backward, update) for context.
"""

import argparse
import time

import numpy as np

from ostl import _backend
from ostl.cnn import AdamState, TrainConfig, adam_step, mse_loss, paper_architecture


def median_ms(fn, repeats):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(samples))


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    model = paper_architecture(39249).initialize(0)
    params = model.parameters
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=p.shape) for p in params]
    coeffs = (0.9, 0.999, 1e-3 / 0.1, 0.999 ** 0.5, 1e-8)

    print(f"compiled kernel available: {_backend.BACKEND == 'compiled'}")
    print(f"parameters: {sum(p.size for p in params):,}")

    def run(update):
        state = AdamState.zeros_like(params)
        work = [p.copy() for p in params]

        def step():
            for p, g, m, v in zip(work, grads, state.m, state.v):
                update(p, g, m, v, *coeffs)
        return step, work

    numpy_step, numpy_out = run(_backend.adam_update_numpy)
    t_numpy = median_ms(numpy_step, args.repeats)
    print(f"numpy    adam update: {t_numpy:8.2f} ms")
    if _backend.BACKEND == "compiled":
        fast_step, fast_out = run(_backend.adam_update)
        t_fast = median_ms(fast_step, args.repeats)
        same = all(a.tobytes() == b.tobytes() for a, b in zip(numpy_out, fast_out))
        print(f"compiled adam update: {t_fast:8.2f} ms  (speed-up {t_numpy / t_fast:.1f}x, bit-identical: {same})")

    x = rng.uniform(0, 1, (16, 4))
    y = rng.normal(size=(16, 39249))
    state = AdamState.zeros_like(params)
    cfg = TrainConfig()

    def train_step():
        pred, caches = model.forward(x, return_cache=True)
        adam_step(params, model.backward(caches, mse_loss(pred, y)[1]), state, cfg)
    print(f"full training step (batch 16, {_backend.BACKEND} backend): {median_ms(train_step, args.repeats):.1f} ms")


if __name__ == "__main__":
    main()
