#!/usr/bin/env python3
"""Benchmark the jitted kernels against the pure-numpy fallback.

The numba dispatchers keep the original Python function on `.py_func`, so both
paths run in one process on identical inputs. When numba is disabled
(KOOPCAR_NO_NUMBA=1) only the numpy path is timed.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from koopcar._backend import NUMBA_ENABLED, backend_name
from koopcar import _kernels
from koopcar.koopman import KoopmanDims, LossWeights, PairBatch, TrainConfig, train
from koopcar.mlp import MlpLayout, mlp_specs, init_theta
from koopcar.scenarios import make_scenario
from koopcar.vehicle import VehicleParams


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def paths(kernel):
    """(jitted, plain) callables for a kernel under the current backend."""
    if NUMBA_ENABLED:
        return kernel, kernel.py_func
    return None, kernel


def bench_simulation(repeat):
    scenario = make_scenario("mixed", duration=300.0)
    t = scenario.time_grid()
    torques, steers = scenario.input_program.sample(t, scenario.params)
    x0 = scenario.initial_state.as_array()
    pv = VehicleParams(mu=0.85).packed()
    fast, plain = paths(_kernels.simulate_path)

    def run(fn):
        return lambda: fn(x0, torques, steers, 0.025, 1, pv)

    label = f"simulate_path ({len(t)} RK4 steps)"
    if fast is not None:
        run(fast)()  # compile
        return label, best_of(run(fast), repeat), best_of(run(plain), repeat)
    return label, None, best_of(run(plain), repeat)


def bench_mlp(repeat):
    rng = np.random.default_rng(0)
    specs = mlp_specs((3, 32, 32, 12))
    layout = MlpLayout.build(specs)
    theta = init_theta(specs, rng)
    x = rng.normal(size=(256, 3))
    gy = rng.normal(size=(256, 12))
    cache = np.empty((256, layout.cache_width))
    grad = np.zeros(layout.size)
    f_fast, f_plain = paths(_kernels.dense_forward)
    b_fast, b_plain = paths(_kernels.dense_backward)

    def run(fwd, bwd):
        def step():
            for _ in range(100):
                fwd(theta, layout.shapes, layout.w_off, layout.b_off,
                    layout.acts, x, cache)
                bwd(theta, layout.shapes, layout.w_off, layout.b_off,
                    layout.acts, cache, gy, grad)
        return step

    label = "dense forward+backward (100 batches of 256)"
    if f_fast is not None:
        run(f_fast, b_fast)()
        return label, best_of(run(f_fast, b_fast), repeat), \
            best_of(run(f_plain, b_plain), repeat)
    return label, None, best_of(run(f_plain, b_plain), repeat)


def bench_training_epochs(repeat):
    """End-to-end mini training runs under the active backend only."""
    from koopcar.scenarios import run_scenario
    trajectory = run_scenario(make_scenario("mixed", duration=60.0))
    pairs = PairBatch.from_trajectory(trajectory)
    cfg = TrainConfig(seed=0, dt=pairs.dt, epochs=5, batch_size=256,
                      weights=LossWeights())

    def run():
        train(pairs, KoopmanDims(), cfg)

    run()
    return f"train 5 epochs on {len(pairs)} pairs [{backend_name()}]", \
        best_of(run, max(1, repeat // 2)), None


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    print(f"backend: {backend_name()}")
    rows = [bench_simulation(args.repeat), bench_mlp(args.repeat),
            bench_training_epochs(args.repeat)]
    print(f"\n{'kernel':<48s} {'numba':>10s} {'numpy':>10s} {'speedup':>9s}")
    for label, fast, plain in rows:
        fast_s = f"{fast * 1e3:.1f} ms" if fast is not None else "-"
        plain_s = f"{plain * 1e3:.1f} ms" if plain is not None else "-"
        ratio = f"{plain / fast:.1f}x" if fast and plain else "-"
        print(f"{label:<48s} {fast_s:>10s} {plain_s:>10s} {ratio:>9s}")


if __name__ == "__main__":
    main()
