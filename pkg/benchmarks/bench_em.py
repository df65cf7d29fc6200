"""Timing comparison of the pure NumPy kernels and the compiled extension.

Runs the fused E+M step on synthetic tables of growing size, then a full
multi-start fit under each backend.  Wall times vary machine to machine;
the inputs themselves are fixed by seed.

    python3 benchmarks/bench_em.py [--repeats 2000]
"""

import argparse
import time

import numpy as np

from lcmcr import FitConfig, ModelSpec, fit, preset_scenario1, set_backend, simulate
from lcmcr import _kernels_py
from lcmcr._backend import has_compiled
from lcmcr.model import profile_matrix


def kernel_inputs(K, L, seed):
    rng = np.random.default_rng(seed)
    bits = profile_matrix(K)
    counts = rng.integers(0, 500, size=2**K).astype(float)
    counts[0] = 0.0
    weights = rng.dirichlet(np.ones(L))
    probs = rng.uniform(0.1, 0.9, size=(L, K))
    return bits, counts, weights, probs


def time_kernel(module, args, repeats):
    module.em_step_indep(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        module.em_step_indep(*args)
    return (time.perf_counter() - start) / repeats


def time_fit(backend, spec, counts, config):
    set_backend(backend)
    start = time.perf_counter()
    result = fit(spec, counts, config)
    elapsed = time.perf_counter() - start
    return elapsed, result.iterations


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=2000, help="kernel step repetitions")
    args = parser.parse_args()

    if not has_compiled():
        print("compiled extension not built; nothing to compare")
        return

    from lcmcr import _kernels_cy

    eps = 1e-10
    print(f"{'kernel step':<22}{'pure':>12}{'compiled':>12}{'speedup':>9}")
    for K, L in [(4, 2), (6, 3), (8, 4), (10, 5)]:
        inputs = kernel_inputs(K, L, seed=K)
        t_py = time_kernel(_kernels_py, (*inputs, eps), args.repeats)
        t_cy = time_kernel(_kernels_cy, (*inputs, eps), args.repeats)
        print(f"K={K:>2} L={L:<15}{t_py * 1e6:>10.1f}us{t_cy * 1e6:>10.1f}us{t_py / t_cy:>8.1f}x")

    print()
    print(f"{'full fit':<22}{'pure':>12}{'compiled':>12}{'speedup':>9}")
    spec = ModelSpec(("A", "B", "C", "D"), 2)
    config = FitConfig(seed=3, num_starts=20)
    for n in (10_000, 100_000):
        counts = simulate(preset_scenario1(n, seed=1)).observed_counts
        t_py, iters = time_fit("pure", spec, counts, config)
        t_cy, _ = time_fit("compiled", spec, counts, config)
        label = f"scenario1 N={n}"
        print(f"{label:<22}{t_py * 1e3:>10.1f}ms{t_cy * 1e3:>10.1f}ms{t_py / t_cy:>8.1f}x")
    set_backend("auto")


if __name__ == "__main__":
    main()
