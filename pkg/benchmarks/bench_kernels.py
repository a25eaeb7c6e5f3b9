"""Time the compiled and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --dims 8 64 64 3 --n 1000 --repeat 50

Without ``--dims`` a small batch, the reference shape and a wide network
are timed. Set OPENBLAS_NUM_THREADS=1 for a single-core comparison.
"""
import argparse
import timeit

import numpy as np

from tavlab import autodiff, kernels
from tavlab.network import MlpArchitecture, init_model
from tavlab.taskgen import make_task

PRESETS = [([8, 16, 3], 20), ([8, 16, 3], 200), ([8, 64, 64, 3], 1000)]


def bench(backend, model, task, v, repeat):
    kernels.set_backend(backend)
    out = {}
    for name, fn in (("loss_grad", lambda: autodiff.loss_and_grad(model, task)),
                     ("hvp", lambda: autodiff.hvp(model, task, v))):
        fn()
        out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return out


def run_shape(dims, n, activation, repeat):
    arch = MlpArchitecture(tuple(dims), activation)
    model = init_model(arch, 0)
    task = make_task(0, n, dims[0], dims[-1], 1.0, 8.0)
    v = np.random.default_rng(0).standard_normal(arch.param_count)

    backends = kernels.available_backends()
    results = {b: bench(b, model, task, v, max(3, repeat * 200 // max(n, 1))) for b in backends}
    print(f"dims={dims} n={n} activation={activation} P={arch.param_count}")
    print(f"{'kernel':<10}" + "".join(f"{b:>14}" for b in backends)
          + ("     speedup" if len(backends) > 1 else ""))
    for name in ("loss_grad", "hvp"):
        row = f"{name:<10}" + "".join(f"{results[b][name] * 1e6:>12.1f}us" for b in backends)
        if len(backends) > 1:
            row += f"{results['python'][name] / results[backends[0]][name]:>11.2f}x"
        print(row)
    if len(backends) == 1:
        print("compiled backend not built; only the numpy fallback was timed")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--n", type=int, default=200, help="samples per task (with --dims)")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args(argv)

    shapes = [(args.dims, args.n)] if args.dims else PRESETS
    for dims, n in shapes:
        run_shape(dims, n, args.activation, args.repeat)


if __name__ == "__main__":
    main()
