"""Time the numba and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py --n 500 1000 2000 --repeat 5

Each row reports the best of ``--repeat`` runs for one kernel and grid size,
after one untimed call per backend (JIT load or compile).  The last block
times a full solve_unconstrained on the Example-2 problem under each backend.
"""

import argparse
import timeit

import numpy as np

from svoc import _kernels, problems
from svoc.mp_solver import solve_unconstrained
from svoc.quadrature import build_singular_weights
from svoc.core_types import TimeGrid


def kernel_cases(N, n, rng):
    grid = TimeGrid(1.0, N)
    W = build_singular_weights(0.5, grid)
    A = -0.3 * np.eye(n) + 0.1 * rng.standard_normal((n, n))
    F = np.broadcast_to(A, (N + 1, N + 1, n, n))
    H = np.broadcast_to(0.5 * A, (N + 1, N + 1, n, n))
    rhs = np.ascontiguousarray(rng.standard_normal((N + 1, n, 1)))
    src = np.ascontiguousarray(rng.standard_normal((N + 1, n)))
    cvec = rng.standard_normal(n)
    phat = rng.standard_normal((N + 1, n))
    q = grid.trapezoid_weights
    return {
        "forward_sweep": lambda: _kernels.forward_sweep(W.a, W.b0, grid.h, F, H, rhs),
        "adjoint_sweep": lambda: _kernels.adjoint_sweep(W.a, W.b0, grid.h, F, H, src, cvec),
        "tail_sums": lambda: _kernels.tail_sums(W.a, W.b0, grid.h, phat, q),
    }


def best_time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, nargs="+", default=[500, 1000, 2000], help="grid sizes N")
    parser.add_argument("--dim", type=int, default=2, help="state dimension of the kernel cases")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--solve-n", type=int, default=400, help="grid size of the end-to-end solve")
    args = parser.parse_args(argv)

    backends = ["numpy"]
    try:
        _kernels.set_backend("numba")
        backends.insert(0, "numba")
    except RuntimeError:
        print("numba not available; timing the numpy path only")
    initial = _kernels.backend()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'N':>6}" + "".join(f"{b + ' [s]':>14}" for b in backends) + f"{'speedup':>10}")
    for N in args.n:
        cases = kernel_cases(N, args.dim, rng)
        for name, fn in cases.items():
            times = []
            for b in backends:
                _kernels.set_backend(b)
                times.append(best_time(fn, args.repeat))
            speed = f"{times[-1] / times[0]:>9.1f}x" if len(times) == 2 else ""
            print(f"{name:<16}{N:>6}" + "".join(f"{t:>14.4e}" for t in times) + speed)

    spec = problems.example2_spec(0.5, args.solve_n)
    times = []
    for b in backends:
        _kernels.set_backend(b)
        times.append(best_time(lambda: solve_unconstrained(spec), max(1, args.repeat // 2)))
    speed = f"{times[-1] / times[0]:>9.1f}x" if len(times) == 2 else ""
    print(f"{'solve (ex. 2)':<16}{args.solve_n:>6}" + "".join(f"{t:>14.4e}" for t in times) + speed)
    _kernels.set_backend(initial)


if __name__ == "__main__":
    main()
