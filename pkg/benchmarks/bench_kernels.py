"""Time each hot kernel on its numpy path and its numba path.

    python benchmarks/bench_kernels.py [--repeat 20]

Numba timings exclude the first (compiling) call.
"""

import argparse
import timeit

import numpy as np

from causalrec import kernels
from causalrec._accel import HAVE_NUMBA
from causalrec.scmlab import enumerate_dags


def workloads(rng):
    n, D = 200, 64
    attn = rng.standard_normal((256 * 2, n))
    attn[:, n // 2 :] = -np.inf
    y = kernels.softmax_rows_np(attn)
    x = rng.standard_normal((256 * n // 8, D))
    _, xhat, rstd = kernels.layer_norm_np(x, np.ones(D), np.zeros(D), 1e-8)
    b = np.triu(rng.uniform(0.5, 2.0, (10, 10)) * (rng.random((10, 10)) < 0.3), 1)
    cov = np.cov(rng.standard_normal((1000, 4)), rowvar=False)
    return {
        "softmax_rows": (attn,),
        "softmax_rows_grad": (y, rng.standard_normal(y.shape)),
        "layer_norm": (x, np.ones(D), np.zeros(D), 1e-8),
        "layer_norm_grad": (rng.standard_normal(x.shape), xhat, rstd, np.ones(D)),
        "expm": (rng.standard_normal((n, n)) * 0.05,),
        "pessimistic_ranks": (rng.standard_normal((6000, 101)),),
        "forward_substitute": (b, np.ones(10), rng.standard_normal((100_000, 10)), np.arange(10)),
        "dag_rss": (cov, enumerate_dags(4).astype(np.float64)),
        "scatter_rows": (rng.integers(0, 5000, 256 * n), rng.standard_normal((256 * n, D)), 5000),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    cases = workloads(np.random.default_rng(0))
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, a in cases.items():
        t_np = min(timeit.repeat(lambda: kernels.NUMPY_KERNELS[name](*a), number=1, repeat=args.repeat))
        if HAVE_NUMBA:
            fn = kernels.jitted(name)
            fn(*a)
            t_nb = min(timeit.repeat(lambda: fn(*a), number=1, repeat=args.repeat))
            print(f"{name:<20}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.2f}x")
        else:
            print(f"{name:<20}{t_np * 1e3:>12.3f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
