"""Time the compiled and pure-Python kernels on identical inputs.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 5]
"""

import argparse
import random
import timeit
from array import array

from ibalign import _pykernels

try:
    from ibalign import _ckernels
except ImportError:
    _ckernels = None


def workloads(n: int, seed: int = 0):
    rng = random.Random(seed)
    xs = [rng.expovariate(1.0) for _ in range(n)]
    n_classes, n_screens = 20, max(1, n // 10)
    weights = array("d", (rng.uniform(0.1, 1.5) for _ in range(n_classes)))
    effects = array("d", (rng.random() for _ in range(3 * n_classes)))
    kind_idx = array("l", (rng.randrange(-1, n_classes) for _ in range(n)))
    conf = array("d", (rng.random() for _ in range(n)))
    offsets = array("l", sorted(rng.sample(range(1, n), n_screens - 1)))
    offsets = array("l", [0, *offsets, n])
    ps = [rng.random() for _ in range(min(n, 20000))]
    return {
        "ewma_series": lambda k: k.ewma_series(xs, 0.3),
        "rolling_max_norm_series": lambda k: k.rolling_max_norm_series(xs, 12, 1e-9),
        "presquash_sums": lambda k: k.presquash_sums(kind_idx, conf, offsets, weights, effects),
        "bh_count": lambda k: k.bh_count(ps, 0.05),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled extension not built; timing the Python fallback only")
    print(f"{'kernel':<26}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for name, fn in workloads(args.n).items():
        times = [min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) for _, mod in backends]
        speed = f"{times[0] / times[1]:>9.1f}x" if len(times) == 2 else ""
        print(f"{name:<26}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + speed)


if __name__ == "__main__":
    main()
