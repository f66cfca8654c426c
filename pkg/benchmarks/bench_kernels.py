"""Compiled vs numpy kernels at pipeline-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one row per kernel and size with the best time of each backend and
the speed-up. Both backends are checked to agree before timing.
"""
import argparse
import timeit

import numpy as np

from radarmotion import kernels


def cases(rng):
    for n in (256, 1024, 4096):
        pts = rng.normal(size=(n, 3))
        yield "fps", n, (pts, 32), kernels.py_fps
        yield "knn", n, (pts, pts[:32], 16), kernels.py_knn
        a, b = rng.normal(size=(16, 3)), rng.normal(size=(16, 3))
        yield "segment_distance", n, (pts, a, b), kernels.py_segment_distance


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        raise SystemExit("compiled extension not available; build with pip install -e . --no-build-isolation")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'points':>8}{'compiled ms':>14}{'numpy ms':>12}{'speed-up':>10}")
    for name, n, call_args, slow in cases(rng):
        fast = getattr(kernels, name)
        a, b = fast(*call_args), slow(*call_args)
        assert np.allclose(a, b, atol=1e-12), name
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<18}{n:>8}{t_fast * 1e3:>14.3f}{t_slow * 1e3:>12.3f}{t_slow / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
