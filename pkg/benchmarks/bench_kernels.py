"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py --sizes 50 200 800
"""
from __future__ import annotations

import argparse

from expflow import bench, kernels


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 800])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"kernels: {kernels.BACKEND}")
    cols = ["n", "m", "max_flow_python_s", "max_flow_cython_s", "max_flow_speedup",
            "decompose_python_s", "decompose_cython_s", "decompose_speedup"]
    print("  ".join(f"{c:>18}" for c in cols))
    for row in bench.run(args.sizes, seed=args.seed, repeat=args.repeat):
        print("  ".join(f"{row.get(c, float('nan')):>18.6g}" for c in cols))


if __name__ == "__main__":
    main()
