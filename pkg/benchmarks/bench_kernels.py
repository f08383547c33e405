"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from avstack.decision import MdpParams, Phi
from avstack.kernels import compiled_backend, python_backend


def cases():
    rng = np.random.default_rng(0)
    xyz = rng.uniform([-20, -20, 0], [20, 20, 3], size=(20_000, 3))
    pts = rng.normal(size=(108, 216, 3))
    valid = np.ones((108, 216), dtype=np.uint8)
    dirs = rng.normal(size=(20_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    boxes = np.array([[15, 0, 0, 2.3, 0.95, 0, 1.5], [30, 3, 0.3, 2.3, 0.95, 0, 1.5]], dtype=float)
    p = MdpParams()
    return {
        "bin_height_grid": lambda k: k.bin_height_grid(xyz, -20.0, -20.0, 0.2, 200, 200),
        "virtual_scan_keep": lambda k: k.virtual_scan_keep(pts, valid, 0.985, 0.5**0.5),
        "raycast": lambda k: k.raycast((0.0, 0.0, 2.4), dirs, boxes, True, 50.0),
        "uct_plan": lambda k: k.uct_plan(6.0, 25.0, int(Phi.YELLOW), np.inf, p.kernel_tuple(), 2048, p.depth, 1),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ns = ap.parse_args()
    if compiled_backend is None:
        print("compiled extension not built; only the Python backend is timed")
    print(f"{'kernel':20s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(python_backend), number=1, repeat=ns.repeat)) * 1e3
        if compiled_backend is None:
            print(f"{name:20s} {t_py:10.2f} {'-':>12s} {'-':>8s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(compiled_backend), number=1, repeat=ns.repeat)) * 1e3
        print(f"{name:20s} {t_py:10.2f} {t_c:12.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
