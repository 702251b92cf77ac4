"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends run the same seeded workloads; the script also asserts that
their results agree.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from fedbandit import kernels, robust_agg


def _workloads(seed: int = 0):
    rng = np.random.default_rng(seed)
    clouds = [rng.normal(size=(int(rng.integers(5, 40)), int(rng.integers(2, 17))))
              for _ in range(200)]
    grid_pts = rng.uniform(-1, 1, size=(9, 2))
    grid = rng.uniform(-1, 1, size=(20000, 2))
    return clouds, grid_pts, grid


def run(repeat: int) -> dict:
    clouds, grid_pts, grid = _workloads()
    tasks = {
        "weiszfeld x200": lambda: [kernels.weiszfeld(c, np.median(c, axis=0), 1e-9, 1e-9,
                                                     10_000, 1e-12) for c in clouds],
        "objective_many 20k": lambda: kernels.objective_many(grid_pts, grid),
        "brute_force_gm 2-D": lambda: robust_agg.brute_force_gm(grid_pts, 1e-4),
    }
    timings: dict = {}
    outputs: dict = {}
    for name in sorted(kernels.BACKENDS):
        kernels.set_backend(name)
        for task, fn in tasks.items():
            timings[(task, name)] = min(timeit.repeat(fn, number=1, repeat=repeat))
        outputs[name] = (tasks["objective_many 20k"](),
                         [z for z, _, _ in tasks["weiszfeld x200"]()])
    kernels.set_backend("cython" if "cython" in kernels.BACKENDS else "python")
    if len(outputs) == 2:
        a, b = outputs["cython"], outputs["python"]
        assert np.allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
        assert all(np.allclose(x, y, atol=1e-9) for x, y in zip(a[1], b[1]))
    return timings


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    timings = run(args.repeat)
    names = sorted(kernels.BACKENDS)
    print(f"{'task':<22}" + "".join(f"{n:>12}" for n in names) + "     speedup")
    for task in sorted({t for t, _ in timings}):
        row = [timings[(task, n)] for n in names]
        speed = (f"{timings[(task, 'python')] / timings[(task, 'cython')]:10.1f}x"
                 if len(names) == 2 else "")
        print(f"{task:<22}" + "".join(f"{v * 1e3:10.1f}ms" for v in row) + "  " + speed)


if __name__ == "__main__":
    main()
