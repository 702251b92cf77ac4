"""Seeded invariant batteries for the aggregation oracles and linear algebra.

Each check returns a :class:`CheckResult`; ``run_battery`` runs all of them.
The ``inject_bug`` switch shifts every geometric-median output by 0.1 along
the first axis so the battery's own sensitivity can be exercised.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import mathcore, robust_agg
from .schedules import c_alpha

GM_EPS = 1e-6
BF_RESOLUTION = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    cases: int
    failures: int
    worst: float
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name}: {self.cases - self.failures}/{self.cases} cases, "
                f"worst margin {self.worst:.3e}, {self.seconds:.2f}s")


def _gm_factory(inject_bug: bool) -> Callable:
    def gm(points, eps=GM_EPS):
        z = robust_agg.geometric_median(points, eps)
        if inject_bug:
            z = z.copy()
            z[0] += 0.1
        return z
    return gm


def _timed(name: str, fn) -> CheckResult:
    t0 = time.perf_counter()
    cases, failures, worst = fn()
    return CheckResult(name, failures == 0, cases, failures, worst, time.perf_counter() - t0)


def gm_vs_brute_force(instances: int = 50, seed: int = 1, inject_bug: bool = False) -> CheckResult:
    """g(Weiszfeld) <= g(grid search) + eps + 2 * resolution * sqrt(2) on 2-D clouds."""
    gm = _gm_factory(inject_bug)
    slack = GM_EPS + 2 * BF_RESOLUTION * math.sqrt(2)

    def body():
        rng = np.random.default_rng(seed)
        fails, worst = 0, -math.inf
        for _ in range(instances):
            n = int(rng.integers(1, 10))
            pts = rng.uniform(-1, 1, size=(n, 2))
            z = gm(pts)
            zb = robust_agg.brute_force_gm(pts, BF_RESOLUTION, box=(-np.ones(2), np.ones(2)))
            gap = robust_agg.gm_objective(pts, z) - robust_agg.gm_objective(pts, zb) - slack
            worst = max(worst, gap)
            fails += gap > 0
        return instances, fails, worst
    return _timed("gm-vs-brute-force", body)


def concentration_instance(rng: np.random.Generator):
    """A cloud with honest and arbitrarily corrupted points; returns (pts, honest mask)."""
    n = int(rng.integers(1, 22))
    n1 = int(rng.integers(0, (n - 1) // 2 + 1))
    d = int(rng.integers(1, 5))
    honest = rng.normal(size=(n - n1, d)) * rng.uniform(0.01, 3.0) + rng.normal(size=d)
    kind = int(rng.integers(0, 4))
    if kind == 0:
        bad = rng.normal(size=(n1, d)) * 1e9
    elif kind == 1:
        bad = np.tile(rng.normal(size=d) * 50.0, (n1, 1))
    elif kind == 2:
        bad = rng.uniform(-1e3, 1e3, size=(n1, d))
    else:
        bad = np.tile(honest.mean(axis=0) + 5.0 * rng.normal(size=d), (n1, 1))
    pts = np.vstack([honest, bad])
    mask = np.arange(n) < n - n1
    perm = rng.permutation(n)
    return pts[perm], mask[perm]


def gm_concentration(instances: int = 1000, seed: int = 2, inject_bug: bool = False) -> CheckResult:
    """||GM - z0|| <= C_alpha * (mean honest deviation + eps), z0 the honest mean."""
    gm = _gm_factory(inject_bug)

    def body():
        rng = np.random.default_rng(seed)
        fails, worst = 0, -math.inf
        for _ in range(instances):
            pts, honest = concentration_instance(rng)
            n, n1 = pts.shape[0], int((~honest).sum())
            z0 = pts[honest].mean(axis=0)
            dev = np.linalg.norm(pts[honest] - z0, axis=1).mean()
            bound = c_alpha(n1 / n) * (dev + GM_EPS)
            gap = float(np.linalg.norm(gm(pts) - z0)) - bound
            worst = max(worst, gap)
            fails += gap > 0
        return instances, fails, worst
    return _timed("gm-concentration", body)


def symmetrization(instances: int = 200, seed: int = 3, inject_bug: bool = False) -> CheckResult:
    """g(sym(Z)) <= g(Z) + 1e-12 for the raw matrix GM Z of symmetric inputs."""
    gm = _gm_factory(inject_bug)

    def body():
        rng = np.random.default_rng(seed)
        fails, worst = 0, -math.inf
        for _ in range(instances):
            d = int(rng.integers(2, 5))
            n = int(rng.integers(2, 12))
            a = rng.normal(size=(n, d, d))
            mats = (a + a.transpose(0, 2, 1)) / 2
            flat = mats.reshape(n, -1)
            raw = gm(flat).reshape(d, d)
            sym = mathcore.symmetrize(raw)
            gap = (robust_agg.gm_objective(flat, sym.reshape(-1))
                   - robust_agg.gm_objective(flat, raw.reshape(-1)) - 1e-12)
            worst = max(worst, gap)
            fails += gap > 0
        return instances, fails, worst
    return _timed("symmetrization", body)


def psd_inversion_order(instances: int = 200, seed: int = 4) -> CheckResult:
    """A = B + M^T M implies B^{-1} - A^{-1} is positive semidefinite."""
    def body():
        rng = np.random.default_rng(seed)
        fails, worst = 0, -math.inf
        for _ in range(instances):
            d = int(rng.integers(1, 7))
            g = rng.normal(size=(d, d))
            B = g @ g.T + rng.uniform(0.1, 2.0) * np.eye(d)
            M = rng.normal(size=(int(rng.integers(1, 2 * d + 1)), d))
            A = B + M.T @ M
            Ai = mathcore.SPDFactor(A).solve(np.eye(d))
            Bi = mathcore.SPDFactor(B).solve(np.eye(d))
            gap = -1e-8 - mathcore.min_eigenvalue(mathcore.symmetrize(Bi - Ai))
            worst = max(worst, gap)
            fails += gap > 0
        return instances, fails, worst
    return _timed("psd-inversion-order", body)


def spd_solve_residual(instances: int = 200, seed: int = 5) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        fails, worst = 0, -math.inf
        for _ in range(instances):
            d = int(rng.integers(1, 9))
            g = rng.normal(size=(d, d))
            A = g @ g.T + 0.5 * np.eye(d)
            b = rng.normal(size=d) * 10.0
            x = mathcore.spd_solve(A, b)
            gap = np.linalg.norm(A @ x - b) - 1e-8 * (1 + np.linalg.norm(b))
            worst = max(worst, gap)
            fails += gap > 0
        return instances, fails, worst
    return _timed("spd-solve-residual", body)


def translation_equivariance(instances: int = 200, seed: int = 6,
                             inject_bug: bool = False) -> CheckResult:
    gm = _gm_factory(inject_bug)

    def body():
        rng = np.random.default_rng(seed)
        fails, worst = 0, -math.inf
        for _ in range(instances):
            n, d = int(rng.integers(1, 15)), int(rng.integers(1, 5))
            pts = rng.normal(size=(n, d))
            c = rng.normal(size=d) * 3.0
            # tighter eps so the two solves agree to far below the 1e-8 tolerance
            gap = np.linalg.norm(gm(pts + c, 1e-12) - (gm(pts, 1e-12) + c)) - 1e-8
            worst = max(worst, gap)
            fails += gap > 0
        return instances, fails, worst
    return _timed("translation-equivariance", body)


def breakdown_sanity(instances: int = 200, seed: int = 7, inject_bug: bool = False) -> CheckResult:
    gm = _gm_factory(inject_bug)

    def body():
        rng = np.random.default_rng(seed)
        fails, worst = 0, -math.inf
        for _ in range(instances):
            n, d = int(rng.integers(3, 15)), int(rng.integers(1, 5))
            pts = rng.normal(size=(n, d))
            far = rng.normal(size=d)
            far *= 1e9 / np.linalg.norm(far)
            both = np.vstack([pts, far])
            z0 = pts.mean(axis=0)
            dev = np.linalg.norm(pts - z0, axis=1).mean()
            bound = c_alpha(1 / (n + 1)) * (dev + GM_EPS)
            moved = np.linalg.norm(gm(both) - z0)
            mean_moved = np.linalg.norm(both.mean(axis=0) - z0)
            gap = max(moved - bound, 1e8 / (n + 1) - mean_moved)
            worst = max(worst, gap)
            fails += gap > 0
        return instances, fails, worst
    return _timed("breakdown-sanity", body)


def run_battery(trials: int = 200, inject_bug: bool = False) -> list[CheckResult]:
    """All checks; ``trials`` scales the instance counts."""
    bf = max(50, trials // 20)
    return [
        gm_vs_brute_force(bf, inject_bug=inject_bug),
        gm_concentration(max(trials, 1000), inject_bug=inject_bug),
        symmetrization(trials, inject_bug=inject_bug),
        psd_inversion_order(trials),
        spd_solve_residual(trials),
        translation_equivariance(trials, inject_bug=inject_bug),
        breakdown_sanity(trials, inject_bug=inject_bug),
    ]
