"""Aggregation oracles: arithmetic mean, geometric median, median of means.

The geometric median of points z_1..z_n minimizes
``g(z) = (1/n) * sum_i ||z - z_i||_2``. Matrices are aggregated through
their flattenings (Frobenius norm) and the result is symmetrized.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionTooLarge, InvalidCorruptionBound, NoConvergence
from .mathcore import symmetrize

DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class PointCloud:
    """n finite points of a common dimension.

    Build with :meth:`from_points`, which coerces malformed entries (wrong
    shape or non-finite values) to the zero point.
    """

    points: np.ndarray
    coerced: np.ndarray = field(default=None, compare=False)

    @classmethod
    def from_points(cls, points, dim: int | None = None) -> "PointCloud":
        rows = list(points) if not isinstance(points, np.ndarray) else list(points)
        if not rows:
            raise ValueError("a point cloud needs at least one point")
        if dim is None:
            dim = _infer_dim(rows)
        out = np.zeros((len(rows), dim))
        bad = np.zeros(len(rows), dtype=bool)
        for i, r in enumerate(rows):
            try:
                a = np.asarray(r, dtype=float).reshape(-1)
            except (TypeError, ValueError):
                bad[i] = True
                continue
            if a.shape[0] != dim or not np.all(np.isfinite(a)):
                bad[i] = True
                continue
            out[i] = a
        return cls(out, bad)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _infer_dim(rows) -> int:
    sizes = []
    for r in rows:
        try:
            a = np.asarray(r, dtype=float).reshape(-1)
        except (TypeError, ValueError):
            continue
        sizes.append(a.shape[0])
    if not sizes:
        raise ValueError("cannot infer dimension: no well-formed point")
    # the most common size wins; odd-sized points are the malformed ones
    vals, counts = np.unique(sizes, return_counts=True)
    return int(vals[np.argmax(counts)])


def as_cloud(points) -> PointCloud:
    if isinstance(points, PointCloud):
        return points
    arr = np.asarray(points, dtype=float) if _is_regular(points) else None
    if arr is not None and arr.ndim == 2 and np.all(np.isfinite(arr)):
        return PointCloud(arr, np.zeros(arr.shape[0], dtype=bool))
    if arr is not None and arr.ndim == 1:
        return as_cloud(arr.reshape(-1, 1))
    return PointCloud.from_points(points)


def _is_regular(points) -> bool:
    try:
        np.asarray(points, dtype=float)
    except (TypeError, ValueError):
        return False
    return True


def arithmetic_mean(cloud) -> np.ndarray:
    return as_cloud(cloud).points.mean(axis=0)


def gm_objective(cloud, z) -> float:
    return kernels.objective(as_cloud(cloud).points, np.asarray(z, dtype=float))


@dataclass(frozen=True)
class GMResult:
    point: np.ndarray
    iterations: int
    converged: bool
    method: str  # "trivial", "data-point" or "weiszfeld"


def _optimal_data_point(pts: np.ndarray) -> np.ndarray | None:
    """Return a data point that is an exact geometric median, if one is.

    A point y of multiplicity m minimizes g iff the sum of unit vectors
    from the other points towards y has norm <= m. Among qualifying points
    the one of highest multiplicity (then lowest index) is returned.
    """
    n = pts.shape[0]
    if n > 256:
        return _optimal_data_point_large(pts)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    same = dist == 0.0
    mult = same.sum(axis=1)
    if mult[0] == n:
        return pts[0].copy()
    safe = np.where(same, 1.0, dist)
    unit = np.where(same[:, :, None], 0.0, diff / safe[:, :, None])
    pull = np.sqrt(np.sum(np.sum(unit, axis=1) ** 2, axis=1))
    ok = pull <= mult
    if not np.any(ok):
        return None
    best = np.flatnonzero(ok)
    return pts[best[np.argmax(mult[best])]].copy()


def _optimal_data_point_large(pts: np.ndarray) -> np.ndarray | None:
    uniq, inverse, counts = np.unique(pts, axis=0, return_inverse=True,
                                      return_counts=True)
    inverse = inverse.reshape(-1)
    if uniq.shape[0] == 1:
        return uniq[0].copy()
    for u in np.argsort(-counts, kind="stable"):
        y = uniq[u]
        others = pts[inverse != u]
        diff = y - others
        norms = np.sqrt(np.sum(diff * diff, axis=1))
        pull = np.sqrt(np.sum(np.sum(diff / norms[:, None], axis=0) ** 2))
        if pull <= counts[u]:
            return y.copy()
    return None


NEWTON_MAX_DIM = 64


def _decrease(pts: np.ndarray, z: np.ndarray, zn: np.ndarray) -> float:
    """g(z) - g(zn), summed as norm differences to avoid cancellation."""
    a = np.sqrt(np.sum((pts - z) ** 2, axis=1))
    b = np.sqrt(np.sum((pts - zn) ** 2, axis=1))
    den = a + b
    num = (pts * -2.0 + (z + zn)) @ (z - zn)
    ok = den > 0.0
    return float(np.sum(num[ok] / den[ok])) / pts.shape[0]


def _newton_polish(pts: np.ndarray, z: np.ndarray, eps: float, floor: float,
                   max_steps: int = 50) -> np.ndarray:
    n, p = pts.shape
    eye = np.eye(p)
    for _ in range(max_steps):
        diff = z - pts
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        if np.any(dist <= floor):
            break
        u = diff / dist[:, None]
        grad = u.mean(axis=0)
        H = (np.einsum("i,jk->jk", 1.0 / dist, eye)
             - np.einsum("i,ij,ik->jk", 1.0 / dist, u, u)) / n
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        dec2 = float(grad @ step)
        if not np.isfinite(dec2) or dec2 <= 0.0 or dec2 / 2.0 <= eps / 100:
            break
        t = 1.0
        while t > 1e-12:
            zn = z - t * step
            if _decrease(pts, z, zn) >= 0.25 * t * dec2:
                break
            t /= 2.0
        else:
            break
        z = zn
    return z


def geometric_median(cloud, eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER,
                     *, strict: bool = False, return_info: bool = False):
    """epsilon-approximate geometric median by smoothed Weiszfeld.

    Data points are first tested for exact optimality (this settles the
    common case of a majority of identical inputs exactly). Otherwise the
    Weiszfeld iteration starts at the coordinatewise median and stops when
    the iterate moves less than ``eps / (100 n)`` or the objective drops
    less than ``eps / 100``; a damped Newton polish then removes the slack
    left by slow Weiszfeld convergence near a data point. With ``strict`` an exhausted ``max_iter`` raises
    :class:`NoConvergence`; otherwise it is reported in the result.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    pts = as_cloud(cloud).points
    n = pts.shape[0]

    if n == 1:
        res = GMResult(pts[0].copy(), 0, True, "trivial")
    else:
        y = _optimal_data_point(pts)
        if y is not None:
            res = GMResult(y, 0, True, "data-point")
        else:
            z0 = np.median(pts, axis=0)
            spread = float(np.median(np.sqrt(np.sum((pts - z0) ** 2, axis=1))))
            floor = 1e-12 * (1.0 + spread)
            z, it, ok = kernels.weiszfeld(pts, z0, eps / (100 * n), eps / 100, max_iter, floor)
            if pts.shape[1] <= NEWTON_MAX_DIM:
                z = _newton_polish(pts, z, eps, floor)
            res = GMResult(z, it, ok, "weiszfeld")
    if strict and not res.converged:
        raise NoConvergence(f"Weiszfeld stopped at max_iter={max_iter}")
    return res if return_info else res.point


def geometric_median_matrices(mats, eps: float = DEFAULT_EPS,
                              max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Geometric median of d x d matrices under the Frobenius norm, symmetrized.

    Inputs that are not finite d x d arrays are replaced by the zero matrix.
    """
    flat, d = _flatten_matrices(mats)
    z = geometric_median(PointCloud(flat, None), eps, max_iter)
    return symmetrize(z.reshape(d, d))


def _flatten_matrices(mats):
    mats = list(mats)
    d = None
    for m in mats:
        a = np.asarray(m, dtype=float) if _is_regular(m) else None
        if a is not None and a.ndim == 2 and a.shape[0] == a.shape[1]:
            d = a.shape[0]
            break
    if d is None:
        raise ValueError("no well-formed square matrix among the inputs")
    cloud = PointCloud.from_points(
        [np.asarray(m, dtype=float) if _is_regular(m) and np.shape(m) == (d, d) else None
         for m in mats],
        dim=d * d,
    )
    return cloud.points, d


@dataclass(frozen=True)
class GroupPartition:
    groups: tuple  # tuple of sorted index arrays

    @property
    def P(self) -> int:
        return len(self.groups)

    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]


def partition_agents(N: int, N1: int, rng: np.random.Generator) -> GroupPartition:
    """Split agents 0..N-1 into max(3*N1, 1) groups as equally as possible.

    A uniformly random permutation is dealt round-robin; indices inside each
    group are sorted so a single group averages in agent order.
    """
    if N1 < 0 or 3 * N1 > N:
        raise InvalidCorruptionBound(f"need 0 <= 3*N1 <= N, got N={N}, N1={N1}")
    P = max(3 * N1, 1)
    perm = rng.permutation(N)
    return GroupPartition(tuple(np.sort(perm[j::P]) for j in range(P)))


def group_means(points: np.ndarray, partition: GroupPartition) -> np.ndarray:
    return np.stack([points[g].mean(axis=0) for g in partition.groups])


def gm_of_means(cloud, partition: GroupPartition, eps: float = DEFAULT_EPS,
                max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    pts = as_cloud(cloud).points
    covered = np.sort(np.concatenate(partition.groups))
    if covered.shape[0] != pts.shape[0] or np.any(covered != np.arange(pts.shape[0])):
        raise ValueError("partition does not cover the cloud's index set")
    means = group_means(pts, partition)
    if partition.P == 1:
        return means[0]
    return geometric_median(PointCloud(means, None), eps, max_iter)


def brute_force_gm(cloud, resolution: float, box=None) -> np.ndarray:
    """Grid-search geometric median, an oracle independent of Weiszfeld.

    Cells of the grid over the bounding box are discarded only when the
    Lipschitz lower bound (g is 1-Lipschitz) proves they cannot beat the
    incumbent, so the search is equivalent to an exhaustive grid at
    ``resolution``. Two refinement passes at 10x finer spacing follow around
    the incumbent. Ties go to the lexicographically lowest grid point.
    """
    pts = as_cloud(cloud).points
    p = pts.shape[1]
    if p > 4:
        raise DimensionTooLarge(f"brute force supports dim <= 4, got {p}")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if box is None:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
    extent = float(np.max(hi - lo))
    if extent <= resolution:
        centers = ((lo + hi) / 2.0)[None, :]
        h = resolution
    else:
        # coarse cells, bisected until their width reaches the resolution
        levels = int(np.ceil(np.log2(extent / resolution)))
        h = resolution * 2.0 ** levels
        k = int(np.ceil(extent / h)) + 1
        axes = [lo[j] + h * np.arange(k) for j in range(p)]
        centers = np.array(list(itertools.product(*axes)))
    offsets = np.array(list(itertools.product((-0.25, 0.25), repeat=p)))
    while True:
        vals = kernels.objective_many(pts, centers)
        best = float(vals.min())
        keep = vals - (h / 2.0) * np.sqrt(p) <= best
        centers = centers[keep]
        if h <= resolution * (1 + 1e-12):
            vals = vals[keep]
            break
        centers = (centers[:, None, :] + h * offsets[None, :, :]).reshape(-1, p)
        h /= 2.0
    z = _lexmin(centers, vals)
    step = h
    for _ in range(2):
        fine = step / 10.0
        grid = np.arange(-10, 11) * fine
        cands = z + np.array(list(itertools.product(grid, repeat=p)))
        vals = kernels.objective_many(pts, cands)
        z = _lexmin(cands, vals)
        step = fine
    return z


def _lexmin(cands: np.ndarray, vals: np.ndarray) -> np.ndarray:
    best = vals.min()
    tied = cands[vals == best]
    order = np.lexsort(tied.T[::-1])
    return tied[order[0]].copy()


def aggregate(points: np.ndarray, oracle: str, *, eps: float = DEFAULT_EPS,
              partition: GroupPartition | None = None,
              max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Aggregate an (n, ...) stack of vectors or square matrices.

    Matrix outputs of the robust oracles are symmetrized.
    """
    arr = np.asarray(points, dtype=float)
    n = arr.shape[0]
    shape = arr.shape[1:]
    flat = arr.reshape(n, -1)
    if oracle == "mean":
        out = flat.mean(axis=0)
    elif oracle == "gm":
        out = geometric_median(PointCloud(flat, None), eps, max_iter)
    elif oracle == "gm-of-means":
        if partition is None:
            raise ValueError("gm-of-means needs a partition")
        out = gm_of_means(PointCloud(flat, None), partition, eps, max_iter)
    else:
        raise ValueError(f"unknown oracle {oracle!r}")
    out = out.reshape(shape)
    if len(shape) == 2 and oracle != "mean":
        out = symmetrize(out)
    return out
