"""Pure numpy kernels for geometric-median computations.

These are the reference semantics; the compiled ``_kernels`` module must
agree with them to rounding.
"""

from __future__ import annotations

import numpy as np


def objective(pts: np.ndarray, z: np.ndarray) -> float:
    return float(np.mean(np.sqrt(np.sum((pts - z) ** 2, axis=1))))


def objective_many(pts: np.ndarray, cands: np.ndarray) -> np.ndarray:
    out = np.empty(cands.shape[0])
    # chunk to bound the (m, n, p) temporary
    step = max(1, 2_000_000 // max(1, pts.size))
    for s in range(0, cands.shape[0], step):
        c = cands[s:s + step]
        diff = c[:, None, :] - pts[None, :, :]
        out[s:s + step] = np.mean(np.sqrt(np.sum(diff * diff, axis=2)), axis=1)
    return out


def weiszfeld(pts: np.ndarray, z0: np.ndarray, move_tol: float, obj_tol: float,
              max_iter: int, floor: float):
    """Weiszfeld iteration with the Vardi-Zhang step at coincident points.

    Points within ``floor`` of the iterate count as coinciding with it; they
    are left out of the weighted average and the step is shrunk by their
    multiplicity, so an iterate sitting on a data point can still leave it.
    Stops when the iterate moves less than ``move_tol``, the objective drops
    less than ``obj_tol``, the optimality condition holds at a data point,
    or a step would increase the objective (the previous iterate is kept).
    Returns ``(z, iterations, converged)``.
    """
    z = np.array(z0, dtype=float, copy=True)
    n = pts.shape[0]
    it = 0
    while it < max_iter:
        it += 1
        dist = np.sqrt(np.sum((pts - z) ** 2, axis=1))
        far = dist > floor
        m = float(n - np.count_nonzero(far))
        if not np.any(far):
            return z, it, True
        w = 1.0 / dist[far]
        zn = (w @ pts[far]) / np.sum(w)
        if m > 0.0:
            r = float(np.sqrt(np.sum((w @ (pts[far] - z)) ** 2)))
            if r <= m:
                return z, it, True
            keep = m / r
            zn = (1.0 - keep) * zn + keep * z
        move = float(np.sqrt(np.sum((zn - z) ** 2)))
        dn = np.sqrt(np.sum((pts - zn) ** 2, axis=1))
        denom = dist + dn
        num = (pts * -2.0 + (z + zn)) @ (z - zn)
        ok = denom > 0.0
        dec = float(np.sum(num[ok] / denom[ok])) / n
        if dec < 0.0:
            return z, it, True
        z = zn
        if move < move_tol or dec < obj_tol:
            return z, it, True
    return z, it, False
