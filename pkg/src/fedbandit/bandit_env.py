"""Stochastic linear bandit environment shared by all agents.

Decision sets are finite. Every arm lies in the unit ball and the reward of
arm x is <x, theta*> + eta with eta drawn from an R-sub-Gaussian family:

``truncated-gaussian``
    N(0, R^2) conditioned on |eta| <= 3R. A centred Gaussian truncated to a
    symmetric interval is R-sub-Gaussian (its MGF is dominated by the
    untruncated one), and it is bounded by 3R.
``uniform``
    Uniform on [-sqrt(3) R, sqrt(3) R]; strictly sub-Gaussian with variance
    proxy R^2 and bounded by sqrt(3) R.

Set families:

``shared``        one set per step, identical for all agents (sigma = 0)
``iid-resample``  independent sets per agent, arms drawn afresh
``iid-rotations`` a base set rotated by an independent Haar rotation per agent
``fixed``         the ``arm_pool`` itself at every step
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SET_FAMILIES = ("shared", "iid-resample", "iid-rotations", "fixed")
NOISE_FAMILIES = ("truncated-gaussian", "uniform")


@dataclass(frozen=True)
class EnvironmentSpec:
    d: int
    N: int
    T: int
    arms_per_set: int = 10
    noise_R: float = 0.1
    noise_family: str = "truncated-gaussian"
    set_family: str = "shared"
    reward_clip: bool = False
    theta_star: tuple | None = None
    theta_norm: float = 1.0
    drift_schedule: tuple = ()
    arm_pool: tuple | None = None

    def __post_init__(self):
        if self.d < 1 or self.N < 1 or self.T < 1:
            raise ConfigError("d, N and T must be positive")
        if self.arms_per_set < 1:
            raise ConfigError("arms_per_set must be >= 1")
        if self.noise_R < 0:
            raise ConfigError("noise_R must be >= 0")
        if self.noise_family not in NOISE_FAMILIES:
            raise ConfigError(f"unknown noise family {self.noise_family!r}")
        if self.set_family not in SET_FAMILIES:
            raise ConfigError(f"unknown set family {self.set_family!r}")
        if self.set_family == "fixed" and self.arm_pool is None:
            raise ConfigError("set_family 'fixed' needs an arm_pool")
        if self.arm_pool is not None:
            pool = np.asarray(self.arm_pool, dtype=float)
            if pool.ndim != 2 or pool.shape[1] != self.d:
                raise ConfigError("arm_pool must be a list of d-vectors")
            if np.any(np.linalg.norm(pool, axis=1) > 1 + 1e-12):
                raise ConfigError("arm_pool arms must lie in the unit ball")
        if self.theta_star is not None:
            th = np.asarray(self.theta_star, dtype=float)
            if th.shape != (self.d,):
                raise ConfigError("theta_star must have length d")
            if np.linalg.norm(th) > math.sqrt(self.d) + 1e-12:
                raise ConfigError("||theta*|| must not exceed sqrt(d)")
        elif not 0 <= self.theta_norm <= math.sqrt(self.d):
            raise ConfigError("theta_norm must lie in [0, sqrt(d)]")
        if any(not 1 < c <= self.T for c in self.drift_schedule):
            raise ConfigError("drift change-points must lie in (1, T]")

    @property
    def noise_bound(self) -> float:
        if self.noise_family == "uniform":
            return math.sqrt(3.0) * self.noise_R
        return 3.0 * self.noise_R


@dataclass
class RoundDraw:
    arms: np.ndarray   # (N, A, d)
    noise: np.ndarray  # (N,)

    def decision_set(self, i: int) -> np.ndarray:
        return self.arms[i]


def _unit_rows(g: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(g, axis=-1, keepdims=True)
    nrm[nrm == 0.0] = 1.0
    return g / nrm


def haar_rotations(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    g = rng.standard_normal((count, d, d))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diagonal(r, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    return q * signs[:, None, :]


@dataclass
class BanditEnvironment:
    """Environment state: theta* and the arm-generator parameters per segment."""

    spec: EnvironmentSpec
    theta_star: np.ndarray
    mixers: list = field(default_factory=list)      # one d x d per segment
    base_sets: list = field(default_factory=list)   # one (A, d) per segment

    @classmethod
    def create(cls, spec: EnvironmentSpec, rng: np.random.Generator) -> "BanditEnvironment":
        d = spec.d
        if spec.theta_star is not None:
            theta = np.asarray(spec.theta_star, dtype=float)
        else:
            theta = spec.theta_norm * _unit_rows(rng.standard_normal(d))
        if spec.reward_clip:
            # keep |<x, theta*>| + |eta| <= 1 so clipping stays inactive in distribution
            room = 1.0 - spec.noise_bound
            if room <= 0:
                raise ConfigError("reward_clip needs the noise bound below 1")
            nrm = float(np.linalg.norm(theta))
            if nrm > room:
                theta = theta * (room / nrm)
        segments = 1 + len(spec.drift_schedule)
        mixers = [np.eye(d)]
        for _ in range(1, segments):
            mixers.append(np.eye(d) + rng.standard_normal((d, d)))
        base_sets = [_unit_rows(rng.standard_normal((spec.arms_per_set, d)) @ m.T)
                     for m in mixers]
        return cls(spec, theta, mixers, base_sets)

    def segment(self, t: int) -> int:
        return sum(1 for c in self.spec.drift_schedule if t >= c)

    def _fresh_arms(self, rng, count: int, t: int) -> np.ndarray:
        spec = self.spec
        A, d = spec.arms_per_set, spec.d
        if spec.arm_pool is not None:
            pool = np.asarray(spec.arm_pool, dtype=float)
            idx = rng.integers(0, pool.shape[0], size=(count, A))
            return pool[idx]
        m = self.mixers[self.segment(t)]
        return _unit_rows(rng.standard_normal((count, A, d)) @ m.T)

    def _noise(self, rng, count: int) -> np.ndarray:
        R = self.spec.noise_R
        if R == 0.0:
            return np.zeros(count)
        if self.spec.noise_family == "uniform":
            a = math.sqrt(3.0) * R
            return rng.uniform(-a, a, size=count)
        z = rng.standard_normal(count)
        bad = np.abs(z) > 3.0
        while np.any(bad):
            z[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(z) > 3.0
        return R * z

    def sample_round(self, t: int, rng: np.random.Generator) -> RoundDraw:
        spec = self.spec
        if not 1 <= t <= spec.T:
            raise ValueError(f"t must lie in [1, {spec.T}]")
        N = spec.N
        fam = spec.set_family
        if fam == "shared":
            one = self._fresh_arms(rng, 1, t)
            arms = np.repeat(one, N, axis=0)
        elif fam == "iid-resample":
            arms = self._fresh_arms(rng, N, t)
        elif fam == "iid-rotations":
            base = self.base_sets[self.segment(t)]
            rot = haar_rotations(rng, N, spec.d)
            arms = np.einsum("ad,nkd->nak", base, rot)
        else:
            pool = np.asarray(spec.arm_pool, dtype=float)
            arms = np.repeat(pool[None], N, axis=0)
        return RoundDraw(arms, self._noise(rng, N))

    def reward(self, x, eta):
        return reward(x, self.theta_star, eta, self.spec.reward_clip)


def sample_round(env: BanditEnvironment, t: int, rng: np.random.Generator) -> RoundDraw:
    return env.sample_round(t, rng)


def reward(x, theta_star, eta, clip: bool = False):
    """<x, theta*> + eta, clamped to [-1, 1] when ``clip`` is set.

    Works on a single arm or row-wise on an (n, d) stack.
    """
    x = np.asarray(x, dtype=float)
    r = x @ np.asarray(theta_star, dtype=float) + eta
    if clip:
        r = np.clip(r, -1.0, 1.0)
    return float(r) if np.ndim(r) == 0 else r


def optimal_value(D, theta_star) -> float:
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D.reshape(-1, 1)
    if D.shape[0] == 0:
        raise ValueError("decision set is empty")
    return float(np.max(D @ np.asarray(theta_star, dtype=float)))


def empirical_sigma(env: BanditEnvironment, samples: int, rng: np.random.Generator,
                    t: int = 1) -> float:
    """Monte Carlo estimate of the worst Frobenius deviation of x x^T.

    x is the greedy choice argmax <x, theta*> on a decision set drawn for
    one agent at step ``t``. Shared and fixed sets carry no cross-agent
    randomness and give 0. The estimate is capped at 2.
    """
    if samples < 100:
        raise ValueError("samples must be >= 100")
    fam = env.spec.set_family
    if fam in ("shared", "fixed"):
        return 0.0
    sets = []
    while len(sets) < samples:
        draw = env.sample_round(t, rng)
        sets.extend(draw.arms)
    arms = np.stack(sets[:samples])
    idx = np.argmax(arms @ env.theta_star, axis=1)
    x = arms[np.arange(samples), idx]
    outer = np.einsum("ni,nj->nij", x, x)
    mean = outer.mean(axis=0)
    dev = np.sqrt(np.sum((outer - mean) ** 2, axis=(1, 2)))
    return float(min(dev.max(), 2.0))
