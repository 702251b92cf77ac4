"""Regularization and confidence-radius schedules.

Three variants are supported:

``T1-robust``
    geometric-median aggregation, no privacy.
``T2-robust-dp``
    epsilon-approximate geometric median with tree-based privacy.
``T3-mom-dp``
    geometric median of means with tree-based privacy, for a known
    corruption bound alpha <= 1/4.

All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError, InvalidAlpha
from .privacy import noise_budget

VARIANTS = ("T1-robust", "T2-robust-dp", "T3-mom-dp")
AGNOSTIC_ALPHA = 0.49


def c_alpha(alpha: float) -> float:
    if not 0 <= alpha < 0.5:
        raise InvalidAlpha(f"alpha must satisfy 0 <= alpha < 1/2, got {alpha}")
    return (2.0 - 2.0 * alpha) / (1.0 - 2.0 * alpha)


def iota(N: int, T: int, delta: float) -> float:
    if N < 1 or T < 1 or not 0 < delta < 1:
        raise ValueError("need N, T >= 1 and 0 < delta < 1")
    return math.log(128.0 * N * T / delta)


def noise_budget_B(mu: float, nu: float, iota_: float, d: int) -> float:
    if mu <= 0 or not 0 < nu < 1:
        raise ValueError("need mu > 0 and 0 < nu < 1")
    return noise_budget(mu, nu, iota_, d)


@dataclass(frozen=True)
class ScheduleConfig:
    variant: str
    alpha: float
    sigma: float
    R: float
    d: int
    N: int
    T: int
    delta: float
    L: int
    K: int
    eps: float = 0.0
    B: float = 0.0  # 0 when privacy is disabled
    mu: float = math.inf
    nu: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown schedule variant {self.variant!r}")
        if self.variant == "T3-mom-dp":
            if not 0 <= self.alpha <= 0.25:
                raise InvalidAlpha(f"T3-mom-dp needs alpha <= 1/4, got {self.alpha}")
        elif not 0 <= self.alpha < 0.5:
            raise InvalidAlpha(f"alpha must satisfy alpha < 1/2, got {self.alpha}")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.eps < 0:
            raise ConfigError("eps must be >= 0")
        if self.L * self.K < self.T:
            raise ConfigError("need L * K >= T")

    @property
    def iota(self) -> float:
        # padded horizon K * L
        return iota(self.N, self.K * self.L, self.delta)

    @property
    def c_alpha(self) -> float:
        return c_alpha(self.alpha)


def lambda_k(cfg: ScheduleConfig, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    L, io, sig, d = cfg.L, cfg.iota, cfg.sigma, cfg.d
    if cfg.variant == "T3-mom-dp":
        lam1 = 128.0 * sig * math.sqrt(cfg.alpha * L * io)
        return 8.0 * (cfg.B * L * math.sqrt(d) + cfg.eps) + max(float(L), lam1 * math.sqrt(k))
    ca = cfg.c_alpha
    lam1 = 8.0 * math.sqrt(L * io) * ca * sig
    base = max(float(L), lam1 * math.sqrt(k))
    if cfg.variant == "T1-robust":
        return base
    return 2.0 * ca * (cfg.B * L * math.sqrt(d) + cfg.eps) + base


def beta_k(cfg: ScheduleConfig, k: int, lam: float) -> float:
    if lam <= 0:
        raise ValueError("lambda_k must be positive")
    L, io, d, N, R, sig = cfg.L, cfg.iota, cfg.d, cfg.N, cfg.R, cfg.sigma
    tail = 2.0 * R * math.sqrt(d * io / N)
    if cfg.variant == "T3-mom-dp":
        num = (64.0 * (sig + R) * math.sqrt(cfg.alpha * (k - 1) * L * d * io)
               + 4.0 * (cfg.B * L + cfg.eps))
        return 3.0 * math.sqrt(lam * d) + num / math.sqrt(lam) + tail
    ca = cfg.c_alpha
    num = 4.0 * math.sqrt((k - 1) * L * d * io) * ca * (sig + R)
    if cfg.variant == "T2-robust-dp":
        num = num + ca * (cfg.B * L + cfg.eps)
    return 3.0 * math.sqrt(lam * d) + num / math.sqrt(lam) + tail


def recommended_L_value(variant: str, alpha: float, sigma: float, R: float,
                        T: int, iota_: float) -> float:
    """Unrounded episode length recommended for the variant."""
    if variant == "T3-mom-dp":
        return max((sigma + R) * math.sqrt(alpha * T * iota_), 1.0)
    return c_alpha(alpha) * (sigma + R) * math.sqrt(T * iota_)


def recommended_L(cfg: ScheduleConfig) -> int:
    """Recommended episode length, rounded to the nearest integer >= 1.

    Uses ``cfg.iota`` as given; see :func:`build_schedule` for how the
    episode count follows.
    """
    raw = recommended_L_value(cfg.variant, cfg.alpha, cfg.sigma, cfg.R, cfg.T, cfg.iota)
    return max(1, int(math.floor(raw + 0.5)))


def episodes(T: int, L: int) -> int:
    return -(-T // L)


def build_schedule(variant: str, *, alpha: float, sigma: float, R: float, d: int,
                   N: int, T: int, delta: float, L: int | None = None,
                   eps: float = 0.0, dp: bool = False, mu: float = math.inf,
                   nu: float = 0.1, agnostic: bool = False) -> ScheduleConfig:
    """Assemble a :class:`ScheduleConfig`, choosing L when it is not given.

    The recommended L is computed with iota at the raw horizon T; K is then
    ceil(T / L) and the schedule's own iota uses the padded horizon K * L.
    With ``agnostic`` the T1/T2 formulas use alpha = 0.49 instead of the
    true corruption level.
    """
    a = AGNOSTIC_ALPHA if agnostic and variant != "T3-mom-dp" else alpha
    if L is None:
        raw = recommended_L_value(variant, a, sigma, R, T, iota(N, T, delta))
        L = max(1, int(math.floor(raw + 0.5)))
    K = episodes(T, L)
    cfg = ScheduleConfig(variant=variant, alpha=a, sigma=sigma, R=R, d=d, N=N, T=T,
                         delta=delta, L=L, K=K, eps=eps, mu=mu, nu=nu)
    if dp:
        cfg = replace(cfg, B=noise_budget_B(mu, nu, cfg.iota, d))
    return cfg
