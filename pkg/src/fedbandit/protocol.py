"""Episodic federated LinUCB under Byzantine corruption.

Agents act with the last broadcast model for L steps, upload their episode
sums ``(U, u)``, and the controller validates, privatizes and aggregates the
running sums into the next broadcast. Regret is counted only for agents that
are not corrupted at the step in question.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import schedules
from .bandit_env import BanditEnvironment, empirical_sigma
from .errors import ConfigError, NotPositiveDefinite
from .mathcore import SYM_TOL, min_eigenvalue
from .privacy import NoiseTree, calibrate, privatize
from .robust_agg import GroupPartition, aggregate, partition_agents

if TYPE_CHECKING:
    from .config import ExperimentConfig

ATTACK_MODES = ("zero-out", "huge-norm", "sign-flip", "asymmetric-garbage",
                "fake-parameter", "random-gaussian")
PERSISTENCE = ("always", "per-episode", "per-step")
ORACLES = ("mean", "gm", "gm-of-means")
PD_FLOOR = 1e-10
HUGE = 1e6
# relative slack on the norm thresholds; unit arms may round to 1 + ulp
NORM_SLACK = 1e-9
TIE_TOL = 1e-12


@dataclass
class ModelBroadcast:
    theta: np.ndarray
    Lambda: np.ndarray
    beta: float
    k: int
    _chol_inv: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def chol_inv(self) -> np.ndarray:
        """Inverse Cholesky factor C with Lambda^{-1} = C^T C."""
        if self._chol_inv is None:
            try:
                c = np.linalg.cholesky(self.Lambda)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite("broadcast Lambda is not positive definite") from exc
            self._chol_inv = np.linalg.inv(c)
        return self._chol_inv


@dataclass
class EpisodeMessage:
    agent: int
    k: int
    U: np.ndarray
    u: np.ndarray
    # sum of x * eta over the episode; simulator-side context for fake-parameter
    xeta: np.ndarray | None = None


@dataclass(frozen=True)
class AttackSpec:
    alpha: float = 0.0
    mode: str = "zero-out"
    persistence: str = "always"
    p: float = 1.0

    def __post_init__(self):
        if not 0 <= self.alpha < 0.5:
            raise ConfigError(f"corruption fraction alpha must satisfy 0 <= alpha < 1/2, got {self.alpha}")
        if self.mode not in ATTACK_MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if self.persistence not in PERSISTENCE:
            raise ConfigError(f"unknown persistence {self.persistence!r}")
        if self.persistence == "per-step" and self.mode != "fake-parameter":
            raise ConfigError("per-step persistence is only defined for fake-parameter")
        if not 0 <= self.p <= 1:
            raise ConfigError("attack probability p must lie in [0, 1]")

    def n_corrupted(self, N: int) -> int:
        # floor, guarded against representation error in alpha * N
        return int(math.floor(self.alpha * N + 1e-9))

    def corrupted_set(self, N: int, rng: np.random.Generator) -> np.ndarray:
        mask = np.zeros(N, dtype=bool)
        mask[rng.choice(N, size=self.n_corrupted(N), replace=False)] = True
        return mask


@dataclass
class RegretTrace:
    T: int
    L: int
    K: int
    cumulative: np.ndarray
    episode: np.ndarray
    lam: np.ndarray
    beta: np.ndarray
    norm_E: np.ndarray
    norm_e: np.ndarray
    theta_error: np.ndarray
    min_eig: np.ndarray
    dp_noise: np.ndarray
    sigma: float = 0.0
    sigma_source: str = "analytic"
    steps_done: int = 0
    episodes_done: int = 0
    ledger_history: list | None = None
    # per agent: number of steps it was counted in the robust regret
    counted: np.ndarray | None = None

    @classmethod
    def empty(cls, T: int, L: int, K: int, N: int = 0) -> "RegretTrace":
        z = lambda n: np.zeros(n)  # noqa: E731
        return cls(T, L, K, z(T), np.zeros(T, dtype=np.int64),
                   z(K), z(K), z(K), z(K), z(K), z(K), z(K),
                   counted=np.zeros(N, dtype=np.int64))

    @property
    def final_regret(self) -> float:
        return float(self.cumulative[self.steps_done - 1]) if self.steps_done else 0.0

    def regret_at(self, t: int) -> float:
        return float(self.cumulative[t - 1])


# ---------------------------------------------------------------- agents

def select_action(D, bc: ModelBroadcast) -> tuple[int, np.ndarray]:
    """UCB arm of one decision set; ties go to the lowest index."""
    D = np.asarray(D, dtype=float)
    idx = int(select_batch(D[None], bc)[0])
    return idx, D[idx].copy()


def select_batch(arms: np.ndarray, bc: ModelBroadcast) -> np.ndarray:
    """UCB arm indices for an (N, A, d) stack of decision sets."""
    proj = arms @ bc.chol_inv.T
    bonus = np.sqrt(np.sum(proj * proj, axis=-1))
    score = arms @ bc.theta + bc.beta * bonus
    top = score.max(axis=-1, keepdims=True)
    # indices equal up to rounding are ties; the lowest one wins
    return np.argmax(score >= top - TIE_TOL * (1.0 + np.abs(top)), axis=-1)


def accumulate(U, u, x, r) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return U + np.outer(x, x), u + r * x


# ------------------------------------------------------------ controller

def validate_message(msg: EpisodeMessage, L: int, dp_mode: bool) -> EpisodeMessage:
    """Zero out a message that fails the symmetry, finiteness or norm checks."""
    U, u = msg.U, msg.u
    d = u.shape[0] if isinstance(u, np.ndarray) and u.ndim == 1 else None
    ok = (isinstance(U, np.ndarray) and isinstance(u, np.ndarray) and d is not None
          and U.shape == (d, d) and np.all(np.isfinite(U)) and np.all(np.isfinite(u))
          and np.all(np.abs(U - U.T) <= SYM_TOL))
    if ok and dp_mode:
        cap = L * (1 + NORM_SLACK)
        ok = np.linalg.norm(U) <= cap and np.linalg.norm(u) <= cap
    if ok:
        return msg
    dim = d if d is not None else (np.shape(U)[0] if np.ndim(U) == 2 else 0)
    return EpisodeMessage(msg.agent, msg.k, np.zeros((dim, dim)), np.zeros(dim))


def validate_batch(U: np.ndarray, u: np.ndarray, L: int,
                   dp_mode: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`validate_message` over (N, d, d) and (N, d) stacks.

    Returns sanitized copies and the mask of messages that passed.
    """
    fin = np.isfinite(U).all(axis=(1, 2)) & np.isfinite(u).all(axis=1)
    with np.errstate(invalid="ignore"):
        sym = (np.abs(U - U.transpose(0, 2, 1)) <= SYM_TOL).all(axis=(1, 2))
        ok = fin & sym
        if dp_mode:
            cap = L * (1 + NORM_SLACK)
            ok &= (np.sqrt(np.sum(U * U, axis=(1, 2))) <= cap) & (np.linalg.norm(u, axis=1) <= cap)
    U2 = np.where(ok[:, None, None], U, 0.0)
    u2 = np.where(ok[:, None], u, 0.0)
    return U2, u2, ok


def apply_attack(msg: EpisodeMessage, attack: AttackSpec, env: BanditEnvironment,
                 rng: np.random.Generator) -> EpisodeMessage:
    """Corrupted image of an honest message.

    ``huge-norm`` keeps U and replaces u by -1e6 * u: scaling both by the same
    factor would leave the mean oracle's estimate nearly unchanged.
    """
    U, u = msg.U.copy(), msg.u.copy()
    d = u.shape[0]
    mode = attack.mode
    if mode == "zero-out":
        U, u = np.zeros_like(U), np.zeros_like(u)
    elif mode == "huge-norm":
        u = -HUGE * u
    elif mode == "sign-flip":
        u = -u
    elif mode == "asymmetric-garbage":
        if d < 2:
            raise ConfigError("asymmetric-garbage needs d >= 2")
        U[0, 1] += 1.0 + abs(rng.standard_normal())
    elif mode == "fake-parameter":
        if msg.xeta is None:
            raise ValueError("fake-parameter needs the episode's x * eta sum")
        u = -(U @ env.theta_star) + msg.xeta
    else:
        U = rng.standard_normal((d, d))
        u = rng.standard_normal(d)
    return EpisodeMessage(msg.agent, msg.k, U, u, msg.xeta)


@dataclass
class ControllerLedger:
    V: np.ndarray       # (N, d, d) sums of sanitized messages
    v: np.ndarray       # (N, d)
    V_hat: np.ndarray
    v_hat: np.ndarray
    trees: list

    @classmethod
    def create(cls, N: int, d: int, trees: list) -> "ControllerLedger":
        return cls(np.zeros((N, d, d)), np.zeros((N, d)),
                   np.zeros((N, d, d)), np.zeros((N, d)), trees)

    def apply(self, U: np.ndarray, u: np.ndarray) -> None:
        self.V += U
        self.v += u

    def privatize_all(self, k: int) -> None:
        if all(t.sigma == 0.0 for t in self.trees):
            self.V_hat[:] = self.V
            self.v_hat[:] = self.v
            return
        for i, tree in enumerate(self.trees):
            self.V_hat[i], self.v_hat[i] = privatize(tree, self.V[i], self.v[i], k)


def make_broadcast(agg_V: np.ndarray, agg_v: np.ndarray, lam: float, beta: float,
                   k: int) -> ModelBroadcast:
    Lam = agg_V + lam * np.eye(agg_V.shape[0])
    if min_eigenvalue(Lam) <= PD_FLOOR:
        raise NotPositiveDefinite(f"aggregate + lambda I is not positive definite at episode {k}")
    c = np.linalg.cholesky(Lam)
    ci = np.linalg.inv(c)
    theta = ci.T @ (ci @ agg_v)
    return ModelBroadcast(theta, Lam, beta, k, ci)


def controller_sync(ledger: ControllerLedger, messages: list, k: int,
                    sched: schedules.ScheduleConfig, oracle: str, *, dp_mode: bool = False,
                    eps: float = 1e-9, partition: GroupPartition | None = None,
                    ) -> tuple[ModelBroadcast, np.ndarray, np.ndarray]:
    """Fold episode-k messages into the ledger and build broadcast k + 1.

    Missing or malformed messages count as zeroed. Returns the broadcast
    and the aggregates of the privatized sums.
    """
    N, d = ledger.v.shape
    U = np.zeros((N, d, d))
    u = np.zeros((N, d))
    for i in range(N):
        m = messages[i] if i < len(messages) else None
        if m is None:
            continue
        m = validate_message(m, sched.L, dp_mode)
        if m.U.shape == (d, d) and m.u.shape == (d,):
            U[i], u[i] = m.U, m.u
    return sync_arrays(ledger, U, u, k, sched, oracle, dp_mode=dp_mode, eps=eps,
                       partition=partition)


def sync_arrays(ledger: ControllerLedger, U: np.ndarray, u: np.ndarray, k: int,
                sched: schedules.ScheduleConfig, oracle: str, *, dp_mode: bool = False,
                eps: float = 1e-9, partition: GroupPartition | None = None,
                ) -> tuple[ModelBroadcast, np.ndarray, np.ndarray]:
    """:func:`controller_sync` on stacked messages."""
    U, u, _ = validate_batch(U, u, sched.L, dp_mode)
    ledger.apply(U, u)
    ledger.privatize_all(k + 1)
    agg_V = aggregate(ledger.V_hat, oracle, eps=eps, partition=partition)
    agg_v = aggregate(ledger.v_hat, oracle, eps=eps, partition=partition)
    lam = schedules.lambda_k(sched, k + 1)
    bc = make_broadcast(agg_V, agg_v, lam, schedules.beta_k(sched, k + 1, lam), k + 1)
    return bc, agg_V, agg_v


def diagnostics(agg_V, agg_v, ledger: ControllerLedger, honest: np.ndarray) -> tuple[float, float]:
    """Spectral norm of E_k and l2 norm of e_k against the honest-agent means."""
    if not np.any(honest):
        return 0.0, 0.0
    W = ledger.V[honest].mean(axis=0)
    s = ledger.v[honest].mean(axis=0)
    return float(np.linalg.norm(agg_V - W, 2)), float(np.linalg.norm(agg_v - s))


# ------------------------------------------------------------- experiment

STREAMS = ("env", "rounds", "attack", "partition", "privacy", "sigma")


def _streams(seed: int, rep: int) -> dict:
    ss = np.random.SeedSequence(seed, spawn_key=(rep,))
    return dict(zip(STREAMS, ss.spawn(len(STREAMS))))


def resolve_sigma(cfg: "ExperimentConfig", env: BanditEnvironment, seq) -> tuple[float, str]:
    src = cfg.schedule.sigma
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        return float(src), "fixed"
    if src == "empirical":
        return empirical_sigma(env, 1000, np.random.default_rng(seq)), "empirical"
    fam = cfg.env.set_family
    return (0.0 if fam in ("shared", "fixed") else 2.0), "analytic"


def build_schedule(cfg: "ExperimentConfig", sigma: float) -> schedules.ScheduleConfig:
    s = cfg.schedule
    # without communication there is a single episode covering the horizon
    L = cfg.env.T if cfg.protocol == "local" else s.L
    return schedules.build_schedule(
        s.variant, alpha=cfg.attack.alpha, sigma=sigma, R=cfg.env.noise_R, d=cfg.env.d,
        N=cfg.env.N, T=cfg.env.T, delta=s.delta, L=L, eps=s.eps, dp=s.dp,
        mu=s.mu, nu=s.nu, agnostic=s.agnostic)


class RunFailed(RuntimeError):
    """A run stopped early; ``trace`` holds everything recorded so far."""

    def __init__(self, cause: BaseException, trace: RegretTrace):
        super().__init__(str(cause))
        self.cause = cause
        self.trace = trace


def run_experiment(cfg: "ExperimentConfig", repetition: int = 0, *,
                   record_ledger: bool = False) -> RegretTrace:
    """Simulate one repetition; deterministic in ``(cfg, repetition)``.

    Raises :class:`RunFailed` wrapping the original error, with the partial
    trace attached.
    """
    st = _streams(cfg.seed, repetition)
    env = BanditEnvironment.create(cfg.env, np.random.default_rng(st["env"]))
    sigma, source = resolve_sigma(cfg, env, st["sigma"])
    sched = build_schedule(cfg, sigma)
    T = cfg.env.T
    trace = RegretTrace.empty(T, sched.L, sched.K, cfg.env.N)
    trace.sigma, trace.sigma_source = sigma, source
    if record_ledger:
        trace.ledger_history = []
    try:
        if cfg.protocol == "local":
            _run_local(cfg, env, sched, st, trace)
        else:
            _run_federated(cfg, env, sched, st, trace)
    except (NotPositiveDefinite, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise RunFailed(exc, trace) from exc
    return trace


def _run_federated(cfg, env, sched, st, trace: RegretTrace) -> None:
    N, d, T = cfg.env.N, cfg.env.d, cfg.env.T
    L, K = sched.L, sched.K
    attack = cfg.attack
    dp_mode = cfg.schedule.dp
    eps = sched.eps if sched.eps > 0 else 1e-9
    oracle = cfg.oracle
    rounds = np.random.default_rng(st["rounds"])
    arng = np.random.default_rng(st["attack"])
    corrupted = attack.corrupted_set(N, arng)
    honest = ~corrupted
    partition = None
    if oracle == "gm-of-means":
        partition = partition_agents(N, attack.n_corrupted(N), np.random.default_rng(st["partition"]))

    node_sigma = calibrate(cfg.schedule.mu, cfg.schedule.nu, L, K) if dp_mode else 0.0
    tree_seeds = st["privacy"].spawn(N)
    ledger = ControllerLedger.create(N, d, [NoiseTree(K, d, node_sigma, s) for s in tree_seeds])
    theta_star = env.theta_star
    clip = cfg.env.reward_clip

    lam = schedules.lambda_k(sched, 1)
    bc = make_broadcast(np.zeros((d, d)), np.zeros(d), lam, schedules.beta_k(sched, 1, lam), 1)
    agg_V, agg_v = np.zeros((d, d)), np.zeros(d)
    total = 0.0
    t = 0
    for k in range(1, K + 1):
        _record_episode(trace, k, sched, bc, agg_V, agg_v, ledger, honest, theta_star, dp_mode)
        if trace.ledger_history is not None:
            trace.ledger_history.append((ledger.V.copy(), ledger.v.copy(),
                                         ledger.V_hat.copy(), ledger.v_hat.copy()))
        if attack.persistence == "per-episode":
            active = corrupted & (arng.random(N) < attack.p)
        else:
            active = corrupted.copy()
        U = np.zeros((N, d, d))
        u = np.zeros((N, d))
        xeta = np.zeros((N, d))
        for _ in range(L):
            if t == T:
                break
            t += 1
            draw = env.sample_round(t, rounds)
            arms = draw.arms
            idx = select_batch(arms, bc)
            x = arms[np.arange(N), idx]
            mean_r = x @ theta_star
            if attack.persistence == "per-step":
                hit = corrupted & (arng.random(N) < attack.p)
                mean_r = np.where(hit, -mean_r, mean_r)
                out = hit
            else:
                out = active
            r = mean_r + draw.noise
            if clip:
                r = np.clip(r, -1.0, 1.0)
            opt = np.max(arms @ theta_star, axis=1)
            inst = opt - x @ theta_star
            total += float(np.sum(inst[~out]))
            trace.counted += ~out
            trace.cumulative[t - 1] = total
            trace.episode[t - 1] = k
            trace.steps_done = t
            U += x[:, :, None] * x[:, None, :]
            u += r[:, None] * x
            xeta += draw.noise[:, None] * x
        # per-step corruption already acted on the rewards
        attacked = active if attack.persistence != "per-step" else np.zeros(N, dtype=bool)
        for i in np.flatnonzero(attacked):
            m = apply_attack(EpisodeMessage(int(i), k, U[i], u[i], xeta[i]), attack, env, arng)
            U[i], u[i] = m.U, m.u
        trace.episodes_done = k
        if k < K:
            bc, agg_V, agg_v = sync_arrays(ledger, U, u, k, sched, oracle, dp_mode=dp_mode,
                                           eps=eps, partition=partition)


def _record_episode(trace, k, sched, bc, agg_V, agg_v, ledger, honest, theta_star,
                    dp_mode) -> None:
    j = k - 1
    trace.lam[j] = schedules.lambda_k(sched, k)
    trace.beta[j] = bc.beta
    trace.norm_E[j], trace.norm_e[j] = diagnostics(agg_V, agg_v, ledger, honest)
    trace.theta_error[j] = float(np.linalg.norm(bc.theta - theta_star))
    trace.min_eig[j] = min_eigenvalue(bc.Lambda)
    if dp_mode and k > 1:
        worst = 0.0
        for tree in ledger.trees:
            H, h = tree.accumulated(k - 1)
            worst = max(worst, float(np.linalg.norm(H, 2)), float(np.linalg.norm(h)))
        trace.dp_noise[j] = worst


def _run_local(cfg, env, sched, st, trace: RegretTrace) -> None:
    """No-communication baseline: every agent runs its own LinUCB, updated each step."""
    N, d, T = cfg.env.N, cfg.env.d, cfg.env.T
    attack = cfg.attack
    if attack.mode != "fake-parameter" and attack.n_corrupted(N) > 0:
        raise ConfigError("the local protocol only supports the fake-parameter attack")
    rounds = np.random.default_rng(st["rounds"])
    arng = np.random.default_rng(st["attack"])
    corrupted = attack.corrupted_set(N, arng)
    theta_star = env.theta_star
    lam = schedules.lambda_k(sched, 1)
    beta = schedules.beta_k(sched, 1, lam)
    Lam = np.repeat(lam * np.eye(d)[None], N, axis=0)
    b = np.zeros((N, d))
    trace.lam[:] = lam
    trace.beta[:] = beta
    trace.theta_error[0] = float(np.linalg.norm(theta_star))
    trace.min_eig[0] = lam
    active = corrupted.copy()
    total = 0.0
    for t in range(1, T + 1):
        draw = env.sample_round(t, rounds)
        arms = draw.arms
        inv = np.linalg.inv(Lam)
        theta = np.einsum("nij,nj->ni", inv, b)
        quad = np.einsum("nad,nde,nae->na", arms, inv, arms)
        score = np.einsum("nad,nd->na", arms, theta) + beta * np.sqrt(np.maximum(quad, 0.0))
        top = score.max(axis=1, keepdims=True)
        idx = np.argmax(score >= top - TIE_TOL * (1.0 + np.abs(top)), axis=1)
        x = arms[np.arange(N), idx]
        mean_r = x @ theta_star
        if attack.persistence == "per-step":
            out = corrupted & (arng.random(N) < attack.p)
        elif attack.persistence == "per-episode":
            if t == 1:
                active = corrupted & (arng.random(N) < attack.p)
            out = active
        else:
            out = corrupted
        mean_r = np.where(out, -mean_r, mean_r)
        r = mean_r + draw.noise
        if cfg.env.reward_clip:
            r = np.clip(r, -1.0, 1.0)
        inst = np.max(arms @ theta_star, axis=1) - x @ theta_star
        total += float(np.sum(inst[~out]))
        trace.counted += ~out
        trace.cumulative[t - 1] = total
        trace.episode[t - 1] = 1
        trace.steps_done = t
        Lam += x[:, :, None] * x[:, None, :]
        b += r[:, None] * x
    trace.episodes_done = trace.K
