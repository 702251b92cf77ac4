"""JSON experiment configuration: parsing, presets, dotted overrides."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .bandit_env import EnvironmentSpec
from .errors import ConfigError, FedBanditError
from .protocol import ORACLES, AttackSpec
from .schedules import VARIANTS

TOP_KEYS = ("name", "preset", "seed", "repetitions", "protocol", "oracle",
            "environment", "attack", "schedule", "output")
PROTOCOLS = ("federated", "local")


@dataclass(frozen=True)
class ScheduleSection:
    variant: str = "T1-robust"
    delta: float = 0.1
    eps: float = 1e-6
    mu: float = math.inf
    nu: float = 0.1
    L: int | None = None
    agnostic: bool = False
    sigma: object = "analytic"  # "analytic", "empirical" or a number
    dp: bool = False


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    prefix: str = "run"


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvironmentSpec
    attack: AttackSpec
    schedule: ScheduleSection
    oracle: str = "gm"
    seed: int = 0
    repetitions: int = 1
    protocol: str = "federated"
    name: str = "experiment"
    output: OutputSection = OutputSection()

    def __post_init__(self):
        s = self.schedule
        if self.oracle not in ORACLES:
            raise ConfigError(f"unknown oracle {self.oracle!r}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if s.variant not in VARIANTS:
            raise ConfigError(f"unknown schedule variant {s.variant!r}")
        if s.variant == "T3-mom-dp":
            if self.oracle == "gm":
                raise ConfigError("T3-mom-dp runs with the gm-of-means (or mean) oracle")
            if self.attack.alpha > 0.25:
                raise ConfigError(f"T3-mom-dp needs alpha <= 1/4, got {self.attack.alpha}")
        if self.oracle == "gm-of-means" and 3 * self.attack.n_corrupted(self.env.N) > self.env.N:
            raise ConfigError("gm-of-means needs 3 * N1 <= N")
        if not 0 < s.delta < 1:
            raise ConfigError("schedule.delta must lie in (0, 1)")
        if s.eps < 0:
            raise ConfigError("schedule.eps must be >= 0")
        if s.L is not None and s.L < 1:
            raise ConfigError("schedule.L must be >= 1")
        if s.dp:
            if math.isinf(s.mu) or s.mu <= 0 or not 0 < s.nu < 1:
                raise ConfigError("dp needs finite mu > 0 and nu in (0, 1)")
            if not self.env.reward_clip:
                raise ConfigError("dp needs environment.reward_clip = true")
        if self.env.reward_clip and self.env.noise_bound >= 1.0:
            raise ConfigError("reward_clip needs the noise bound below 1")
        if isinstance(s.sigma, str):
            if s.sigma not in ("analytic", "empirical"):
                raise ConfigError("schedule.sigma must be 'analytic', 'empirical' or a number")
        elif not isinstance(s.sigma, (int, float)) or isinstance(s.sigma, bool) or s.sigma < 0:
            raise ConfigError("schedule.sigma must be a nonnegative number")
        if self.attack.mode == "asymmetric-garbage" and self.env.d < 2 and self.attack.alpha > 0:
            raise ConfigError("asymmetric-garbage needs d >= 2")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def _section(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where!r}: {', '.join(unknown)}")
    kw = dict(data)
    for key in ("theta_star", "drift_schedule", "arm_pool"):
        if key in kw and isinstance(kw[key], list):
            kw[key] = tuple(tuple(r) if isinstance(r, list) else r for r in kw[key])
    if "mu" in kw and kw["mu"] is None:
        kw["mu"] = math.inf
    try:
        return cls(**kw)
    except FedBanditError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r} section: {exc}") from exc


def list_presets() -> list[str]:
    folder = resources.files("fedbandit") / "presets"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("fedbandit") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return json.loads(path.read_text())


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(doc: dict) -> dict:
    """Expand a ``preset`` reference; explicit keys win over the preset's."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    name = doc.get("preset")
    if name is None:
        return copy.deepcopy(doc)
    base = load_preset(name)
    return _merge(base, doc)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` assignments; values are parsed as JSON when possible."""
    out = copy.deepcopy(doc)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r} descends into a non-object")
            node = nxt
        node[parts[-1]] = _parse_value(raw)
    return out


def from_dict(doc: dict) -> ExperimentConfig:
    doc = resolve(doc)
    unknown = sorted(set(doc) - set(TOP_KEYS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "environment" not in doc:
        raise ConfigError("missing 'environment' section")
    env = _section(EnvironmentSpec, doc["environment"], "environment")
    attack = _section(AttackSpec, doc.get("attack"), "attack")
    sched = _section(ScheduleSection, doc.get("schedule"), "schedule")
    output = _section(OutputSection, doc.get("output"), "output")
    top = {k: doc[k] for k in ("oracle", "seed", "repetitions", "protocol", "name") if k in doc}
    if isinstance(top.get("oracle"), dict):
        raise ConfigError("'oracle' must be one of " + ", ".join(ORACLES))
    for k in ("seed", "repetitions"):
        if k in top and (not isinstance(top[k], int) or isinstance(top[k], bool)):
            raise ConfigError(f"{k!r} must be an integer")
    return ExperimentConfig(env=env, attack=attack, schedule=sched, output=output, **top)


def load(path: str | Path, overrides: list[str] = ()) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(apply_overrides(resolve(doc), list(overrides)))
