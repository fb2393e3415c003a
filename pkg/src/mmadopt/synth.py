"""Seeded synthetic population with planted adoption effects.

Each subscriber carries four latent traits. Three map onto one feature
category each, which is what makes planted-coefficient runs checkable:

* ``activity_rate``  -> Usage    (outgoing events per day)
* ``mobility_range`` -> Mobility (size of the site pool the subscriber's
  traffic is placed in; both ends of every outgoing event are drawn from it)
* ``network_size``   -> Network  (size of the fixed contact pool)
* ``weekday_bias``   -> Usage    (share of the weekly rate falling on weekdays)

Adoption and P2P usage are Bernoulli draws from logistic models over the
population-standardized traits, with optional additive per-stratum offsets.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .data import (
    Channel,
    DistrictKind,
    DistrictWealth,
    EventRecord,
    Gender,
    MoneyKind,
    MoneyRecord,
    Subscriber,
    write_events,
    write_money,
    write_roster,
)

TRAITS = ("activity_rate", "mobility_range", "network_size", "weekday_bias")


class ConfigError(ValueError):
    pass


@dataclass
class TraitDistribution:
    """One of ``uniform`` (low, high), ``uniform_int`` (low, high, inclusive),
    ``lognormal`` (mu, sigma), ``poisson`` (lam, offset) or ``beta`` (a, b)."""

    kind: str
    params: dict[str, float]

    def sample(self, rng: np.random.Generator) -> float:
        p = self.params
        if self.kind == "uniform":
            return float(rng.uniform(p["low"], p["high"]))
        if self.kind == "uniform_int":
            return float(rng.integers(int(p["low"]), int(p["high"]) + 1))
        if self.kind == "lognormal":
            return float(rng.lognormal(p["mu"], p["sigma"]))
        if self.kind == "poisson":
            return float(p.get("offset", 1) + rng.poisson(p["lam"]))
        if self.kind == "beta":
            return float(rng.beta(p["a"], p["b"]))
        raise ConfigError(f"unknown trait distribution {self.kind!r}")


@dataclass
class LogisticModel:
    intercept: float = 0.0
    coefficients: dict[str, float] = field(default_factory=dict)

    def logit(self, z: dict[str, float]) -> float:
        return self.intercept + sum(c * z[t] for t, c in self.coefficients.items())


@dataclass
class PopulationConfig:
    n_subscribers: int = 1000
    seed: int = 0
    gender_proportions: dict[str, float] = field(default_factory=lambda: {"Male": 0.5, "Female": 0.5})
    district_kind_proportions: dict[str, float] = field(default_factory=lambda: {"Urban": 0.5, "Rural": 0.5})
    district_wealth_proportions: dict[str, float] = field(default_factory=lambda: {"Rich": 0.5, "Poor": 0.5})
    activity_rate: TraitDistribution = field(
        default_factory=lambda: TraitDistribution("uniform", {"low": 1.5, "high": 5.0}))
    mobility_range: TraitDistribution = field(
        default_factory=lambda: TraitDistribution("uniform_int", {"low": 1, "high": 8}))
    network_size: TraitDistribution = field(
        default_factory=lambda: TraitDistribution("uniform_int", {"low": 2, "high": 12}))
    weekday_bias: TraitDistribution = field(
        default_factory=lambda: TraitDistribution("beta", {"a": 10.0, "b": 4.0}))
    adoption: LogisticModel = field(default_factory=LogisticModel)
    p2p: LogisticModel = field(default_factory=LogisticModel)
    # stratum label -> {"adoption": LogisticModel, "p2p": LogisticModel}, added on top of the base models
    stratum_offsets: dict[str, dict[str, LogisticModel]] = field(default_factory=dict)
    call_share: float = 0.6
    duration_mu: float = 4.0
    duration_sigma: float = 0.8
    window_days: int = 28
    start_date: str = "2016-01-04"
    n_sites: int = 300

    def validate(self) -> None:
        if self.n_subscribers < 2:
            raise ConfigError("n_subscribers must be >= 2")
        if self.window_days < 1:
            raise ConfigError("window_days must be >= 1")
        if not 0.0 <= self.call_share <= 1.0:
            raise ConfigError("call_share must be in [0, 1]")
        if self.duration_sigma <= 0:
            raise ConfigError("duration_sigma must be positive")
        for name, props, enum in (
            ("gender_proportions", self.gender_proportions, Gender),
            ("district_kind_proportions", self.district_kind_proportions, DistrictKind),
            ("district_wealth_proportions", self.district_wealth_proportions, DistrictWealth),
        ):
            if any(v < 0 for v in props.values()):
                raise ConfigError(f"{name} has a negative proportion")
            if abs(sum(props.values()) - 1.0) > 1e-9:
                raise ConfigError(f"{name} must sum to 1")
            labels = {e.value for e in enum}
            if not set(props) <= labels:
                raise ConfigError(f"{name} has unknown labels {sorted(set(props) - labels)}")
        for model in (self.adoption, self.p2p, *[m for o in self.stratum_offsets.values() for m in o.values()]):
            unknown = set(model.coefficients) - set(TRAITS)
            if unknown:
                raise ConfigError(f"unknown trait(s) in coefficients: {sorted(unknown)}")
        for offsets in self.stratum_offsets.values():
            if not set(offsets) <= {"adoption", "p2p"}:
                raise ConfigError("stratum offsets take only 'adoption' and 'p2p' keys")
        try:
            date.fromisoformat(self.start_date)
        except ValueError:
            raise ConfigError(f"start_date {self.start_date!r} is not YYYY-MM-DD") from None
        probe = np.random.default_rng(0)
        for t in TRAITS:
            dist = getattr(self, t)
            if any(dist.sample(probe) <= 0 for _ in range(8)):
                raise ConfigError(f"trait {t} must be positive")

    # ---- JSON

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "PopulationConfig":
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        for t in TRAITS:
            if t in raw and isinstance(raw[t], dict):
                raw[t] = TraitDistribution(**raw[t])
        for key in ("adoption", "p2p"):
            if key in raw and isinstance(raw[key], dict):
                raw[key] = LogisticModel(**raw[key])
        if "stratum_offsets" in raw:
            raw["stratum_offsets"] = {
                s: {k: LogisticModel(**v) for k, v in o.items()} for s, o in raw["stratum_offsets"].items()
            }
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "PopulationConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Population:
    roster: list[Subscriber]
    events: list[EventRecord]
    money: list[MoneyRecord]
    traits: dict[str, np.ndarray]
    adopted: np.ndarray
    p2p: np.ndarray

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"cdr": out / "cdr.csv", "mmtr": out / "mmtr.csv", "roster": out / "roster.csv"}
        write_events(paths["cdr"], self.events)
        write_money(paths["mmtr"], self.money)
        write_roster(paths["roster"], self.roster)
        return paths


def _draw_label(rng, props: dict[str, float], enum):
    labels = [e.value for e in enum if props.get(e.value, 0.0) > 0]
    if not labels:
        return enum("Unknown")
    p = np.array([props[v] for v in labels])
    return enum(labels[int(rng.choice(len(labels), p=p / p.sum()))])


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


def _standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return np.zeros_like(x) if sd == 0 else (x - x.mean()) / sd


def generate(config: PopulationConfig) -> Population:
    config.validate()
    n = config.n_subscribers
    width = max(5, len(str(n)))
    ids = [f"S{i:0{width}d}" for i in range(n)]
    site_width = len(str(config.n_sites - 1))
    start = datetime.combine(date.fromisoformat(config.start_date), datetime.min.time(), tzinfo=timezone.utc)

    # demographics, traits and pools come from per-subscriber streams
    roster, pools, sites = [], [], []
    traits = {t: np.zeros(n) for t in TRAITS}
    for i in range(n):
        rng = np.random.default_rng([config.seed, 1, i])
        roster.append(Subscriber(
            ids[i],
            _draw_label(rng, config.gender_proportions, Gender),
            _draw_label(rng, config.district_kind_proportions, DistrictKind),
            _draw_label(rng, config.district_wealth_proportions, DistrictWealth),
        ))
        for t in TRAITS:
            traits[t][i] = getattr(config, t).sample(rng)
        k = int(min(traits["network_size"][i], n - 1))
        others = rng.choice(n - 1, size=k, replace=False)
        pools.append(np.where(others >= i, others + 1, others))
        m = int(min(traits["mobility_range"][i], config.n_sites))
        sites.append(rng.choice(config.n_sites, size=m, replace=False))

    events: list[EventRecord] = []
    day_dates = [start + timedelta(days=d) for d in range(config.window_days)]
    for i in range(n):
        rng = np.random.default_rng([config.seed, 2, i])
        rate = traits["activity_rate"][i]
        bias = traits["weekday_bias"][i]
        for d, day_start in enumerate(day_dates):
            weekend = day_start.weekday() >= 5
            lam = rate * ((1 - bias) * 7 / 2 if weekend else bias * 7 / 5)
            count = int(rng.poisson(lam))
            if count == 0:
                continue
            secs = np.sort(rng.integers(0, 86400, size=count))
            contacts = rng.choice(pools[i], size=count)
            is_call = rng.random(count) < config.call_share
            durs = np.maximum(1, np.rint(rng.lognormal(config.duration_mu, config.duration_sigma, count)))
            cloc = rng.choice(sites[i], size=count)
            rloc = rng.choice(sites[i], size=count)
            for s, c, call, du, cl, rl in zip(secs, contacts, is_call, durs, cloc, rloc):
                events.append(EventRecord(
                    ids[i], ids[int(c)], day_start + timedelta(seconds=int(s)),
                    Channel.CALL if call else Channel.SMS,
                    int(du) if call else 0,
                    f"L{int(cl):0{site_width}d}", f"L{int(rl):0{site_width}d}",
                ))

    z = {t: _standardize(traits[t]) for t in TRAITS}
    adopted = np.zeros(n, bool)
    p2p = np.zeros(n, bool)
    money: list[MoneyRecord] = []
    window_s = config.window_days * 86400
    for i, sub in enumerate(roster):
        rng = np.random.default_rng([config.seed, 3, i])
        zi = {t: z[t][i] for t in TRAITS}
        strata = [sub.gender.value, sub.district_kind.value, sub.district_wealth.value]
        a_logit = config.adoption.logit(zi)
        p_logit = config.p2p.logit(zi)
        for s in strata:
            off = config.stratum_offsets.get(s, {})
            if "adoption" in off:
                a_logit += off["adoption"].logit(zi)
            if "p2p" in off:
                p_logit += off["p2p"].logit(zi)
        adopted[i] = rng.random() < _sigmoid(a_logit)
        if not adopted[i]:
            continue
        p2p[i] = rng.random() < _sigmoid(p_logit)
        reg_t = int(rng.integers(0, window_s))
        money.append(MoneyRecord(ids[i], start + timedelta(seconds=reg_t), MoneyKind.REGISTRATION, None, 0.0))
        if p2p[i]:
            for _ in range(1 + int(rng.poisson(2.0))):
                t = int(rng.integers(reg_t, window_s))
                kind = MoneyKind.P2P_SEND if rng.random() < 0.5 else MoneyKind.P2P_RECEIVE
                cp = ids[int(rng.choice(pools[i]))]
                amount = round(float(rng.lognormal(6.0, 1.0)), 2)
                money.append(MoneyRecord(ids[i], start + timedelta(seconds=t), kind, cp, amount))
    money.sort(key=lambda r: (r.subscriber_id, r.timestamp, r.kind.value))
    return Population(roster, events, money, traits, adopted, p2p)


def planted_config(trait: str | None, coefficient: float = 3.0, n_subscribers: int = 2000,
                   seed: int = 0) -> PopulationConfig:
    """Adoption driven by one standardized trait (``None``: no signal at all)."""
    coefs = {} if trait is None else {trait: coefficient}
    cfg = PopulationConfig(n_subscribers=n_subscribers, seed=seed, adoption=LogisticModel(0.0, coefs))
    cfg.validate()
    return cfg
