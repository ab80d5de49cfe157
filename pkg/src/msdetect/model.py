"""Simulated multi-stream Gaussian worlds.

Streams are indexed ``1..N`` in every public structure (membership sets,
JSON documents), matching the usual ``n = 1..N`` notation; arrays are
0-based internally.  Observations are unit-variance normals with mean
``mu`` on affected streams from the change time on, or from time ``n`` on
stream ``n`` in the staggered scenario.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MEMBERSHIP_KINDS = ("bernoulli", "fixed_count", "explicit", "staggered")

_TRIAL_BITS = 32


def derive_trial_seed(master: int, trial: int) -> int:
    """Seed for trial ``trial`` of a run with master seed ``master``.

    Injective in ``trial`` over ``[0, 2**32)``; the integer is fed through
    ``SeedSequence`` hashing by PCG64, which decorrelates neighbouring seeds.
    """
    if master < 0 or not 0 <= trial < 1 << _TRIAL_BITS:
        raise ValueError("master must be >= 0 and trial in [0, 2**32)")
    return (master << _TRIAL_BITS) | trial


def trial_rng(master: int, trial: int) -> np.random.Generator:
    # PCG64 + ziggurat normals: fixed algorithms, identical on every platform
    return np.random.Generator(np.random.PCG64(derive_trial_seed(master, trial)))


@dataclass(frozen=True)
class Membership:
    kind: str
    p: float | None = None
    m: int | None = None
    indices: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in MEMBERSHIP_KINDS:
            raise ValueError(f"unknown membership kind {self.kind!r}")
        if self.kind == "bernoulli" and (self.p is None or not 0 <= self.p <= 1):
            raise ValueError("bernoulli membership needs p in [0, 1]")
        if self.kind == "fixed_count" and (self.m is None or self.m < 0):
            raise ValueError("fixed_count membership needs m >= 0")
        if self.kind == "explicit":
            if self.indices is None or len(set(self.indices)) != len(self.indices):
                raise ValueError("explicit membership needs unique indices")

    @classmethod
    def bernoulli(cls, p: float) -> Membership:
        return cls("bernoulli", p=p)

    @classmethod
    def fixed_count(cls, m: int) -> Membership:
        return cls("fixed_count", m=m)

    @classmethod
    def explicit(cls, indices) -> Membership:
        return cls("explicit", indices=tuple(int(i) for i in indices))

    @classmethod
    def staggered(cls) -> Membership:
        return cls("staggered")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "bernoulli":
            d["p"] = self.p
        elif self.kind == "fixed_count":
            d["m"] = self.m
        elif self.kind == "explicit":
            d["indices"] = list(self.indices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Membership:
        kind = d["kind"]
        if kind == "bernoulli":
            return cls.bernoulli(float(d["p"]))
        if kind == "fixed_count":
            return cls.fixed_count(int(d["m"]))
        if kind == "explicit":
            return cls.explicit(d["indices"])
        return cls(kind)

    def label(self) -> str:
        if self.kind == "bernoulli":
            return f"bernoulli(p={self.p:g})"
        if self.kind == "fixed_count":
            return f"fixed_count(m={self.m})"
        if self.kind == "explicit":
            return f"explicit({len(self.indices)})"
        return "staggered"


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative description of one simulated world.

    ``nu`` is the common change time (``math.inf`` for no change); it is
    ignored in staggered mode, where stream ``n`` shifts at time ``n``.
    """

    n_streams: int
    mu: float = 0.0
    nu: float = math.inf
    membership: Membership = field(default_factory=lambda: Membership.fixed_count(0))
    horizon: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.n_streams < 1:
            raise ValueError("n_streams must be >= 1")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if not (self.nu == math.inf or (self.nu >= 1 and float(self.nu).is_integer())):
            raise ValueError("nu must be an integer >= 1 or inf")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        ms = self.membership
        if ms.kind == "fixed_count" and ms.m > self.n_streams:
            raise ValueError("fixed_count m exceeds n_streams")
        if ms.kind == "explicit" and any(not 1 <= i <= self.n_streams for i in ms.indices):
            raise ValueError("explicit indices must lie in [1, n_streams]")

    @property
    def staggered(self) -> bool:
        return self.membership.kind == "staggered"

    @property
    def is_null(self) -> bool:
        return self.mu == 0 or (self.nu == math.inf and not self.staggered)

    def to_dict(self) -> dict:
        return {
            "n_streams": self.n_streams,
            "mu": self.mu,
            "nu": None if self.nu == math.inf else int(self.nu),
            "membership": self.membership.to_dict(),
            "horizon": self.horizon,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioSpec:
        nu = d.get("nu")
        if nu is None or nu in ("inf", "Infinity"):
            nu = math.inf
        return cls(
            n_streams=int(d["n_streams"]),
            mu=float(d.get("mu", 0.0)),
            nu=float(nu) if nu != math.inf else math.inf,
            membership=Membership.from_dict(d.get("membership", {"kind": "fixed_count", "m": 0})),
            horizon=int(d.get("horizon", 100_000)),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> ScenarioSpec:
        return cls.from_dict(json.loads(text))


@dataclass
class StreamColumn:
    t: int
    values: np.ndarray


def realize_membership(spec: ScenarioSpec, seed: int) -> frozenset[int]:
    """Draw the affected set (1-based indices) for one realization."""
    ms = spec.membership
    n = spec.n_streams
    if ms.kind == "staggered":
        return frozenset(range(1, n + 1))
    if ms.kind == "explicit":
        return frozenset(ms.indices)
    rng = np.random.Generator(np.random.PCG64(seed))
    if ms.kind == "bernoulli":
        hits = np.flatnonzero(rng.random(n) < ms.p)
    else:
        hits = rng.choice(n, size=ms.m, replace=False)
    return frozenset(int(i) + 1 for i in hits)


def mean_block(spec: ScenarioSpec, members: frozenset[int], t0: int, m: int) -> np.ndarray | None:
    """Mean matrix for steps ``t0+1 .. t0+m`` (None when all-zero)."""
    if spec.mu == 0:
        return None
    n = spec.n_streams
    times = np.arange(t0 + 1, t0 + m + 1)[:, None]
    if spec.staggered:
        starts = np.arange(1, n + 1)[None, :]
        return spec.mu * (times >= starts)
    if spec.nu == math.inf or not members or t0 + m < spec.nu:
        return None
    mask = np.zeros(n, dtype=bool)
    mask[[i - 1 for i in members]] = True
    return spec.mu * ((times >= spec.nu) & mask[None, :])


def next_column(spec: ScenarioSpec, members: frozenset[int], t: int,
                rng: np.random.Generator) -> StreamColumn:
    if t < 1:
        raise ValueError("t must be >= 1")
    values = rng.standard_normal(spec.n_streams)
    means = mean_block(spec, members, t - 1, 1)
    if means is not None:
        values += means[0]
    return StreamColumn(t, values)


class StreamSource:
    """Sequential generator of observation blocks for one realization."""

    def __init__(self, spec: ScenarioSpec, members: frozenset[int],
                 rng: np.random.Generator):
        self.spec = spec
        self.members = members
        self.rng = rng
        self.t = 0

    def block(self, m: int) -> np.ndarray:
        x = self.rng.standard_normal((m, self.spec.n_streams))
        means = mean_block(self.spec, self.members, self.t, m)
        if means is not None:
            x += means
        self.t += m
        return x

    def next_column(self) -> StreamColumn:
        x = self.block(1)[0]
        return StreamColumn(self.t, x)
