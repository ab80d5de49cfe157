"""Stopping rules for many parallel Gaussian streams.

Window-limited rules (statistic = max over windows ``k`` of a sum over
streams of a per-stream score of the window z-score):

* ``MAX``   max over streams of ``(z+)^2 / 2``
* ``XS``    ``log(1 - p0 + p0 exp((z+)^2 / 2))``
* ``LR``    ``(mu0 * S - k * mu0^2 / 2 + log p0)+`` with ``S`` the window sum
* ``S``     detectability score ``log(1 - p0 + p0 * lam * exp((z+)^2 / 4))``,
  ``lam = 2(sqrt 2 - 1)``

CUSUM rules (no window maximum; the sum over streams is taken each step):

* ``MEI``      sum of CUSUM scores ``R``
* ``MEI_EXT``  sum of ``log(1 - p0 + p0 * lambda_m * exp(R / 2))``

All rules stop the first time the statistic is ``>= b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from msdetect import _kernels
from msdetect.numerics import lambda_m as renewal_lambda_m
from msdetect.numerics import log_mixture_score
from msdetect.windows import PrefixState, WindowSet

LAMBDA_S = 2.0 * (math.sqrt(2.0) - 1.0)


class Rule(str, Enum):
    MAX = "MAX"
    XS = "XS"
    LR = "LR"
    S = "S"
    MEI = "MEI"
    MEI_EXT = "MEI_EXT"

    @property
    def windowed(self) -> bool:
        return self not in (Rule.MEI, Rule.MEI_EXT)


_NEEDS_P0 = {Rule.XS, Rule.LR, Rule.S, Rule.MEI_EXT}
_NEEDS_MU0 = {Rule.LR, Rule.MEI, Rule.MEI_EXT}
_CODES = {
    Rule.MAX: _kernels.RULE_MAX,
    Rule.XS: _kernels.RULE_XS,
    Rule.LR: _kernels.RULE_LR,
    Rule.S: _kernels.RULE_S,
    Rule.MEI: _kernels.RULE_MEI,
    Rule.MEI_EXT: _kernels.RULE_MEI_EXT,
}


class DetectorStopped(RuntimeError):
    """A stopped detector was stepped again."""


@dataclass(frozen=True)
class DetectorConfig:
    rule: Rule
    b: float = math.inf
    p0: float | None = None
    mu0: float | None = None
    lambda_m: float | None = None
    windows: WindowSet | None = None

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule(self.rule))
        rule = self.rule
        if rule in _NEEDS_P0:
            if self.p0 is None or not 0 < self.p0 <= 1:
                raise ValueError(f"{rule.value} needs p0 in (0, 1]")
        if rule in _NEEDS_MU0:
            if self.mu0 is None:
                object.__setattr__(self, "mu0", 1.0)
            if not self.mu0 > 0:
                raise ValueError(f"{rule.value} needs mu0 > 0")
        if rule == Rule.MEI_EXT:
            if self.lambda_m is None:
                object.__setattr__(self, "lambda_m", renewal_lambda_m(self.mu0))
            if not 0 < self.lambda_m <= 1:
                raise ValueError("lambda_m must lie in (0, 1]")
        if rule.windowed and self.windows is None:
            object.__setattr__(self, "windows", WindowSet.range(1, 200))

    def with_b(self, b: float) -> DetectorConfig:
        return replace(self, b=float(b))

    def label(self) -> str:
        r = self.rule
        if r == Rule.MAX:
            return "max"
        if r == Rule.MEI:
            return "Mei"
        if r == Rule.MEI_EXT:
            return f"Mei({self.p0:g})"
        return f"{r.value}({self.p0:g})"

    def params(self) -> dict:
        d = {}
        for name in ("p0", "mu0", "lambda_m"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        if self.rule.windowed:
            d["windows"] = self.windows.spec_string()
        return d

    def to_dict(self) -> dict:
        d = {"rule": self.rule.value, "b": None if math.isinf(self.b) else self.b}
        for name in ("p0", "mu0", "lambda_m"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        if self.rule.windowed:
            d["windows"] = self.windows.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DetectorConfig:
        windows = d.get("windows")
        b = d.get("b")
        return cls(
            rule=Rule(d["rule"]),
            b=math.inf if b is None else float(b),
            p0=d.get("p0"),
            mu0=d.get("mu0"),
            lambda_m=d.get("lambda_m"),
            windows=None if windows is None else WindowSet.from_obj(windows),
        )


@dataclass
class Verdict:
    stopped: bool
    t: int
    statistic: float
    argmax_window: int | None = None


# -- per-stream scores ---------------------------------------------------

def score_s(z: float, p0: float) -> float:
    zp = max(z, 0.0)
    return log_mixture_score(math.log1p(-p0) if p0 < 1 else -math.inf,
                             math.log(p0 * LAMBDA_S) + zp * zp / 4.0)


def score_xs(z: float, p0: float) -> float:
    zp = max(z, 0.0)
    if zp * zp < 60.0:
        # exact zero at z <= 0
        return math.log1p(p0 * math.expm1(zp * zp / 2.0))
    return log_mixture_score(math.log1p(-p0) if p0 < 1 else -math.inf,
                             math.log(p0) + zp * zp / 2.0)


def score_lr(s_sum: float, k: int, mu0: float, p0: float) -> float:
    return max(mu0 * s_sum - k * mu0 * mu0 / 2.0 + math.log(p0), 0.0)


def score_max(z: float) -> float:
    zp = max(z, 0.0)
    return zp * zp / 2.0


def cusum_update(r_prev: float, x: float, mu0: float) -> float:
    return max(r_prev + mu0 * x - mu0 * mu0 / 2.0, 0.0)


def score_mei_g(r: float, p0: float, lambda_m: float) -> float:
    return log_mixture_score(math.log1p(-p0) if p0 < 1 else -math.inf,
                             math.log(p0 * lambda_m) + r / 2.0)


# -- online state ---------------------------------------------------------

@dataclass
class DetectorState:
    prefix: PrefixState | None = None
    cusum: np.ndarray | None = None
    last_statistic: float = -math.inf
    stopped_at: int | None = None
    run_max: np.ndarray = field(default_factory=lambda: np.full(1, -np.inf))
    ctr: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))

    @property
    def t(self) -> int:
        if self.prefix is not None:
            return self.prefix.t
        return int(self.ctr[1])

    def nbytes(self) -> int:
        if self.prefix is not None:
            return self.prefix.ring.nbytes
        return self.cusum.nbytes


def kernel_params(config: DetectorConfig) -> tuple:
    """``(code, g0, c, scale, mu0, log_p0)`` for the compiled kernels."""
    r = config.rule
    mu0 = config.mu0 or 0.0
    g0 = c = scale = log_p0 = 0.0
    if r == Rule.XS:
        c, scale = config.p0, 0.5
    elif r == Rule.S or r == Rule.MEI_EXT:
        lam = LAMBDA_S if r == Rule.S else config.lambda_m
        base = 1.0 - config.p0 + config.p0 * lam
        g0 = math.log(base)
        c = config.p0 * lam / base
        scale = 0.25 if r == Rule.S else 0.5
    elif r == Rule.LR:
        log_p0 = math.log(config.p0)
    return _CODES[r], g0, c, scale, mu0, log_p0


def new_state(config: DetectorConfig, n_streams: int) -> DetectorState:
    if config.rule.windowed:
        return DetectorState(prefix=PrefixState(n_streams, config.windows.max_window))
    return DetectorState(cusum=np.zeros(n_streams))


class Detector:
    """One stopping rule running online over ``n_streams`` streams."""

    def __init__(self, config: DetectorConfig, n_streams: int):
        self.config = config
        self.n_streams = n_streams
        self.state = new_state(config, n_streams)
        self._params = kernel_params(config)
        if config.rule.windowed:
            self._windows = np.asarray(config.windows.windows, dtype=np.int64)

    @property
    def t(self) -> int:
        return self.state.t

    def step(self, column) -> Verdict:
        if self.state.stopped_at is not None:
            raise DetectorStopped(f"detector already stopped at t={self.state.stopped_at}")
        values = np.asarray(getattr(column, "values", column), dtype=float)
        if values.shape != (self.n_streams,):
            raise ValueError(f"column length {values.size} != n_streams {self.n_streams}")
        res = self.advance(values[None, :], self.config.b, prune=False)
        stat = float(res.stats[0])
        self.state.last_statistic = stat
        argk = int(res.argk[0]) if res.argk is not None and res.argk[0] > 0 else None
        return Verdict(res.stopped, self.t, stat, argk)

    def advance(self, block: np.ndarray, b: float, *, floor_min: float = -math.inf,
                prune: bool = True) -> AdvanceResult:
        """Process rows of ``block`` until the statistic first reaches ``b``."""
        st = self.state
        code, g0, c, scale, mu0, log_p0 = self._params
        m = block.shape[0]
        rec_t = np.empty(m, dtype=np.int64)
        rec_v = np.empty(m)
        stats = np.empty(m)
        if self.config.rule.windowed:
            argk = np.empty(m, dtype=np.int64)
            p = st.prefix
            done, stopped, n_rec = _kernels.window_advance(
                code, g0, c, scale, mu0, log_p0, p.ring, p.ctr, self._windows,
                p.inv_sqrt, block, b, floor_min, prune, st.run_max, rec_t, rec_v,
                stats, argk)
        else:
            argk = None
            done, stopped, n_rec = _kernels.cusum_advance(
                code, g0, c, mu0, st.cusum, st.ctr, block, b, floor_min,
                st.run_max, rec_t, rec_v, stats)
        if stopped:
            st.stopped_at = st.t
        return AdvanceResult(done, bool(stopped), rec_t[:n_rec], rec_v[:n_rec],
                             stats[:done], None if argk is None else argk[:done])


@dataclass
class AdvanceResult:
    steps: int
    stopped: bool
    record_t: np.ndarray
    record_v: np.ndarray
    stats: np.ndarray
    argk: np.ndarray | None


def step(config: DetectorConfig, state: DetectorState, column) -> tuple[DetectorState, Verdict]:
    """Functional form of :meth:`Detector.step`; mutates and returns ``state``."""
    n = state.prefix.n_streams if state.prefix is not None else state.cusum.size
    det = Detector.__new__(Detector)
    det.config = config
    det.n_streams = n
    det.state = state
    det._params = kernel_params(config)
    if config.rule.windowed:
        det._windows = np.asarray(config.windows.windows, dtype=np.int64)
    return state, det.step(column)
