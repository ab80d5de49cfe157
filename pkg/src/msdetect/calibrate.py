"""Monte Carlo ARL estimation, threshold calibration and delay estimation.

Every trial owns a generator seeded by ``derive_trial_seed(seed, trial)``,
so results depend only on the master seed, never on the thread count or on
how a run is split into blocks.

Threshold search uses common random numbers.  Each search trial keeps the
sequence of *records* (new running maxima of its statistic) together with
the detector state, so the stopping time at any threshold ``b`` is read
off the records as the first record ``>= b``.  A probe at a higher
threshold simply continues the paused trials.  This makes ``b -> ARL(b)``
a deterministic, monotone step function for the search batch.
"""

from __future__ import annotations

import bisect
import functools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from msdetect.detectors import Detector, DetectorConfig, Rule
from msdetect.model import ScenarioSpec, StreamSource, realize_membership, trial_rng
from msdetect.numerics import estimate_xi
from msdetect.theory import mei_raw_threshold_bound, mei_threshold_bound, ts_threshold_bound

log = logging.getLogger(__name__)

NU_EQUALS_1 = "nu_equals_1"
STAGGERED = "staggered_expected_stop"

_SEARCH_BLOCK = 256
_MAX_BLOCK = 4096


class CalibrationError(RuntimeError):
    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class ArlEstimate:
    arl_hat: float
    arl_se: float
    trials: int
    censored: int
    cap: int
    stop_times: np.ndarray = field(repr=False)


@dataclass
class CalibrationResult:
    b: float
    arl_hat: float
    arl_se: float
    trials: int
    censored: int
    search_trace: list[tuple[float, float]]
    search_arl: float = math.nan
    cap: int = 0
    seed: int = 0
    validated: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["search_trace"] = [list(p) for p in self.search_trace]
        return d


@dataclass
class DelayResult:
    mean: float
    se: float
    trials: int
    convention: str
    nu: float = 1.0
    false_alarms: int = 0
    censored: int = 0
    stop_times: np.ndarray | None = field(default=None, repr=False, compare=False)


def default_cap(gamma: float) -> int:
    return int(max(20 * gamma, 100_000))


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _run_to_threshold(config: DetectorConfig, spec: ScenarioSpec, seed: int, trial: int,
                      cap: int) -> tuple[int, bool]:
    """Stopping time of one trial (capped) and whether it was censored."""
    rng = trial_rng(seed, trial)
    members = frozenset()
    if not spec.is_null:
        members = realize_membership(spec, int(rng.integers(1 << 62)))
    src = StreamSource(spec, members, rng)
    det = Detector(config, spec.n_streams)
    b = config.b
    block = 16
    while src.t < cap:
        m = min(block, cap - src.t)
        t0 = src.t
        res = det.advance(src.block(m), b, floor_min=b)
        if res.stopped:
            return t0 + res.steps, False
        block = min(2 * block, _MAX_BLOCK)
    return cap, True


def estimate_arl(config: DetectorConfig, n_streams: int, trials: int, cap: int | None = None,
                 seed: int = 0, *, threads: int = 1, trial_offset: int = 0) -> ArlEstimate:
    """Average run length of ``config`` (at ``config.b``) under no change.

    Runs reaching ``cap`` are counted at ``cap`` (biasing the estimate down)
    and reported in ``censored``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if cap is None:
        cap = 100_000
    spec = ScenarioSpec(n_streams)
    out = _map(lambda i: _run_to_threshold(config, spec, seed, trial_offset + i, cap),
               range(trials), threads)
    times = np.array([t for t, _ in out], dtype=float)
    censored = sum(c for _, c in out)
    if censored:
        log.warning("%d of %d ARL runs censored at cap=%d", censored, trials, cap)
    mean, se = _mean_se(times)
    return ArlEstimate(mean, se, trials, censored, cap, times)


class _RecordPath:
    """One null trial that can be paused and resumed at increasing levels."""

    def __init__(self, config: DetectorConfig, n_streams: int, seed: int, trial: int,
                 cap: int, floor_min: float):
        self.config = config
        self.n_streams = n_streams
        self.seed = seed
        self.trial = trial
        self.cap = cap
        self.floor_min = floor_min
        self.rec_t: list[int] = []
        self.rec_v: list[float] = []
        self.t = 0
        self._det = None

    @property
    def top(self) -> float:
        return self.rec_v[-1] if self.rec_v else -math.inf

    @property
    def exhausted(self) -> bool:
        return self.t >= self.cap

    def release(self) -> None:
        self._det = None

    def _restart(self) -> None:
        self._det = Detector(self.config, self.n_streams)
        self._rng = trial_rng(self.seed, self.trial)
        self._pending = np.empty((0, self.n_streams))
        self._sim_t = 0
        self._rt: list[int] = []
        self._rv: list[float] = []

    def _step(self, level: float, until_t: int) -> None:
        """Simulate until a record reaches ``level`` or time ``until_t``."""
        det = self._det
        while self._sim_t < until_t:
            top = self._rv[-1] if self._rv else -math.inf
            if top >= level:
                return
            if self._pending.shape[0] == 0:
                self._pending = self._rng.standard_normal((_SEARCH_BLOCK, self.n_streams))
            x = self._pending[: until_t - self._sim_t]
            res = det.advance(x, level, floor_min=self.floor_min)
            self._pending = self._pending[res.steps:]
            self._sim_t += res.steps
            self._rt.extend(res.record_t.tolist())
            self._rv.extend(res.record_v.tolist())
            det.state.stopped_at = None

    def advance(self, level: float = math.inf, until_t: int | None = None) -> None:
        until_t = self.cap if until_t is None else min(until_t, self.cap)
        if self.top >= level or self.t >= until_t:
            return
        if self._det is None:
            # replay from scratch; identical records by construction
            self._restart()
        self._step(level, until_t)
        self.t = self._sim_t
        self.rec_t = self._rt
        self.rec_v = self._rv

    def stop_time(self, b: float) -> tuple[int, bool]:
        i = bisect.bisect_left(self.rec_v, b)
        if i < len(self.rec_v):
            return self.rec_t[i], False
        if self.exhausted:
            return self.cap, True
        raise RuntimeError("path not advanced far enough")

    def max_by(self, t: int) -> float:
        i = bisect.bisect_right(self.rec_t, t)
        return self.rec_v[i - 1] if i else -math.inf


@functools.lru_cache(maxsize=16)
def _xi_for_bounds(mu0: float) -> float:
    xi, se = estimate_xi(mu0, trials=50, seed=12345)
    return xi + 4.0 * se


def threshold_ceiling(config: DetectorConfig, n_streams: int, gamma: float) -> float | None:
    """Theoretical threshold guaranteeing ARL >= gamma, where one is known."""
    if config.rule == Rule.S:
        return ts_threshold_bound(gamma)
    if config.rule == Rule.MEI_EXT:
        xi = _xi_for_bounds(config.mu0)
        return mei_threshold_bound(n_streams, gamma, config.p0, config.mu0, xi, config.lambda_m)
    if config.rule == Rule.MEI:
        return mei_raw_threshold_bound(n_streams, gamma, _xi_for_bounds(config.mu0))
    return None


def calibrate_threshold(
    config: DetectorConfig,
    n_streams: int,
    gamma: float,
    trials: int = 500,
    rel_tol: float = 0.05,
    seed: int = 0,
    *,
    threads: int = 1,
    cap: int | None = None,
    validate: bool = True,
    pilot: int = 32,
    max_probes: int = 60,
    memory_budget: float = 2e9,
) -> CalibrationResult:
    """Find ``b`` with ARL(b) close to ``gamma`` by stochastic root finding.

    The search batch (trials ``0..trials-1``) is shared by every probe.  With
    ``validate`` the chosen ``b`` is re-estimated on the independent trials
    ``trials..2*trials-1``, and that estimate is reported as ``arl_hat``.
    """
    if gamma < 10:
        raise ValueError("gamma must be >= 10")
    if not 0.01 < rel_tol < 0.5:
        raise ValueError("rel_tol must lie in (0.01, 0.5)")
    if trials < 2:
        raise ValueError("trials must be >= 2")
    cap = default_cap(gamma) if cap is None else cap
    ceiling = threshold_ceiling(config, n_streams, gamma)
    per_path = 8 * n_streams * ((config.windows.max_window + 1) if config.rule.windowed else 1)
    per_path += 8 * n_streams * _SEARCH_BLOCK
    replay = per_path * trials > memory_budget

    # pilot on the first trials locates the scale of the statistic
    n_pilot = min(pilot, trials)
    pilot_paths = [_RecordPath(config, n_streams, seed, i, cap, -math.inf) for i in range(n_pilot)]
    horizon = int(min(gamma, cap))
    _map(lambda p: p.advance(until_t=horizon), pilot_paths, threads)
    early = float(np.median([p.max_by(max(1, horizon // 10)) for p in pilot_paths]))
    guess = float(np.median([p.max_by(int(gamma * math.log(2))) for p in pilot_paths]))

    b_min = early
    for _attempt in range(4):
        paths = pilot_paths + [
            _RecordPath(config, n_streams, seed, i, cap, b_min) for i in range(n_pilot, trials)
        ]
        trace: list[tuple[float, float]] = []

        def arl_at(b: float) -> tuple[float, float, int]:
            def run(p):
                p.advance(level=b)
                if replay:
                    p.release()
                return p.stop_time(b)
            out = _map(run, paths, threads)
            times = np.array([t for t, _ in out], dtype=float)
            mean, se = _mean_se(times)
            return mean, se, sum(c for _, c in out)

        a_lo = arl_at(b_min)[0]
        trace.append((b_min, a_lo))
        if a_lo < gamma:
            break
        # the pilot overshot; restart lower with fresh (non-pilot) records
        spread = max(guess - early, 1.0)
        b_min -= 2.0 * spread
        pilot_paths = [_RecordPath(config, n_streams, seed, i, cap, -math.inf)
                       for i in range(n_pilot)]
        _map(lambda p: p.advance(until_t=horizon), pilot_paths, threads)
    else:
        raise CalibrationError("could not find a threshold with ARL below target", trace)

    lo, hi = b_min, None
    a_hi = math.nan
    prev = (b_min, a_lo)
    b = max(guess, b_min + 0.01)
    if ceiling is not None:
        b = min(b, ceiling)
    best = None
    for _probe in range(max_probes):
        a, se, censored = arl_at(b)
        trace.append((b, a))
        log.debug("probe b=%.5g arl=%.5g (se %.3g)", b, a, se)
        if best is None or abs(math.log(a / gamma)) < abs(math.log(best[1] / gamma)):
            best = (b, a, se, censored)
        if abs(a - gamma) / gamma <= rel_tol:
            break
        if a < gamma:
            prev = (lo, a_lo)
            lo, a_lo = b, a
        else:
            hi, a_hi = b, a
        if hi is not None and hi - lo < 0.01:
            break
        if hi is None:
            if ceiling is not None and b >= ceiling:
                raise CalibrationError(
                    f"ARL {a:.4g} at the theoretical bound b={ceiling:.4g} is below {gamma}", trace)
            slope = math.log(a_lo / prev[1]) / (lo - prev[0]) if lo > prev[0] else 0.0
            step = (math.log(gamma) - math.log(a_lo)) / slope if slope > 0 else 1.0
            step = min(max(step, 0.05), max(1.0, 2.0 * (lo - b_min)))
            b = lo + step
            if ceiling is not None:
                b = min(b, ceiling)
        else:
            w = hi - lo
            frac = (math.log(gamma) - math.log(a_lo)) / (math.log(a_hi) - math.log(a_lo))
            b = lo + min(max(frac, 0.1), 0.9) * w
    else:
        log.warning("threshold search hit max_probes=%d", max_probes)

    b, a, se, censored = best
    result = CalibrationResult(b, a, se, trials, censored, trace, search_arl=a, cap=cap, seed=seed)
    if validate:
        check = estimate_arl(config.with_b(b), n_streams, trials, cap, seed,
                             threads=threads, trial_offset=trials)
        result.arl_hat = check.arl_hat
        result.arl_se = check.arl_se
        result.censored = check.censored
        result.validated = True
    return result


def estimate_delay(config: DetectorConfig, scenario: ScenarioSpec, trials: int, seed: int = 0,
                   *, threads: int = 1) -> DelayResult:
    """Mean detection delay ``T - nu + 1`` over trials with ``T >= nu``.

    In staggered mode the delay is the mean stopping time itself.  Trials
    that alarm before ``nu`` are dropped and counted as false alarms.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not math.isfinite(config.b):
        raise ValueError("config needs a finite threshold b")
    staggered = scenario.staggered
    nu = 1 if staggered else scenario.nu
    if nu == math.inf:
        raise ValueError("delay needs a finite change time nu (or staggered mode)")
    cap = scenario.horizon
    out = _map(lambda i: _run_to_threshold(config, scenario, seed, i, cap), range(trials), threads)
    times = np.array([t for t, _ in out], dtype=float)
    censored = sum(c for _, c in out)
    if staggered:
        kept = times
    else:
        kept = times[times >= nu] - nu + 1
    false_alarms = trials - kept.size
    if kept.size == 0:
        raise RuntimeError("every trial raised a false alarm before the change")
    mean, se = _mean_se(kept)
    return DelayResult(mean, se, int(kept.size), STAGGERED if staggered else NU_EQUALS_1,
                       float(nu), false_alarms, censored, times)


@dataclass
class BenchRow:
    rule: str
    params: dict
    b: float
    n_streams: int
    mu: float
    nu: float | None
    membership: str
    n_affected: int | None
    mean: float
    se: float
    trials: int
    censored: int
    seed: int
    convention: str
    arl_hat: float | None = None
    arl_se: float | None = None


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    gamma: float | None = None
    seed: int = 0
    calibrations: dict = field(default_factory=dict)


def scenario_n_affected(spec: ScenarioSpec) -> int | None:
    ms = spec.membership
    if ms.kind == "fixed_count":
        return ms.m
    if ms.kind == "explicit":
        return len(ms.indices)
    if ms.kind == "staggered":
        return spec.n_streams
    return None


def run_benchmark(suite, gamma: float, trials: int, seed: int = 0, *, threads: int = 1,
                  rel_tol: float = 0.05, calibration_trials: int | None = None,
                  progress=None) -> BenchReport:
    """Calibrate each distinct config once, then estimate delays per scenario.

    ``suite`` is a sequence of ``(DetectorConfig, ScenarioSpec)`` pairs.  A
    config with a finite ``b`` is used as given.  Calibration uses the
    master seed ``seed``; delay runs use ``seed + 1``.
    """
    report = BenchReport(gamma=gamma, seed=seed)
    calibrated: dict = {}
    cal_trials = calibration_trials or trials
    for config, scenario in suite:
        key = (config, scenario.n_streams)
        if key not in calibrated:
            if math.isfinite(config.b):
                calibrated[key] = (config, None)
            else:
                cal = calibrate_threshold(config, scenario.n_streams, gamma, cal_trials, rel_tol,
                                          seed, threads=threads)
                calibrated[key] = (config.with_b(cal.b), cal)
                report.calibrations[f"{config.label()}|N={scenario.n_streams}"] = cal.to_dict()
            if progress:
                progress(f"threshold {config.label()}: b={calibrated[key][0].b:.4g}")
        cfg, cal = calibrated[key]
        d = estimate_delay(cfg, scenario, trials, seed + 1, threads=threads)
        report.rows.append(BenchRow(
            rule=cfg.label(), params=cfg.params(), b=cfg.b, n_streams=scenario.n_streams,
            mu=scenario.mu, nu=None if scenario.staggered else scenario.nu,
            membership=scenario.membership.label(), n_affected=scenario_n_affected(scenario),
            mean=d.mean, se=d.se, trials=d.trials, censored=d.censored, seed=seed,
            convention=d.convention,
            arl_hat=None if cal is None else cal.arl_hat,
            arl_se=None if cal is None else cal.arl_se,
        ))
        if progress:
            progress(f"  {cfg.label()} {scenario.membership.label()} mu={scenario.mu:g}: "
                     f"{d.mean:.3g} ({d.se:.2g})")
    return report


@dataclass
class Suite:
    name: str
    pairs: list
    gamma: float | None = None
    trials: int | None = None
    description: str = ""


def parse_suite(doc: dict, name: str = "suite") -> Suite:
    """Build a suite from ``{"configs": [...], "scenarios": [...]}``.

    Every config is paired with every scenario, configs outermost.
    """
    if "configs" not in doc or "scenarios" not in doc:
        raise ValueError("suite needs 'configs' and 'scenarios' lists")
    configs = [DetectorConfig.from_dict(c) for c in doc["configs"]]
    scenarios = [ScenarioSpec.from_dict(s) for s in doc["scenarios"]]
    pairs = [(c, s) for c in configs for s in scenarios]
    return Suite(doc.get("name", name), pairs, doc.get("gamma"), doc.get("trials"),
                 doc.get("description", ""))


def builtin_suites() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("msdetect").joinpath("suites").iterdir()
                  if p.name.endswith(".json"))


def load_suite(source: str) -> Suite:
    """Load a suite from a JSON file path or a built-in name (``sweep100``, ``staggered100``)."""
    path = Path(source)
    if path.exists():
        return parse_suite(json.loads(path.read_text()), path.stem)
    res = resources.files("msdetect").joinpath("suites", f"{source}.json")
    if res.is_file():
        return parse_suite(json.loads(res.read_text()), source)
    raise FileNotFoundError(f"no suite file or built-in suite named {source!r}")
