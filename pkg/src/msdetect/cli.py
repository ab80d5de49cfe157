"""``msdetect`` command line.

Exit codes: 0 alarm or success, 1 input ended without alarm, 2 usage or
domain error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from msdetect import __version__
from msdetect.calibrate import (
    BenchReport,
    BenchRow,
    CalibrationError,
    calibrate_threshold,
    default_cap,
    estimate_arl,
    estimate_delay,
    load_suite,
    run_benchmark,
    scenario_n_affected,
)
from msdetect.detectors import Detector, DetectorConfig, Rule
from msdetect.model import Membership, ScenarioSpec
from msdetect.numerics import estimate_xi
from msdetect.theory import DomainError, theory_report
from msdetect.windows import WindowSet

EXIT_OK = 0
EXIT_NO_ALARM = 1
EXIT_USAGE = 2

_RULE_NAMES = {r.value.lower(): r for r in Rule} | {"max": Rule.MAX, "mei-ext": Rule.MEI_EXT}


class UsageError(Exception):
    pass


@dataclass
class AlarmEvent:
    t: int
    statistic: float
    threshold: float
    argmax_window: int | None
    rule: str


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _rule(text: str) -> Rule:
    try:
        return _RULE_NAMES[text.lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown rule {text!r}; choose from MAX, XS, LR, S, MEI, MEI_EXT") from None


def _windows(text: str) -> WindowSet:
    try:
        return WindowSet.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _add_rule_args(p: argparse.ArgumentParser, *, need_b: bool = False) -> None:
    g = p.add_argument_group("stopping rule")
    g.add_argument("--rule", type=_rule, required=True, help="MAX, XS, LR, S, MEI or MEI_EXT")
    g.add_argument("--p0", type=float, help="mixing weight (XS, LR, S, MEI_EXT)")
    g.add_argument("--mu0", type=float, help="assumed shift (LR, MEI, MEI_EXT; default 1)")
    g.add_argument("--lambda-m", type=float, help="MEI_EXT bump weight (default from mu0)")
    g.add_argument("--windows", type=_windows, help="lai:k1,r,cap or range:a..b (default range:1..200)")
    g.add_argument("--b", type=float, required=need_b, help="threshold")


def _add_run_args(p: argparse.ArgumentParser, trials: int = 500) -> None:
    p.add_argument("--trials", type=_positive_int, default=trials)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)


def _config(args) -> DetectorConfig:
    b = math.inf if getattr(args, "b", None) is None else args.b
    try:
        return DetectorConfig(args.rule, b=b, p0=args.p0, mu0=args.mu0,
                              lambda_m=args.lambda_m, windows=args.windows)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


# -- subcommands ----------------------------------------------------------

def cmd_theory(args) -> int:
    xi = None
    if args.xi is not None:
        xi = args.xi
    elif args.estimate_xi:
        xi, _ = estimate_xi(args.mu0 or args.mu, seed=args.seed)
    try:
        rep = theory_report(args.beta, args.zeta, args.mu, args.n, args.gamma,
                            c=args.c, delta=args.delta, xi_hat=xi, mu0=args.mu0)
    except DomainError as e:
        print(json.dumps({"error": str(e), "regime": e.regime}), file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        raise UsageError(str(e)) from None
    _print_json(rep)
    return EXIT_OK


def _single_row_report(config, scenario, mean, se, trials, censored, seed, convention,
                       arl_hat=None, arl_se=None, gamma=None) -> BenchReport:
    row = BenchRow(config.label(), config.params(), config.b, scenario.n_streams, scenario.mu,
                   None if scenario.staggered else scenario.nu, scenario.membership.label(),
                   scenario_n_affected(scenario), mean, se, trials, censored, seed, convention,
                   arl_hat, arl_se)
    return BenchReport([row], gamma=gamma, seed=seed)


def _write_report(report: BenchReport, out: Path | None, stem: str, *, figure: bool = False):
    from msdetect import report as rp

    if out is None:
        return []
    files = [rp.write_csv(report, out / f"{stem}.csv"), rp.write_json(report, out / f"{stem}.json")]
    if figure:
        from msdetect.plotting import plot_delays

        files.append(rp.write_pivot_csv(report, out / f"{stem}_pivot.csv"))
        fig = plot_delays(report, out / f"{stem}_delay.png", title=stem)
        if fig is not None:
            files.append(fig)
    return files


def cmd_calibrate(args) -> int:
    config = _config(args)
    try:
        res = calibrate_threshold(config, args.n, args.gamma, args.trials, args.rel_tol,
                                  args.seed, threads=args.threads)
    except CalibrationError as e:
        print(json.dumps({"error": str(e), "trace": e.trace}), file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        raise UsageError(str(e)) from None
    summary = {"rule": config.label(), "params": config.params(), "n_streams": args.n,
               "gamma": args.gamma, **res.to_dict()}
    out = _out_dir(args)
    if out is not None:
        rep = _single_row_report(config.with_b(res.b), ScenarioSpec(args.n), res.arl_hat,
                                 res.arl_se, res.trials, res.censored, args.seed, "arl",
                                 res.arl_hat, res.arl_se, args.gamma)
        rep.calibrations[f"{config.label()}|N={args.n}"] = res.to_dict()
        _write_report(rep, out, "calibrate")
    _print_json(summary)
    return EXIT_OK


def cmd_arl(args) -> int:
    config = _config(args)
    if not math.isfinite(config.b):
        raise UsageError("--b is required")
    cap = args.cap or default_cap(args.gamma or 5000)
    est = estimate_arl(config, args.n, args.trials, cap, args.seed, threads=args.threads)
    summary = {"rule": config.label(), "b": config.b, "n_streams": args.n, "arl_hat": est.arl_hat,
               "arl_se": est.arl_se, "trials": est.trials, "censored": est.censored, "cap": cap}
    out = _out_dir(args)
    if out is not None:
        rep = _single_row_report(config, ScenarioSpec(args.n), est.arl_hat, est.arl_se,
                                 est.trials, est.censored, args.seed, "arl")
        _write_report(rep, out, "arl")
    _print_json(summary)
    return EXIT_OK


def _scenario(args) -> ScenarioSpec:
    if args.staggered:
        ms = Membership.staggered()
    elif args.n_affected is not None:
        ms = Membership.fixed_count(args.n_affected)
    elif args.p_affected is not None:
        ms = Membership.bernoulli(args.p_affected)
    else:
        raise UsageError("give one of --n-affected, --p-affected or --staggered")
    try:
        return ScenarioSpec(args.n, mu=args.mu, nu=args.nu, membership=ms, horizon=args.horizon)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_delay(args) -> int:
    config = _config(args)
    scenario = _scenario(args)
    if not math.isfinite(config.b):
        if args.gamma is None:
            raise UsageError("give --b or --gamma (to calibrate b first)")
        cal = calibrate_threshold(config, args.n, args.gamma, args.trials, seed=args.seed,
                                  threads=args.threads)
        config = config.with_b(cal.b)
    try:
        d = estimate_delay(config, scenario, args.trials, args.seed + 1, threads=args.threads)
    except (ValueError, RuntimeError) as e:
        raise UsageError(str(e)) from None
    rep = _single_row_report(config, scenario, d.mean, d.se, d.trials, d.censored, args.seed,
                             d.convention, gamma=args.gamma)
    _write_report(rep, _out_dir(args), "delay")
    _print_json({"rule": config.label(), "b": config.b, "scenario": scenario.to_dict(),
                 **{k: v for k, v in asdict(d).items() if k != "stop_times"}})
    return EXIT_OK


def cmd_bench(args) -> int:
    from msdetect import report as rp

    try:
        suite = load_suite(args.suite)
    except (FileNotFoundError, ValueError, KeyError) as e:
        raise UsageError(f"bad suite: {e}") from None
    gamma = args.gamma or suite.gamma or 5000
    trials = args.trials or suite.trials or 500

    def progress(msg):
        if not args.quiet:
            print(msg, file=sys.stderr)

    report = run_benchmark(suite.pairs, gamma, trials, args.seed, threads=args.threads,
                           rel_tol=args.rel_tol, progress=progress)
    files = _write_report(report, _out_dir(args), suite.name, figure=True)
    print(rp.format_pivot(report))
    for f in files:
        print(f"wrote {f}", file=sys.stderr)
    return EXIT_OK


_SPLIT = re.compile(r"[,\s]+")


def read_rows(lines, n_streams: int | None = None):
    """Yield ``(line_no, values)`` from comma/whitespace rows.

    Blank lines and ``#`` comments are skipped.  Raises ValueError naming
    the line on ragged, non-numeric or non-finite rows.
    """
    for line_no, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = [p for p in _SPLIT.split(text) if p]
        try:
            values = np.array([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"line {line_no}: non-numeric value") from None
        if n_streams is None:
            n_streams = values.size
        if values.size != n_streams:
            raise ValueError(f"line {line_no}: expected {n_streams} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"line {line_no}: non-finite value")
        yield line_no, values


def cmd_monitor(args) -> int:
    config = _config(args)
    fh = sys.stdin if args.input in (None, "-") else open(args.input)
    det = None
    t = 0
    top = -math.inf
    try:
        for _line_no, values in read_rows(fh, args.n):
            if det is None:
                det = Detector(config, values.size)
            v = det.step(values)
            t = v.t
            top = max(top, v.statistic)
            if args.emit_stats:
                print(json.dumps({"t": v.t, "statistic": v.statistic}))
            if v.stopped:
                ev = AlarmEvent(v.t, v.statistic, config.b, v.argmax_window, config.label())
                print(json.dumps(asdict(ev)))
                return EXIT_OK
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if fh is not sys.stdin:
            fh.close()
    print(json.dumps({"alarm": False, "steps": t,
                      "max_statistic": top if math.isfinite(top) else None,
                      "threshold": config.b, "rule": config.label()}))
    return EXIT_NO_ALARM


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msdetect",
                                description="Sequential change detection across many streams.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("theory", help="asymptotic domain, delay and tuning recommendations")
    t.add_argument("--beta", type=float, required=True)
    t.add_argument("--zeta", type=float, default=0.0)
    t.add_argument("--mu", type=float, default=1.0)
    t.add_argument("--n", type=int, default=10_000)
    t.add_argument("--gamma", type=float, default=5000.0)
    t.add_argument("--c", type=float, default=1.0, help="p0 constant")
    t.add_argument("--delta", type=float, default=0.1, help="window-length slack")
    t.add_argument("--mu0", type=float)
    t.add_argument("--xi", type=float, help="value of xi for the Mei bounds")
    t.add_argument("--estimate-xi", action="store_true", help="estimate xi by simulation")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_theory)

    c = sub.add_parser("calibrate", help="find b with ARL close to gamma")
    _add_rule_args(c)
    c.add_argument("--n", type=_positive_int, required=True, help="number of streams")
    c.add_argument("--gamma", type=float, default=5000.0)
    c.add_argument("--rel-tol", type=float, default=0.05)
    _add_run_args(c)
    c.add_argument("--out", help="directory for calibrate.csv / calibrate.json")
    c.set_defaults(func=cmd_calibrate)

    a = sub.add_parser("arl", help="estimate the ARL at a given b")
    _add_rule_args(a, need_b=True)
    a.add_argument("--n", type=_positive_int, required=True)
    a.add_argument("--gamma", type=float, help="sets the default cap max(20 gamma, 1e5)")
    a.add_argument("--cap", type=_positive_int)
    _add_run_args(a)
    a.add_argument("--out")
    a.set_defaults(func=cmd_arl)

    d = sub.add_parser("delay", help="estimate the detection delay in one scenario")
    _add_rule_args(d)
    d.add_argument("--n", type=_positive_int, required=True)
    d.add_argument("--gamma", type=float, help="calibrate b to this ARL when --b is absent")
    d.add_argument("--mu", type=float, default=1.0)
    d.add_argument("--nu", type=_positive_int, default=1)
    grp = d.add_mutually_exclusive_group()
    grp.add_argument("--n-affected", type=int)
    grp.add_argument("--p-affected", type=float)
    grp.add_argument("--staggered", action="store_true")
    d.add_argument("--horizon", type=_positive_int, default=100_000)
    _add_run_args(d)
    d.add_argument("--out")
    d.set_defaults(func=cmd_delay)

    b = sub.add_parser("bench", help="run a suite: calibrate each rule, sweep scenarios")
    b.add_argument("--suite", required=True, help="suite JSON file or built-in name (sweep100, staggered100)")
    b.add_argument("--gamma", type=float)
    b.add_argument("--trials", type=_positive_int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=_positive_int, default=1)
    b.add_argument("--rel-tol", type=float, default=0.05)
    b.add_argument("--out", default="bench_out")
    b.add_argument("-q", "--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)

    m = sub.add_parser("monitor", help="apply a rule online to rows read from a file or stdin")
    _add_rule_args(m, need_b=True)
    m.add_argument("--input", help="file with one row per time step (default stdin)")
    m.add_argument("--n", type=_positive_int, help="expected number of streams per row")
    m.add_argument("--emit-stats", action="store_true", help="print the statistic every step")
    m.set_defaults(func=cmd_monitor)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))  # exits 2


if __name__ == "__main__":
    sys.exit(main())
