"""Command-line front end.

Exit status: 0 when every built-in check passes, 1 on a failed check or a
runtime error, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import charts
from .config import ConfigError, builtin_config, load_config, validate
from .demos import DEMOS, run_config, run_demo

log = logging.getLogger("stacklab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _setup_logging():
    level = os.environ.get("STACKLAB_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _epoch_line(e, sl):
    rt = sl["rho_true"]
    log.info("epoch %d: rho_true mean %.4f min %.4f max %.4f", e, rt.mean(), rt.min(), rt.max())


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(p):
    p.add_argument("--seed", type=_u64, help="override the config seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (default: available cores)")
    p.add_argument("--no-charts", action="store_true", help="skip SVG charts")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stacklab",
                                 description="Simulate stacked interventions on risk scores.")
    sub = ap.add_subparsers(dest="command", required=True)
    d = sub.add_parser("demo", help="run a preconfigured demonstration")
    d.add_argument("name", choices=DEMOS)
    d.add_argument("--config", help="use this config instead of the shipped one")
    _common(d)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    _common(r)
    h = sub.add_parser("healthcare", help="run the healthcare population simulation")
    h.add_argument("--config", help="healthcare config (default: shipped config)")
    h.add_argument("--smoke", action="store_true", help="small shipped variant")
    _common(h)
    c = sub.add_parser("chart", help="re-render a chart from a CSV")
    c.add_argument("kind", choices=charts.KINDS)
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--title", help="chart title (default: per kind)")
    c.add_argument("--reference", type=float, action="append", default=[],
                   help="dashed reference level for trajectory-lines (repeatable)")
    return ap


def _report(outcome) -> int:
    for c in outcome.checks:
        tag = "PASS" if c.passed else ("FAIL" if c.required else "info")
        log.info("%s %s %s", tag, c.name, {k: v for k, v in c.detail.items()
                                           if not isinstance(v, (list, dict))})
    for k, v in outcome.artifacts.items():
        log.info("wrote %s: %s", k, v)
    print(f"{outcome.name}: {'PASS' if outcome.passed else 'FAIL'}")
    return EXIT_OK if outcome.passed else EXIT_FAIL


def _load(path) -> dict:
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigError([f"<file>: cannot read {path} ({exc.strerror})"]) from exc


def cmd_demo(args) -> int:
    out = args.out or os.path.join("out", args.name)
    progress = _epoch_line if log.isEnabledFor(logging.DEBUG) else None
    if args.config:
        outcome = run_config(_load(args.config), args.seed, args.threads, out,
                             not args.no_charts, progress, args.name)
    else:
        outcome = run_demo(args.name, args.seed, args.threads, out, not args.no_charts, progress)
    return _report(outcome)


def cmd_run(args) -> int:
    cfg = _load(args.config)
    out = args.out or cfg.get("output") or os.path.join("out", cfg.get("name", "experiment"))
    outcome = run_config(cfg, args.seed, args.threads, out, not args.no_charts, _epoch_line)
    return _report(outcome)


def cmd_healthcare(args) -> int:
    from .population import config_from_dict, run_healthcare, write_healthcare_outputs

    if args.config:
        cfg = _load(args.config)
    else:
        cfg = builtin_config("healthcare-smoke" if args.smoke else "healthcare")
    validate(cfg, "healthcare-v1.json")
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        hc = config_from_dict(cfg)
    except ValueError as exc:
        raise ConfigError([f"cohorts: {exc}"]) from exc
    hc = replace(hc, threads=max(1, args.threads))

    def progress(e, risk, rho, score):
        log.info("epoch %d: mean risk %.4f, forest oob %s", e, risk.mean(),
                 "n/a" if score.oob_mse is None else f"{score.oob_mse:.4f}")

    result = run_healthcare(hc, progress)
    outcfg = cfg.get("output", {})
    out = args.out or outcfg.get("dir") or os.path.join("out", cfg.get("name", "healthcare"))
    paths = write_healthcare_outputs(result, out, not args.no_charts,
                                     outcfg.get("per_individual", True))
    f = result.fairness
    for c in f.pre:
        log.info("cohort %d %s: mean %.4f -> %.4f (rho_eq %.3f), variance %.5f -> %.5f", c,
                 f.pre[c].label, f.pre[c].mean, f.post[c].mean, f.pre[c].rho_eq,
                 f.pre[c].variance, f.post[c].variance)
    for k, v in paths.items():
        log.info("wrote %s: %s", k, v)
    log.info("runtime %.1f s", result.runtime)
    print(f"healthcare: {'PASS' if f.passed() else 'FAIL'}")
    return EXIT_OK if f.passed() else EXIT_FAIL


def cmd_chart(args) -> int:
    options = {}
    if args.title:
        options["title"] = args.title
    if args.reference:
        if args.kind != "trajectory-lines":
            raise ConfigError(["--reference: only trajectory-lines draws reference levels"])
        options["reference"] = args.reference
    charts.render(charts.ChartSpec(args.kind, args.input, args.output, options))
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handler = {"demo": cmd_demo, "run": cmd_run, "healthcare": cmd_healthcare,
               "chart": cmd_chart}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        for m in exc.messages:
            print(f"config error: {m}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure
        log.error("run failed: %s", exc, exc_info=log.isEnabledFor(logging.DEBUG))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
