"""Command-line driver: ``ncsmd run|sweep|validate <config>``."""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from pathlib import Path

from . import experiment, validation
from .errors import ConfigError

log = logging.getLogger("ncsmd")


def build_parser():
    parser = argparse.ArgumentParser(prog="ncsmd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run every (T, seed) trajectory"),
                            ("sweep", "run a horizon sweep and fit growth exponents"),
                            ("validate", "run the property checks")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def cmd_validate(cfg, out_dir=None, seed_offset=0):
    if seed_offset:
        cfg.validation = dict(cfg.validation or {})
        cfg.validation["seed"] = cfg.validation.get("seed", 0) + seed_offset
    checks = validation.run_validation(cfg)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": experiment.SCHEMA_VERSION,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "all_passed": validation.checks_passed(checks),
        "checks": [c.as_dict() for c in checks],
    }
    experiment.write_json(out / "validation.json", payload)
    return payload


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = experiment.ExperimentConfig.load(args.config)
        if args.command == "run":
            report = experiment.cmd_run(cfg, args.out, args.jobs, args.seed_offset)
        elif args.command == "sweep":
            report = experiment.cmd_sweep(cfg, args.out, args.jobs, args.seed_offset)
        else:
            payload = cmd_validate(cfg, args.out, args.seed_offset)
            for c in payload["checks"]:
                state = "SKIP" if c["skipped"] else ("PASS" if c["pass"] else "FAIL")
                print(f"{state}  {c['name']}  statistic={c['statistic']}  threshold={c['threshold']}")
            return 0 if payload["all_passed"] else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    failed = [r for r in report["rows"] if r["status"] != "ok"]
    for r in failed:
        log.warning("T=%s seed=%s failed: %s", r["T"], r["seed"], r["error"])
    for flag in report["flags"]:
        log.info("flag: %s", flag)
    print(f"{len(report['rows'])} rows written ({len(failed)} failed)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
