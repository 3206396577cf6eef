"""Command-line scenario runner.

    monohop run <scenario> [--params FILE] [--seed N] [--out CSV]
                [--override key=value ...]
    monohop list
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import SCENARIOS, ScenarioConfig, ScenarioError, run_scenario
from .params import ConfigError


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="monohop",
                                 description="monopod rolling/jumping robot "
                                             "simulation scenarios")
    sub = ap.add_subparsers(dest="cmd", required=True)
    runp = sub.add_parser("run", help="run one scenario")
    runp.add_argument("scenario", choices=SCENARIOS)
    runp.add_argument("--params", default="", help="config file path "
                      "(default: packaged reference config)")
    runp.add_argument("--seed", type=int, default=0)
    runp.add_argument("--out", default="", help="telemetry CSV path")
    runp.add_argument("--override", action="append", default=[],
                      metavar="KEY=VALUE", help="override a config key or "
                      "scenario knob (repeatable)")
    sub.add_parser("list", help="list scenarios")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "list":
        for s in SCENARIOS:
            print(s)
        return 0
    overrides = {}
    for tok in args.override:
        if "=" not in tok:
            print("bad override %r, expected key=value" % tok, file=sys.stderr)
            return 2
        k, _, v = tok.partition("=")
        overrides[k.strip()] = v.strip()
    try:
        cfg = ScenarioConfig(scenario=args.scenario, params_path=args.params,
                             seed=args.seed, out_path=args.out,
                             overrides=overrides)
        summary = run_scenario(cfg)
    except (ScenarioError, ConfigError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # divergence and the like: report, nonzero exit
        print("scenario failed: %s" % exc, file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, default=str))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
