"""CLI: monohop-render render --kind <k> --in <csv> --out <png>"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, PlotSpec, RenderError, render


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="monohop-render")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("render", help="render one figure from telemetry")
    r.add_argument("--kind", required=True, choices=KINDS)
    r.add_argument("--in", dest="path", required=True, help="telemetry CSV")
    r.add_argument("--out", required=True, help="output image path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        caption = render(PlotSpec(path=args.path, kind=args.kind,
                                  out_path=args.out))
    except (RenderError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    print(caption)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
