"""``privsplit`` command line: run | compare | plot | serve | infer."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import PrivSplitError


def _parse_input(spec: str) -> np.ndarray:
    """A comma-separated row, or a CSV file whose rows are inputs.

    A header row is skipped; only ``f*`` columns are used when one exists.
    """
    p = Path(spec)
    if not p.is_file():
        return np.array([[float(v) for v in spec.split(",")]])
    lines = [ln.strip() for ln in p.read_text().splitlines() if ln.strip()]
    head = lines[0].split(",")
    try:
        [float(v) for v in head]
        cols, body = None, lines
    except ValueError:
        cols = [i for i, h in enumerate(head) if h.strip().startswith("f")] or None
        body = lines[1:]
    rows = []
    for ln in body:
        cells = ln.split(",")
        rows.append([float(cells[i]) for i in cols] if cols else [float(c) for c in cells])
    return np.array(rows)


def cmd_run(args) -> int:
    from .experiments import ExperimentConfig, compare_variants, run_pipeline

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.output:
        cfg = replace(cfg, output_dir=args.output)
    out = run_pipeline(cfg)
    print(f"artifacts written to {out}")
    for v in compare_variants(out):
        print(f"{'PASS' if v.holds else 'FAIL'}  {v.claim}: {v.detail}")
    return 0


def cmd_compare(args) -> int:
    from .experiments import compare_variants

    verdicts = compare_variants(args.artifacts, args.split)
    for v in verdicts:
        print(f"{'PASS' if v.holds else 'FAIL'}  {v.claim}: {v.detail}")
    return 0 if all(v.holds for v in verdicts) else 1


def cmd_plot(args) -> int:
    from .plot import plot_curves

    print(plot_curves(args.curve, args.output))
    return 0


def cmd_serve(args) -> int:
    from .service import ClassifierService, SplitServer, parse_address

    service = ClassifierService.from_bundle(io.load_bundle(args.bundle))
    server = SplitServer(service, parse_address(args.listen))
    print(f"serving {args.bundle} on {server.address} (features: {service.feature_dim})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_infer(args) -> int:
    from .service import SocketTransport, SplitClient

    bundle = io.load_bundle(args.bundle)
    xs = _parse_input(args.input)
    with SocketTransport(args.server, args.timeout) as transport:
        client = SplitClient(bundle, transport)
        for i, x in enumerate(xs):
            resp = client.infer(x, seed=[args.seed, i])
            print(json.dumps({"request_id": resp.request_id,
                              "predicted_class": resp.predicted_class,
                              "probs": [float(p) for p in resp.probs]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privsplit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the full experiment pipeline")
    r.add_argument("--config", help="JSON experiment config (defaults used when omitted)")
    r.add_argument("--output", help="override output_dir from the config")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="re-evaluate verdicts on an artifact directory")
    c.add_argument("artifacts")
    c.add_argument("--split", type=int)
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="render curve.csv as SVG")
    pl.add_argument("curve")
    pl.add_argument("-o", "--output")
    pl.set_defaults(func=cmd_plot)

    s = sub.add_parser("serve", help="host the server half of a split model")
    s.add_argument("--bundle", required=True)
    s.add_argument("--listen", default="127.0.0.1:7878")
    s.set_defaults(func=cmd_serve)

    i = sub.add_parser("infer", help="classify inputs through a running server")
    i.add_argument("--bundle", required=True)
    i.add_argument("--server", required=True)
    i.add_argument("--input", required=True, help="comma-separated row or CSV file")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--timeout", type=float, default=5.0)
    i.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PrivSplitError, OSError, ValueError) as exc:
        print(f"privsplit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
