"""Command-line entry point: ``fpwhitebox <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 an external system
failed on more than 10% of its calls.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import DataError
from .evaluate import FAILURE_LIMIT, RUNNERS, record_rng
from .io import RunManifest, dumps_report, load_manifest, load_template, save_template, write_reports
from .matcher import match
from .perturb import PerturbationSpec

logger = logging.getLogger("fpwhitebox")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EXTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which we reserve for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, manifest_required: bool = True) -> None:
    p.add_argument("--manifest", type=Path, required=manifest_required, help="run manifest (JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the manifest seed")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides the manifest)")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: CPU count)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fpwhitebox", description="White-box and black-box fingerprint system evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for kind in ("reader", "extractor", "matcher", "blackbox"):
        _common(sub.add_parser(f"{kind}-eval", help=f"{kind} evaluation from a manifest"))

    p = sub.add_parser("perturb", help="write perturbed templates (dataset generation)")
    _common(p, manifest_required=False)
    p.add_argument("--template", type=Path, help="single template to perturb instead of a manifest")
    p.add_argument("--spec", action="append", default=[],
                   help="perturbation spec as JSON or @file; repeatable (default: manifest perturbations)")

    p = sub.add_parser("match", help="score one template pair with the baseline matcher")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("synth", help="generate a synthetic dataset with manifests")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fingers", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=320, help="image width and height in px")
    p.add_argument("--readers", default="optical", help="comma-separated reader ids")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _load(args) -> RunManifest:
    m = load_manifest(args.manifest)
    if args.seed is not None:
        m.seed = args.seed
    if args.out is not None:
        m.output_dir = args.out
    return m


def _cmd_eval(args) -> int:
    kind = args.command.removesuffix("-eval")
    m = _load(args)
    if m.kind != kind:
        raise UsageError(f"{args.command} needs a manifest of kind {kind!r}, got {m.kind!r}")
    run = RUNNERS[kind](m, jobs=args.jobs)
    paths = write_reports(m.output_dir, run.report, run.tables)
    for p in paths:
        logger.info("wrote %s", p)
    print(f"{kind}: {run.processed} processed, {run.n_excluded} excluded; reports in {m.output_dir}")
    bad = run.external_limit_exceeded
    if bad:
        for name in bad:
            print(f"error: system {name} failed on {run.failures.rate(name):.1%} of calls "
                  f"(limit {FAILURE_LIMIT:.0%})", file=sys.stderr)
        return EXIT_EXTERNAL
    return EXIT_OK


def _parse_spec(text: str) -> PerturbationSpec:
    if text.startswith("@"):
        text = Path(text[1:]).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--spec is not valid JSON: {exc}") from exc
    try:
        return PerturbationSpec.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad perturbation spec {text!r}: {exc}") from exc


def _cmd_perturb(args) -> int:
    specs = [_parse_spec(s) for s in args.spec]
    if args.template is not None:
        if args.manifest is not None:
            raise UsageError("give either --template or --manifest, not both")
        if not specs:
            raise UsageError("--template needs at least one --spec")
        tpl = load_template(args.template)
        seed = 0 if args.seed is None else args.seed
        out = args.out or Path(".")
        for i, spec in enumerate(specs):
            rng = record_rng(seed, args.template.stem, i)
            dst = out / f"{args.template.stem}__{i:02d}_{spec.kind.value}.txt"
            save_template(spec.apply(tpl, rng), dst, drop_out_of_bounds=True, comment=json.dumps(spec.to_dict()))
            print(dst)
        return EXIT_OK
    if args.manifest is None:
        raise UsageError("perturb needs --manifest or --template")
    m = _load(args)
    specs = specs or m.perturbations
    if not specs:
        raise UsageError("no perturbation specs in the manifest or on the command line")
    out = Path(m.output_dir)
    records = []
    for rec in m.records:
        src = rec.template or rec.ground_truth
        if src is None:
            logger.warning("record %s has no template; skipped", rec.id)
            continue
        tpl = load_template(src)
        for i, spec in enumerate(specs):
            rng = record_rng(m.seed, rec.id, i)
            rel = Path("templates") / f"{rec.id}__{i:02d}_{spec.kind.value}.txt"
            save_template(spec.apply(tpl, rng), out / rel, drop_out_of_bounds=True,
                          comment=json.dumps(spec.to_dict(), sort_keys=True))
            records.append({
                "id": f"{rec.id}__{i:02d}",
                "finger": rec.finger,
                "impression": rec.impression,
                "reader": rec.reader,
                "template": rel.as_posix(),
                "perturbation": spec.to_dict(),
            })
    doc = {"kind": "matcher", "seed": m.seed, "records": records}
    (out / "perturbed_manifest.json").write_text(dumps_report(doc), encoding="utf-8")
    print(f"perturb: wrote {len(records)} templates to {out}")
    return EXIT_OK


def _cmd_match(args) -> int:
    r = match(load_template(args.a), load_template(args.b))
    doc = {
        "score": r.value,
        "pairs": r.pairs,
        "rotation": r.rotation,
        "translation": list(r.translation),
    }
    sys.stdout.write(dumps_report(doc))
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .synth import generate_dataset

    readers = tuple(r.strip() for r in args.readers.split(",") if r.strip())
    if args.fingers < 2 or not readers:
        raise UsageError("synth needs at least 2 fingers and one reader")
    if args.size < 64:
        raise UsageError("--size must be at least 64 px")
    paths = generate_dataset(args.out, args.fingers, args.seed, args.size, args.size, readers)
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return EXIT_OK


COMMANDS = {
    "reader-eval": _cmd_eval,
    "extractor-eval": _cmd_eval,
    "matcher-eval": _cmd_eval,
    "blackbox-eval": _cmd_eval,
    "perturb": _cmd_perturb,
    "match": _cmd_match,
    "synth": _cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
