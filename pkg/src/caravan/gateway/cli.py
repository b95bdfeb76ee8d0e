"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 execution failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..corpus import generate_corpus
from ..errors import (
    CaravanError,
    InvalidArgument,
    NotFound,
    ParseError,
    ValidationFailure,
)
from ..service import CaravanService, default_data_dir, run_pipeline
from ..store import export_provenance_xml

VALIDATION_ERRORS = (ValidationFailure, InvalidArgument, ParseError, NotFound)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caravan", description="Caravan pipeline engine")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP gateway")
    serve.add_argument("--addr", default="127.0.0.1:8600", help="host:port to bind")
    serve.add_argument("--data-dir", default=None, help="data directory")
    serve.add_argument("--workers", type=int, default=2, help="worker thread count")
    serve.add_argument("--frontend", default=None, help="static UI bundle directory")

    corpus = sub.add_parser("corpus", help="synthetic corpus tools")
    corpus_sub = corpus.add_subparsers(dest="corpus_command", required=True)
    generate = corpus_sub.add_parser("generate", help="write a synthetic corpus")
    generate.add_argument("--out", required=True, help="output directory")
    generate.add_argument("--packages", type=int, required=True, help="number of packages")
    generate.add_argument("--categories", required=True, help="comma-separated categories")
    generate.add_argument("--mode", choices=("disjoint", "overlap"), default="disjoint")
    generate.add_argument("--seed", type=int, required=True, help="64-bit corpus seed")

    run = sub.add_parser("run", help="execute a full pipeline from a config file")
    run.add_argument("--config", required=True, help="pipeline config JSON")
    run.add_argument("--data-dir", default=None, help="data directory")
    run.add_argument("--workers", type=int, default=2, help="worker thread count")

    provenance = sub.add_parser("provenance", help="provenance tools")
    provenance_sub = provenance.add_subparsers(dest="provenance_command", required=True)
    export = provenance_sub.add_parser("export", help="export an artifact's lineage")
    export.add_argument("--artifact", required=True, help="artifact id")
    export.add_argument("--format", choices=("xml", "json"), default="xml")
    export.add_argument("--data-dir", default=None, help="data directory")

    return parser


def _data_dir(value: str | None) -> str:
    return value if value else default_data_dir()


def cmd_serve(args) -> int:
    import uvicorn

    from .app import create_app

    host, _, port = args.addr.partition(":")
    service = CaravanService(_data_dir(args.data_dir), worker_count=args.workers)
    service.start()
    frontend = args.frontend
    if frontend is None:
        bundled = Path(__file__).resolve().parents[3] / "frontend" / "dist"
        frontend = str(bundled) if bundled.is_dir() else None
    app = create_app(service, frontend_dir=frontend)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8600), log_level="warning")
    finally:
        service.stop()
    return 0


def cmd_corpus_generate(args) -> int:
    categories = [c for c in args.categories.split(",") if c]
    generate_corpus(args.packages, categories, args.mode, args.seed, args.out)
    print(f"corpus written to {args.out} ({args.packages} packages)")
    return 0


def cmd_run(args) -> int:
    config_path = Path(args.config)
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationFailure(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from None
    service = CaravanService(_data_dir(args.data_dir), worker_count=args.workers)
    service.start()
    try:
        outputs = run_pipeline(service, config)
    finally:
        service.stop()
    for key in ("selected_id", "merged_id", "processed_id", "model_id", "evaluation_id"):
        print(f"{key}\t{outputs[key]}")
    return 0


def cmd_provenance_export(args) -> int:
    service = CaravanService(_data_dir(args.data_dir), worker_count=0)
    if args.format == "xml":
        sys.stdout.write(export_provenance_xml(service.store, args.artifact))
    else:
        lineage = service.store.lineage(args.artifact)
        print(json.dumps([record.to_dict() for record in lineage], indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "serve":
            return cmd_serve(args)
        if args.command == "corpus":
            return cmd_corpus_generate(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "provenance":
            return cmd_provenance_export(args)
        parser.error(f"unknown command {args.command}")
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        for detail in exc.details:
            print(f"  {detail}", file=sys.stderr)
        return 1
    except CaravanError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return 2
    except TimeoutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
