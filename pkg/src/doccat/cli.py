"""Command-line entry point: ``doccat {train,evaluate,classify,serve,bench}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable CSV, unusable dataset, corrupt model file), 3 training or
serving failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import signal
import sys
from pathlib import Path

from doccat import __version__
from doccat.config import ConfigError, read_config
from doccat.corpus import DataError, Dataset, Label, clean_text, load_dataset
from doccat.envelope import FORMAT_VERSION, EnvelopeError, load, save
from doccat.evaluate import FoldError, bench, run_cv
from doccat.models import MODEL_TYPES, fit, make_spec, predict_docs
from doccat.models.logreg import TrainingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAILURE = 0, 1, 2, 3

log = logging.getLogger("doccat")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _settings(path: str | None) -> tuple[dict[str, str], dict[str, str]]:
    """Split a config file into model parameters and ``column.*`` CSV column overrides."""
    if not path:
        return {}, {}
    kv = read_config(path)
    columns = {k[len("column.") :]: v for k, v in kv.items() if k.startswith("column.")}
    params = {k: v for k, v in kv.items() if not k.startswith("column.")}
    return params, columns


def _spec(model_type: str, params: dict[str, str], seed: int | None):
    if seed is None and "seed" in params:
        seed = int(params["seed"])
    params = {k: v for k, v in params.items() if k != "seed"}
    try:
        return make_spec(model_type, params, seed if seed is not None else 0)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _dataset(path: str, columns: dict[str, str]) -> Dataset:
    ds = load_dataset(path, columns or None)
    if len(ds) == 0:
        raise DataError(f"{path}: no usable documents")
    counts = ", ".join(f"{n}" for n in ds.class_counts)
    log.info("loaded %d documents (Change/Problem/Request %s), dropped %d %s", len(ds), counts, ds.dropped_count, ds.drop_reasons)
    return ds


def cmd_train(args) -> int:
    params, columns = _settings(args.config)
    spec = _spec(args.model, params, args.seed)
    ds = _dataset(args.data, columns)
    model = fit(spec, ds.documents, log=log.info)
    fingerprint = save(model, args.out, ds.fingerprint())
    print(f"{args.out}\t{spec.model_type}\t{fingerprint}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params, columns = _settings(args.config)
    seed = args.seed if args.seed is not None else int(params.get("seed", 0))
    spec = "majority" if args.model_type == "majority" else _spec(args.model_type, params, seed)
    ds = _dataset(args.data, columns)
    report = run_cv(ds, spec, k=args.k, repeats=args.repeats, seed=seed, log=log.info)
    if args.report:
        Path(args.report).write_text(report.to_json())
        Path(args.report + ".timings.json").write_text(report.timings_json())
    sys.stdout.write(report.render())
    return EXIT_OK


def _format(label: int, probs) -> str:
    return "\t".join([Label(int(label)).title] + [repr(float(p)) for p in probs])


def cmd_classify(args) -> int:
    model, _ = load(args.model)
    if args.text is not None:
        text = clean_text(args.text)
        if not text:
            raise DataError("text is empty after cleaning")
        labels, probs = predict_docs(model, [text])
        print(_format(labels[0], probs[0]))
        return EXIT_OK
    if not args.output:
        raise UsageError("--input needs --output")
    _, columns = _settings(args.config)
    subject_col, body_col = columns.get("subject", "subject"), columns.get("body", "body")
    src = Path(args.input)
    if not src.is_file():
        raise DataError(f"no such file: {src}")
    with src.open(newline="", encoding="utf-8") as fh:
        try:
            rows = list(csv.DictReader(fh, strict=True))
        except csv.Error as exc:
            raise DataError(f"{src}: malformed CSV: {exc}") from None
    if rows and subject_col not in rows[0] and body_col not in rows[0]:
        raise DataError(f"{src}: needs a {subject_col!r} or {body_col!r} column")
    texts = [clean_text(f"{r.get(subject_col) or ''} {r.get(body_col) or ''}") for r in rows]
    keep = [i for i, t in enumerate(texts) if t]
    labels, probs = predict_docs(model, [texts[i] for i in keep])
    out = {i: _format(l, p) for i, l, p in zip(keep, labels, probs)}
    blank = "unclassifiable\t\t\t"
    with Path(args.output).open("w", encoding="utf-8") as fh:
        fh.write("row\tlabel\tp_change\tp_problem\tp_request\n")
        for i in range(len(rows)):
            fh.write(f"{i + 1}\t{out.get(i, blank)}\n")
    log.info("classified %d of %d rows", len(keep), len(rows))
    return EXIT_OK


def cmd_serve(args) -> int:
    from doccat.router import Router, RouterConfig, serve

    kv = read_config(args.config) if args.config else {}
    if args.model:
        kv["model"] = str(Path(args.model).resolve())
    if args.listen:
        kv["listen"] = args.listen
    base = Path(args.config).parent if args.config else Path(".")
    cfg = RouterConfig.from_mapping(kv, base)
    if not cfg.model_path:
        raise UsageError("serve needs --model or a 'model' config entry")
    model, meta = load(cfg.model_path)
    router = Router(cfg, model, meta["fingerprint"]).start()

    def _stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, _stop)

    def ready(host, port):
        print(f"listening on http://{host}:{port} model {meta['model_type']} {meta['fingerprint']}", flush=True)

    serve(router, ready)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        sizes = [int(s) for s in args.batch_sizes.split(",") if s]
    except ValueError:
        raise UsageError(f"bad --batch-sizes {args.batch_sizes!r}") from None
    if not sizes or min(sizes) < 1:
        raise UsageError("batch sizes must be positive integers")
    models = [(Path(p).name, load(p)[0]) for p in args.models]
    ds = _dataset(args.data, {})
    docs = list(ds.documents)
    if args.limit:
        docs = docs[: args.limit]
    report = bench(models, docs, sizes)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    sys.stdout.write(report.render())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="doccat", description="Support-ticket categorization tools.")
    p.add_argument("--version", action="version", version=f"doccat {__version__} (model format_version {FORMAT_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit one model on a ticket CSV and write a model file")
    t.add_argument("--model", required=True, choices=MODEL_TYPES)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="key = value file with hyperparameters and column.* names")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="repeated stratified k-fold cross-validation")
    e.add_argument("--model-type", required=True, choices=MODEL_TYPES + ("majority",))
    e.add_argument("--data", required=True)
    e.add_argument("--k", type=int, default=5)
    e.add_argument("--repeats", type=int, default=10)
    e.add_argument("--seed", type=int)
    e.add_argument("--config")
    e.add_argument("--report", help="write the JSON report here (timings go to <report>.timings.json)")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("classify", help="label free text or a CSV of tickets")
    c.add_argument("--model", required=True)
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--input")
    c.add_argument("--output")
    c.add_argument("--config", help="column.subject / column.body names for --input")
    c.set_defaults(func=cmd_classify)

    s = sub.add_parser("serve", help="run the HTTP routing service")
    s.add_argument("--model")
    s.add_argument("--config")
    s.add_argument("--listen", help="host:port, overrides the config file")
    s.set_defaults(func=cmd_serve)

    b = sub.add_parser("bench", help="prediction throughput per model and batch size")
    b.add_argument("--models", nargs="+", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--batch-sizes", default="1,32,64")
    b.add_argument("--limit", type=int, help="use only the first N documents")
    b.add_argument("--report")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"doccat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EnvelopeError) as exc:
        print(f"doccat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FoldError, ValueError, RuntimeError, OSError) as exc:
        print(f"doccat: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
