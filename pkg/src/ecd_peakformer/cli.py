"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

import torch

from .checkpoint import Checkpoint
from .chemio import DatasetEntry, DatasetError, ParseError, parse_smiles, read_dataset, write_dataset
from .encoder import NumericError
from .metrics import evaluate
from .molgraph import EmbeddingError, GeometryError, embed_coordinates
from .peakformer import LabelError
from .plotting import spectrum_svg
from .spectra import PeakSet, SpectrumError, render
from .synthetic import synthetic_dataset
from .training import GraphCache, TrainConfig, label_entries, predict_peaks, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ecd_peakformer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _add_strictness(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--strict", dest="strict", action="store_true", default=True,
                   help="stop at the first malformed line (default)")
    g.add_argument("--lenient", dest="strict", action="store_false",
                   help="skip malformed lines and report them")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecd-peakformer", description="ECD peak prediction from molecular graphs.",
                     epilog="exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write a synthetic JSONL dataset")
    p.add_argument("--n", type=int, default=50, help="number of molecules")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("amplitude", "literal"), default="amplitude")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="validate and normalise a JSONL dataset")
    p.add_argument("data")
    p.add_argument("--out", help="normalised JSONL output")
    _add_strictness(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("data")
    p.add_argument("--config", help="JSON or TOML file with TrainConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--mode", choices=("amplitude", "literal"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field; VALUE is parsed as JSON when possible")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    _add_strictness(p)

    p = sub.add_parser("evaluate", help="score predictions against labelled data")
    p.add_argument("data", help="labelled JSONL dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="JSONL with id and peaks per line")
    p.add_argument("--out", help="write the report JSON here instead of stdout")
    _add_strictness(p)

    p = sub.add_parser("predict", help="predict peaks and spectra")
    p.add_argument("data", nargs="?", help="JSONL molecules")
    p.add_argument("--smiles", action="append", default=[])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, help="coordinate embedding seed (default: checkpoint seed)")
    p.add_argument("--mode", choices=("amplitude", "literal"))
    p.add_argument("--out", help="output JSONL (default stdout)")
    _add_strictness(p)

    p = sub.add_parser("render-plot", help="write one SVG per spectrum")
    p.add_argument("data", help="JSONL lines carrying a spectrum or peaks")
    p.add_argument("--mode", choices=("amplitude", "literal"), default="amplitude")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip().replace("-", "_")] = _parse_value(value)
    overrides.update(seed=args.seed, epochs=args.epochs, batch_size=args.batch_size,
                     learning_rate=args.learning_rate, render_mode=args.mode)
    try:
        return TrainConfig.from_dict({**cfg.to_dict(), **{k: v for k, v in overrides.items() if v is not None}})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _read(path, strict) -> list[DatasetEntry]:
    reader = read_dataset(path, strict=strict)
    entries = list(reader)
    if reader.errors:
        print(f"skipped {len(reader.errors)} malformed line(s)", file=sys.stderr)
    return entries


def _open_out(path):
    if path is None:
        return sys.stdout
    return open(path, "w", encoding="utf-8", newline="\n")


def cmd_synth_data(args) -> int:
    n = write_dataset(synthetic_dataset(args.n, seed=args.seed, mode=args.mode), args.out)
    print(f"wrote {n} molecules to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_ingest(args) -> int:
    reader = read_dataset(args.data, strict=args.strict)
    entries = list(reader)
    if args.out:
        write_dataset(entries, args.out)
    summary = {"read": reader.n_read + len(reader.errors), "valid": reader.n_read,
               "rejected": len(reader.errors),
               "errors": [{"line": ln, "message": msg} for ln, msg in reader.errors]}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    entries = _read(args.data, args.strict)
    log_path = args.log or f"{args.out}.log.jsonl"
    ck = train(entries, cfg, log_path=log_path)
    ck.save(args.out)
    print(json.dumps({"checkpoint": args.out, "log": log_path, "best": ck.best}), file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    entries = _read(args.data, args.strict)
    if not entries:
        raise DatasetError("no labelled entries to evaluate")
    if args.checkpoint:
        ck = Checkpoint.load(args.checkpoint)
        cfg = TrainConfig.from_dict(ck.config)
        entries, truths = label_entries(entries, cfg)
        preds = predict_peaks(ck.model(), entries, GraphCache(cfg.seed), cfg.batch_size)
    else:
        entries, truths = label_entries(entries, TrainConfig())
        by_id = {}
        with open(args.predictions, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                    by_id[obj["id"]] = PeakSet.from_list(obj["peaks"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DatasetError(f"bad prediction record ({exc})", line=lineno) from exc
        missing = [e.id for e in entries if e.id not in by_id]
        if missing:
            raise DatasetError(f"no prediction for {len(missing)} molecule(s), first {missing[0]!r}")
        preds = [by_id[e.id] for e in entries]
    report = evaluate(preds, truths)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    else:
        print(report.to_json())
    print(report.table())
    return EXIT_OK


def cmd_predict(args) -> int:
    if not args.smiles and not args.data:
        raise UsageError("predict needs --smiles or a JSONL input")
    ck = Checkpoint.load(args.checkpoint)
    cfg = TrainConfig.from_dict(ck.config)
    seed = cfg.seed if args.seed is None else args.seed
    mode = args.mode or cfg.render_mode
    entries = [DatasetEntry(parse_smiles(s, id=f"smiles-{k}"), smiles=s) for k, s in enumerate(args.smiles)]
    if args.data:
        entries += _read(args.data, args.strict)
    provenance, records = [], []
    for e in entries:
        if e.record.has_coords:
            provenance.append({"coordinates": "input"})
            records.append(e)
        else:
            provenance.append({"coordinates": "embedded", "embedding_seed": seed})
            records.append(DatasetEntry(embed_coordinates(e.record, seed=seed), smiles=e.smiles))
    preds = predict_peaks(ck.model(), records, GraphCache(seed), cfg.batch_size)
    out = _open_out(args.out)
    try:
        for e, prov, peaks in zip(entries, provenance, preds):
            line = {"id": e.id}
            if e.smiles is not None:
                line["smiles"] = e.smiles
            line.update(prov)
            line["peaks"] = peaks.to_list()
            line["render_mode"] = mode
            line["spectrum"] = [float(v) for v in render(peaks, mode, cfg.sigma0_nm)]
            out.write(json.dumps(line, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "spectrum"


def cmd_render_plot(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(args.data, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                name = str(obj.get("id", f"line-{lineno}"))
                if obj.get("spectrum") is not None:
                    spectrum = obj["spectrum"]
                elif obj.get("peaks") is not None:
                    spectrum = render(PeakSet.from_list(obj["peaks"]), args.mode)
                else:
                    raise DatasetError("line has neither spectrum nor peaks", line=lineno)
                svg = spectrum_svg(spectrum, title=name)
            except (json.JSONDecodeError, AttributeError) as exc:
                raise DatasetError(f"bad record ({exc})", line=lineno) from exc
            except SpectrumError as exc:
                raise DatasetError(str(exc), line=lineno) from exc
            (out_dir / f"{_safe_name(name)}.svg").write_text(svg, encoding="utf-8")
            n += 1
    print(f"wrote {n} plot(s) to {out_dir}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "synth-data": cmd_synth_data,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "render-plot": cmd_render_plot,
}


def main(argv=None) -> int:
    threads = os.environ.get("ECD_PEAKFORMER_THREADS")
    try:
        args = build_parser().parse_args(argv)
        if threads:
            try:
                torch.set_num_threads(max(1, int(threads)))
            except ValueError:
                raise UsageError(f"ECD_PEAKFORMER_THREADS must be an integer, got {threads!r}") from None
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, EmbeddingError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, ParseError, SpectrumError, LabelError, GeometryError,
            FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
