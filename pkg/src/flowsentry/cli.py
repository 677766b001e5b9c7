"""Command-line entry point.

Every subcommand prints exactly one JSON line on stdout and logs to stderr.
Trained state lives under ``<out>/artifacts/<config-hash>/`` next to the
resolved ``config.json``, so a checkpoint is never reused with a config it
was not built from.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import pipeline
from .benchmark import BenchmarkSpec, make_benchmark
from .exceptions import CheckpointError, ConfigError, DataError, FlowSentryError, MissingArtifactError
from .flowdata import ingest_csv, write_csv, write_manifest

logger = logging.getLogger("flowsentry")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA = 0, 1, 2, 3, 4


def artifact_dir(out, cfg) -> Path:
    return Path(out) / "artifacts" / config_mod.config_hash(cfg)


def _load_state(out, cfg, need: str) -> pipeline.PipelineState:
    d = artifact_dir(out, cfg)
    if not (d / "config.json").is_file():
        raise MissingArtifactError(f"no artifacts for this config in {d}; run the earlier stages first")
    state = pipeline.PipelineState.load(d, cfg)
    if need == "detector" and state.detector is None:
        raise MissingArtifactError(f"{d} holds no detector; run train_detector first")
    if need == "identifier" and state.identifier is None:
        raise MissingArtifactError(f"{d} holds no identifier; run train_identifier first")
    return state


def _summary_metrics(report) -> dict:
    d = report.to_dict()
    return {"stage": d["stage"], "n": d["n"], "accuracy": d["accuracy"], "macro": d["macro"], "micro": d["micro"]}


# -- subcommands ------------------------------------------------------------


def cmd_ingest(args, cfg) -> dict:
    if not args.input:
        raise ConfigError("ingest needs --input")
    ds = ingest_csv(args.input, label_column=args.label_column or cfg["data"]["label_column"])
    out = Path(args.out) / "data"
    name = Path(args.input).stem
    write_csv(ds, out / f"{name}.csv")
    write_manifest(ds, out / f"{name}.manifest.json")
    return {"command": "ingest", "path": str(out / f"{name}.csv"), "n": len(ds), "class_counts": ds.class_counts}


def cmd_synth(args, cfg) -> dict:
    syn = dict(cfg["data"]["synthetic"])
    if syn.get("seed") is None:
        syn["seed"] = config_mod.derive_seed(cfg["seed"], "synthetic")
    base, chunks = make_benchmark(BenchmarkSpec.from_dict(syn))
    out = Path(args.out) / "data"
    files = {}
    for name, ds in [("baseline", base)] + [(f"chunk{i}", c) for i, c in enumerate(chunks, 1)]:
        files[name] = str(write_csv(ds, out / f"{name}.csv"))
        write_manifest(ds, out / f"{name}.manifest.json")
    return {"command": "synth", "files": files, "seed": syn["seed"],
            "counts": {"baseline": base.class_counts, **{f"chunk{i}": c.class_counts for i, c in enumerate(chunks, 1)}}}


def cmd_train_detector(args, cfg) -> dict:
    state = pipeline.train_detector_stage(cfg)
    d = state.save(artifact_dir(args.out, cfg))
    return {"command": "train_detector", "artifacts": str(d), "detector": _summary_metrics(state.detector_report)}


def cmd_train_identifier(args, cfg) -> dict:
    state = pipeline.train_identifier_stage(_load_state(args.out, cfg, "detector"))
    d = state.save(artifact_dir(args.out, cfg))
    return {"command": "train_identifier", "artifacts": str(d), "identifier": _summary_metrics(state.history[-1].report)}


def cmd_run_chunk(args, cfg) -> dict:
    state = _load_state(args.out, cfg, "identifier")
    chunk_id = args.chunk or state.n_chunks + 1
    if chunk_id != state.n_chunks + 1:
        raise ConfigError(f"chunk {chunk_id} requested but the next chunk is {state.n_chunks + 1}")
    _, chunks = pipeline.load_data(cfg)
    if chunk_id > len(chunks):
        raise DataError(f"chunk {chunk_id} does not exist; the data has {len(chunks)} chunk(s)")
    run = pipeline.run_chunk(state, chunks[chunk_id - 1], chunk_id)
    d = state.save(artifact_dir(args.out, cfg))
    return {"command": "run_chunk", "artifacts": str(d), "chunk_id": chunk_id, "pool_size": run.pool_size,
            "chosen_k": run.selection.chosen_k if run.selection else 0, "new_labels": run.new_labels,
            "identifier": _summary_metrics(run.post)}


def cmd_run_all(args, cfg) -> dict:
    state = pipeline.run_all(cfg)
    d = state.save(artifact_dir(args.out, cfg))
    report = pipeline.export_report(state, args.out)
    return {"command": "run_all", "artifacts": str(d), "report": str(report),
            "stages": pipeline.metrics_table(state.history)}


def cmd_eval(args, cfg) -> dict:
    state = _load_state(args.out, cfg, "detector" if args.model == "detector" else "identifier")
    if args.data:
        ds = ingest_csv(args.data, label_column=args.label_column or cfg["data"]["label_column"])
        ids, y = state.text_encoder.transform(ds), ds.y
    else:
        ids, y = state.test_ids, state.test_y
    if args.model == "detector":
        report = pipeline.evaluate_detector(state.detector, ids, y, cfg["data"]["benign_label"])
    else:
        ident = state.identifier
        labels = pipeline.identifier_labels(y, cfg["data"]["known_attacks"], ident.registry_.labels)
        report = ident.evaluate(ids, labels, stage="eval")
    return {"command": "eval", "model": args.model, "report": report.to_dict()}


def cmd_export(args, cfg) -> dict:
    state = _load_state(args.out, cfg, "identifier")
    root = pipeline.export_report(state, args.out)
    return {"command": "export", "report": str(root), "stages": [h.name for h in state.history]}


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train_detector": cmd_train_detector,
    "train_identifier": cmd_train_identifier,
    "run_chunk": cmd_run_chunk,
    "run_all": cmd_run_all,
    "eval": cmd_eval,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML run config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, repeatable")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="root seed; overrides the config")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="flowsentry", description="Continual flow-based intrusion detection.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("ingest", "eval"):
            p.add_argument("--label-column")
        if name == "ingest":
            p.add_argument("--input", required=True, help="CSV file to ingest")
        if name == "run_chunk":
            p.add_argument("--chunk", type=int, help="1-based chunk id (default: next)")
        if name == "eval":
            p.add_argument("--model", choices=("identifier", "detector"), default="identifier")
            p.add_argument("--data", help="labelled CSV (default: the baseline test split)")
    return parser


def _setup_logging(args):
    level = logging.ERROR if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                              logging.INFO if args.verbose else logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    try:
        cfg = config_mod.resolve(args.config, args.overrides, args.seed)
        result = COMMANDS[args.command](args, cfg)
        result["config_hash"] = config_mod.config_hash(cfg)
        code = EXIT_OK
    except ConfigError as exc:
        result, code = {"error": "config", "message": str(exc)}, EXIT_CONFIG
    except (MissingArtifactError, CheckpointError) as exc:
        result, code = {"error": "missing_artifact", "message": str(exc)}, EXIT_MISSING
    except DataError as exc:
        result, code = {"error": "data", "message": str(exc)}, EXIT_DATA
    except (FlowSentryError, OSError, ValueError) as exc:
        result, code = {"error": type(exc).__name__, "message": str(exc)}, EXIT_OTHER
    if code:
        logger.error("%s", result["message"])
    print(json.dumps(result, sort_keys=True, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
