"""Continual-learning orchestration: baseline training, per-chunk unknown
discovery, clustering, head growth, retraining, and report export."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as config_mod
from .benchmark import BenchmarkSpec, make_benchmark
from .clustering import ClusterSelection, select_k
from .detection import FlowDetector, binarize, route
from .exceptions import DataError, MissingArtifactError
from .flowdata import Dataset, ingest_csv, round_half_up, split
from .identification import OTHER, FlowIdentifier, ForgettingWarning, ReplayStore, cluster_labels
from .metrics import MetricReport
from .textenc import FlowTextEncoder

logger = logging.getLogger(__name__)


def stage_name(n_chunks: int) -> str:
    return "+".join(["baseline"] + [f"chunk{i}" for i in range(1, n_chunks + 1)])


def identifier_labels(y, known, registry=()) -> np.ndarray:
    """Known families and registered labels keep their name; anything else is ``0_other``."""
    keep = set(known) | set(registry)
    return np.asarray([v if v in keep else OTHER for v in map(str, y)], dtype=object)


def load_data(cfg) -> tuple[Dataset, list[Dataset]]:
    d = cfg["data"]
    if d["source"] == "synthetic":
        syn = dict(d["synthetic"])
        if syn.get("seed") is None:
            syn["seed"] = config_mod.derive_seed(cfg["seed"], "synthetic")
        return make_benchmark(BenchmarkSpec.from_dict(syn))
    base = ingest_csv(d["baseline_path"], label_column=d["label_column"])
    chunks = [ingest_csv(p, label_column=d["label_column"]) for p in d["chunk_paths"]]
    return base, chunks


@dataclass
class ChunkRun:
    chunk_id: int
    n_flows: int
    route: dict
    pool_size: int
    selection: ClusterSelection | None
    new_labels: list[str]
    cluster_sizes: dict[str, int]
    pre: MetricReport
    post: MetricReport
    detector_recall: float | None
    contingency: dict[str, dict[str, int]] = field(default_factory=dict)
    retrain: dict | None = None
    note: str = ""

    @property
    def expanded(self) -> bool:
        return bool(self.new_labels)

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "n_flows": self.n_flows,
            "route": self.route,
            "pool_size": self.pool_size,
            "chosen_k": self.selection.chosen_k if self.selection else 0,
            "new_labels": list(self.new_labels),
            "cluster_sizes": dict(self.cluster_sizes),
            "detector_recall": self.detector_recall,
            "contingency": self.contingency,
            "retrain": self.retrain,
            "pre": self.pre.to_dict(),
            "post": self.post.to_dict(),
            "note": self.note,
        }


@dataclass
class StageRecord:
    """Everything the report bundle needs for one stage."""

    name: str
    metrics: dict
    silhouette: dict
    embeddings: np.ndarray
    emb_meta: dict[str, np.ndarray]

    @property
    def report(self) -> MetricReport:
        return MetricReport.from_dict(self.metrics["identifier"])


@dataclass
class PipelineState:
    cfg: dict
    text_encoder: FlowTextEncoder | None = None
    detector: FlowDetector | None = None
    identifier: FlowIdentifier | None = None
    replay: ReplayStore | None = None
    train_ids: np.ndarray | None = None
    train_y: np.ndarray | None = None
    test_ids: np.ndarray | None = None
    test_y: np.ndarray | None = None
    eval_ids: np.ndarray | None = None
    eval_y: np.ndarray | None = None
    eval_source: np.ndarray | None = None
    detector_report: MetricReport | None = None
    history: list[StageRecord] = field(default_factory=list)
    chunk_runs: list[ChunkRun] = field(default_factory=list)
    snapshots: dict[str, FlowIdentifier] = field(default_factory=dict)

    def seed(self, name: str) -> int:
        return config_mod.derive_seed(self.cfg["seed"], name)

    @property
    def n_chunks(self) -> int:
        return len(self.chunk_runs)

    # -- persistence
    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.json").write_text(json.dumps(self.cfg, indent=2, sort_keys=True) + "\n")
        if self.text_encoder is not None:
            self.text_encoder.save(d / "textenc")
        if self.detector is not None:
            self.detector.save(d / "detector.pt")
        if self.identifier is not None:
            self.identifier.save(d / "identifier.pt")
        if self.replay is not None:
            self.replay.save(d / "replay.npz")
        arrays = {k: getattr(self, k) for k in ("train_ids", "train_y", "test_ids", "test_y", "eval_ids",
                                                  "eval_y", "eval_source") if getattr(self, k) is not None}
        with open(d / "data.npz", "wb") as fh:
            np.savez(fh, **{k: (v.astype(str) if v.dtype == object else v) for k, v in arrays.items()})
        meta = {
            "detector_report": self.detector_report.to_dict() if self.detector_report else None,
            "chunk_runs": [c.to_dict() for c in self.chunk_runs],
            "history": [{"name": h.name, "metrics": h.metrics, "silhouette": h.silhouette} for h in self.history],
        }
        (d / "state.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        with open(d / "embeddings.npz", "wb") as fh:
            np.savez(fh, **{f"{i}.emb": h.embeddings for i, h in enumerate(self.history)},
                     **{f"{i}.{k}": v.astype(str) for i, h in enumerate(self.history) for k, v in h.emb_meta.items()})
        return d

    @classmethod
    def load(cls, directory, cfg=None) -> "PipelineState":
        d = Path(directory)
        if not (d / "config.json").is_file():
            raise MissingArtifactError(f"no pipeline state in {d}")
        stored = json.loads((d / "config.json").read_text())
        state = cls(cfg if cfg is not None else stored)
        if (d / "textenc").is_dir():
            state.text_encoder = FlowTextEncoder.load(d / "textenc")
        if (d / "detector.pt").is_file():
            state.detector = FlowDetector.load(d / "detector.pt")
        if (d / "identifier.pt").is_file():
            state.identifier = FlowIdentifier.load(d / "identifier.pt")
            state.identifier.history_ = []
        if (d / "replay.npz").is_file():
            state.replay = ReplayStore.load(d / "replay.npz")
        if (d / "data.npz").is_file():
            with np.load(d / "data.npz", allow_pickle=False) as z:
                for k in z.files:
                    v = z[k]
                    setattr(state, k, v.astype(object) if v.dtype.kind == "U" else v)
        if (d / "state.json").is_file():
            meta = json.loads((d / "state.json").read_text())
            if meta["detector_report"]:
                state.detector_report = MetricReport.from_dict(meta["detector_report"])
            state.chunk_runs = [_chunk_from_dict(c) for c in meta["chunk_runs"]]
            with np.load(d / "embeddings.npz", allow_pickle=False) as z:
                for i, h in enumerate(meta["history"]):
                    emb_meta = {k.split(".", 1)[1]: z[k].astype(object) for k in z.files
                                if k.startswith(f"{i}.") and not k.endswith(".emb")}
                    state.history.append(StageRecord(h["name"], h["metrics"], h["silhouette"], z[f"{i}.emb"],
                                                     emb_meta))
        return state


def _chunk_from_dict(d) -> ChunkRun:
    return ChunkRun(d["chunk_id"], d["n_flows"], d["route"], d["pool_size"], None, d["new_labels"],
                    d["cluster_sizes"], MetricReport.from_dict(d["pre"]), MetricReport.from_dict(d["post"]),
                    d["detector_recall"], d["contingency"], d["retrain"], d["note"])


def _model_params(cfg) -> dict:
    e = cfg["encoder"]
    return dict(n_layers=e["n_layers"], d_model=e["d_model"], n_heads=e["n_heads"], d_ff=e["d_ff"],
                dropout=e["dropout"], dtype=e["dtype"])


# ---------------------------------------------------------------------------
# stages


def train_detector_stage(cfg, baseline: Dataset | None = None) -> PipelineState:
    """Split the baseline, fit the text encoder and the binary detector."""
    state = PipelineState(copy.deepcopy(cfg))
    if baseline is None:
        baseline, _ = load_data(cfg)
    d = cfg["data"]
    missing = [k for k in d["known_attacks"] if k not in baseline.class_counts]
    if missing:
        raise DataError(f"known attack(s) {missing} absent from the baseline data")
    train_ds, test_ds = split(baseline, d["train_frac"], state.seed("split"))
    t = cfg["textenc"]
    enc = FlowTextEncoder(t["bins_per_feature"], t["token_width"], t["salt"], tuple(t["hash_token_features"]),
                          t["vocab_size"], t["max_len"]).fit(train_ds)
    state.text_encoder = enc
    state.train_ids, state.train_y = enc.transform(train_ds), train_ds.y.astype(object)
    state.test_ids, state.test_y = enc.transform(test_ds), test_ds.y.astype(object)
    dc = cfg["detector"]
    state.detector = FlowDetector(
        vocab_size=enc.n_tokens, pad_id=enc.pad_id, benign_label=d["benign_label"], threshold=dc["threshold"],
        learning_rate=dc["learning_rate"], batch_size=dc["batch_size"], epochs=dc["epochs"],
        class_weight=dc["class_weight"], seed=state.seed("detector"), **_model_params(cfg),
    ).fit(state.train_ids, state.train_y)
    state.detector_report = evaluate_detector(state.detector, state.test_ids, state.test_y, d["benign_label"])
    logger.info("detector recall %.4f", state.detector_report.per_class["malicious"]["recall"])
    return state


def evaluate_detector(detector: FlowDetector, ids, y, benign_label="Benign") -> MetricReport:
    return MetricReport.from_predictions(binarize(y, benign_label), detector.predict(ids),
                                         labels=["benign", "malicious"], stage="detector")


def train_identifier_stage(state: PipelineState) -> PipelineState:
    """Route the baseline train split, train the identifier, fill replay,
    and record the baseline stage."""
    if state.detector is None or state.text_encoder is None:
        raise MissingArtifactError("the detector stage has not been run")
    cfg = state.cfg
    known = cfg["data"]["known_attacks"]
    r = route(state.detector, state.train_ids, cfg["routing"]["forward_frac"], state.seed("route.baseline"))
    idx = r.forwarded
    X, y = state.train_ids[idx], identifier_labels(state.train_y[idx], known)
    ic, inc = cfg["identifier"], cfg["incremental"]
    enc = state.text_encoder
    state.identifier = FlowIdentifier(
        vocab_size=enc.n_tokens, pad_id=enc.pad_id, labels=[OTHER, *known],
        unknown_threshold=ic["unknown_threshold"], learning_rate=ic["learning_rate"],
        batch_size=ic["batch_size"], epochs=ic["epochs"], class_weight=ic["class_weight"],
        seed=state.seed("identifier"), retrain_epochs=inc["retrain_epochs"],
        encoder_lr_scale=inc["encoder_lr_scale"], forgetting_budget=inc["forgetting_budget"],
        retrain_mode=inc["mode"], **_model_params(cfg),
    ).fit(X, y, init_encoder=state.detector.model_ if ic["share_encoder"] else None)
    state.replay = ReplayStore(inc["replay_per_class"], state.seed("replay"))
    state.replay.add(X, y)
    state.eval_ids = state.test_ids
    state.eval_y = identifier_labels(state.test_y, known)
    state.eval_source = np.full(len(state.eval_y), "baseline", dtype=object)
    state.chunk_runs = []
    state.history = []
    report = state.identifier.evaluate(state.eval_ids, state.eval_y, stage="baseline")
    metrics = {
        "stage": "baseline",
        "identifier": report.to_dict(),
        "detector": state.detector_report.to_dict(),
        "route": r.to_dict(),
        "registry": state.identifier.registry_.to_dict(),
    }
    state.history.append(_stage_record(state, "baseline", metrics, {}))
    return state


def run_baseline(cfg, baseline: Dataset | None = None):
    """``(detector, identifier, MetricReport)`` plus the full state."""
    state = train_identifier_stage(train_detector_stage(cfg, baseline))
    return state.detector, state.identifier, state.history[-1].report, state


def _holdout(labels: np.ndarray, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for lbl in sorted(set(labels)):
        idx = np.flatnonzero(labels == lbl)
        idx = idx[rng.permutation(len(idx))]
        n_test = 0 if len(idx) < 2 else min(max(round_half_up(frac * len(idx)), 1), len(idx) - 1)
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(test, dtype=np.int64))


def run_chunk(state: PipelineState, chunk: Dataset, chunk_id: int | None = None) -> ChunkRun:
    """One continual-learning step. Mutates ``state``."""
    if state.identifier is None or state.replay is None:
        raise MissingArtifactError("the identifier stage has not been run")
    cfg = state.cfg
    inc, cl = cfg["incremental"], cfg["clustering"]
    chunk_id = state.n_chunks + 1 if chunk_id is None else chunk_id
    tag = f"chunk{chunk_id}"
    ident = state.identifier
    state.snapshots[f"before_{tag}"] = ident.snapshot()
    pre = ident.evaluate(state.eval_ids, state.eval_y, stage="pre")

    n = len(chunk)
    if n:
        ids = state.text_encoder.transform(chunk)
        truth = chunk.y.astype(object)
        r = route(state.detector, ids, cfg["routing"]["forward_frac"], state.seed(f"route.{tag}"))
        det_recall = float(np.mean(state.detector.is_malicious(ids)[binarize(truth, cfg["data"]["benign_label"])
                                                                    == "malicious"])) \
            if np.any(binarize(truth, cfg["data"]["benign_label"]) == "malicious") else None
        fwd = r.forwarded
        pool = ident.collect_unknowns(ids[fwd], truth[fwd])
        route_info = r.to_dict()
    else:
        det_recall, route_info, pool = None, {}, None
    pool_size = 0 if pool is None else len(pool)

    if pool_size < inc["min_pool"]:
        note = f"pool of {pool_size} is below min_pool={inc['min_pool']}; no expansion"
        logger.info(note)
        run = ChunkRun(chunk_id, n, route_info, pool_size, None, [], {}, pre, pre, det_recall, note=note)
        state.chunk_runs.append(run)
        _record_chunk_stage(state, run, pool=None, cluster=None)
        return run

    k_hi = min(cl["k_max"], pool_size - 1)
    sel = select_k(pool.embeddings, range(cl["k_min"], k_hi + 1), seed=state.seed(f"cluster.{tag}"),
                   subsample_cap=cl["subsample_cap"], n_init=cl["n_init"], tol=cl["tol"], max_iter=cl["max_iter"])
    comp = sel.model.predict(pool.embeddings)
    # name clusters by decreasing size (ties: component index)
    sizes = np.bincount(comp, minlength=sel.chosen_k)
    order = sorted(range(sel.chosen_k), key=lambda c: (-sizes[c], c))
    names = cluster_labels(chunk_id, sel.chosen_k)
    rename = {c: names[i] for i, c in enumerate(order)}
    pseudo = np.asarray([rename[c] for c in comp], dtype=object)

    tr, te = _holdout(pseudo, inc["holdout_frac"], state.seed(f"holdout.{tag}"))
    old_eval = (state.eval_ids, state.eval_y)
    ident.expand_head(names, source=tag)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ForgettingWarning)
        ident.retrain_incremental(pool.ids[tr], pseudo[tr], state.replay, eval_set=old_eval,
                                  seed=state.seed(f"retrain.{tag}"))
    for w in caught:
        logger.warning("%s", w.message)
    state.replay.add(pool.ids[tr], pseudo[tr])
    state.eval_ids = np.concatenate([state.eval_ids, pool.ids[te]])
    state.eval_y = np.concatenate([state.eval_y, pseudo[te]])
    state.eval_source = np.concatenate([state.eval_source, np.full(len(te), tag, dtype=object)])
    post = ident.evaluate(state.eval_ids, state.eval_y, stage=stage_name(chunk_id))

    contingency: dict[str, dict[str, int]] = {}
    for p_lbl, t_lbl in zip(pseudo, pool.truth):
        row = contingency.setdefault(p_lbl, {})
        row[str(t_lbl)] = row.get(str(t_lbl), 0) + 1
    contingency = {k: dict(sorted(v.items())) for k, v in sorted(contingency.items())}
    retrain = ident.history_[-1].to_dict() if ident.history_ else None
    run = ChunkRun(chunk_id, n, route_info, pool_size, sel, names,
                   {lbl: int((pseudo == lbl).sum()) for lbl in names}, pre, post, det_recall, contingency, retrain)
    state.chunk_runs.append(run)
    _record_chunk_stage(state, run, pool=pool, cluster=pseudo)
    return run


def _record_chunk_stage(state, run: ChunkRun, pool, cluster):
    name = stage_name(run.chunk_id)
    metrics = {
        "stage": name,
        "identifier": run.post.to_dict(),
        "detector": state.detector_report.to_dict(),
        "chunk": run.to_dict(),
        "registry": state.identifier.registry_.to_dict(),
    }
    sil = run.selection.to_dict() if run.selection is not None else {}
    state.history.append(_stage_record(state, name, metrics, sil, pool, cluster))


def _stage_record(state, name, metrics, silhouette, pool=None, cluster=None) -> StageRecord:
    cap = state.cfg["report"]["max_embeddings"]
    n = len(state.eval_ids)
    idx = np.arange(n)
    if n > cap:
        idx = np.sort(np.random.default_rng(state.seed(f"embeddings.{name}")).choice(n, cap, replace=False))
    pred, _, emb = state.identifier.predict_with_embeddings(state.eval_ids[idx])
    meta = {
        "source": np.asarray(["eval"] * len(idx), dtype=object),
        "label": state.eval_y[idx],
        "predicted": pred,
        "origin": state.eval_source[idx],
    }
    embs = [emb]
    if pool is not None:
        embs.append(pool.embeddings)
        meta = {
            "source": np.concatenate([meta["source"], np.full(len(pool), "pool", dtype=object)]),
            "label": np.concatenate([meta["label"], cluster]),
            "predicted": np.concatenate([meta["predicted"], np.full(len(pool), OTHER, dtype=object)]),
            "origin": np.concatenate([meta["origin"], pool.truth.astype(object)]),
        }
    return StageRecord(name, metrics, silhouette, np.concatenate(embs).astype(np.float64), meta)


def run_all(cfg, keep_snapshots: bool = False) -> PipelineState:
    baseline, chunks = load_data(cfg)
    state = train_identifier_stage(train_detector_stage(cfg, baseline))
    for i, chunk in enumerate(chunks, 1):
        run_chunk(state, chunk, i)
    if not keep_snapshots:
        state.snapshots.clear()
    return state


# ---------------------------------------------------------------------------
# report bundle

METRIC_COLUMNS = ("stage", "n", "accuracy", "macro_accuracy", "macro_precision", "macro_recall", "macro_f1",
                  "micro_precision", "micro_recall", "micro_f1", "detector_recall", "n_classes")


def metrics_table(history) -> list[dict]:
    rows = []
    for h in history:
        r = h.metrics["identifier"]
        det = h.metrics["detector"]["per_class"]["malicious"]["recall"]
        rows.append({
            "stage": h.name, "n": r["n"], "accuracy": r["accuracy"],
            "macro_accuracy": r["macro"]["accuracy"], "macro_precision": r["macro"]["precision"],
            "macro_recall": r["macro"]["recall"], "macro_f1": r["macro"]["f1"],
            "micro_precision": r["micro"]["precision"], "micro_recall": r["micro"]["recall"],
            "micro_f1": r["micro"]["f1"], "detector_recall": det, "n_classes": len(r["per_class"]),
        })
    return rows


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in columns)])
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def export_report(state: PipelineState, out_dir) -> Path:
    """Write ``report/`` under ``out_dir``. Output is a pure function of the
    state, so re-exporting gives byte-identical files."""
    if not state.history:
        raise ValueError("no completed stage to export")
    root = Path(out_dir) / "report"
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write report to {root}: {exc}") from exc
    for h in state.history:
        d = root / f"stage_{h.name}"
        d.mkdir(exist_ok=True)
        (d / "metrics.json").write_text(_dump(h.metrics))
        cm = MetricReport.from_dict(h.metrics["identifier"]).confusion
        (d / "confusion.csv").write_text(cm.to_csv())
        (d / "silhouette.json").write_text(_dump(h.silhouette))
        dim = h.embeddings.shape[1] if h.embeddings.ndim == 2 else 0
        cols = ["source", "label", "predicted", "origin"] + [f"e{j:02d}" for j in range(dim)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(h.embeddings)):
            w.writerow([h.emb_meta[c][i] for c in cols[:4]] + [repr(float(v)) for v in h.embeddings[i]])
        (d / "embeddings.csv").write_text(buf.getvalue())
    (root / "metrics_by_stage.csv").write_text(_csv(metrics_table(state.history), METRIC_COLUMNS))
    (root / "run.json").write_text(_dump({
        "config": state.cfg,
        "config_hash": config_mod.config_hash(state.cfg),
        "stages": [h.name for h in state.history],
    }))
    return root
