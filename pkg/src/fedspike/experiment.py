"""End-to-end orchestration: ingest cache, per-method training, comparison.

Everything written to disk is deterministic: repr-formatted floats, sorted
JSON keys, no wall-clock values. Two runs with the same config and dataset
produce byte-identical metric logs, checkpoints, and reports; timing only
ever goes to the logger.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile

import numpy as np

from . import __version__
from .autodiff import load_checkpoint, save_checkpoint
from .config import MODEL_KINDS, ConfigError, ExperimentConfig
from .dataset import (CLASS_NAMES, DataError, DatasetSplit, LabeledExample,
                      TaskSpec, discover_runs, ingest_directory, list_subjects,
                      split_normalize)
from .energy import compute_wsp, count_ops, estimate_energy, format_report
from .federated import partition_by_subject, run_rounds, server_test_set
from .models import evaluate, make_model
from .synthetic import write_subject_runs

log = logging.getLogger(__name__)

INGEST_DIR = "ingest"
CACHE_ARRAYS = ("train_windows", "train_labels", "test_windows",
                "test_labels", "mean", "std")


def canon_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def atomic_write(path, data) -> None:
    """Write bytes/str to path via a same-directory temp file + rename."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def resolve_subjects(cfg: ExperimentConfig, root=None) -> list:
    """Configured subject ids, or the first n_subjects found under root."""
    if cfg.subjects is not None:
        return list(cfg.subjects)
    found = list_subjects(root if root is not None else cfg.data_root)
    if len(found) < cfg.n_subjects:
        raise DataError(f"found {len(found)} subject(s) under "
                        f"{cfg.data_root}, need {cfg.n_subjects}")
    return found[:cfg.n_subjects]


def dataset_digest(root, subjects, task: TaskSpec) -> str:
    """sha256 over the run files (name + content) this experiment reads."""
    h = hashlib.sha256()
    for subj, runs in sorted(discover_runs(root, subjects, task).items()):
        for run, path in sorted(runs):
            with open(path, "rb") as f:
                content = f.read()
            h.update(os.path.basename(path).encode())
            h.update(hashlib.sha256(content).digest())
    return h.hexdigest()


def generate_synthetic(cfg: ExperimentConfig) -> list:
    """Write seeded surrogate recordings for the configured subjects."""
    subjects = (list(cfg.subjects) if cfg.subjects is not None
                else [f"S{i:03d}" for i in range(1, cfg.n_subjects + 1)])
    paths = write_subject_runs(cfg.data_root, subjects, cfg.seed)
    log.info("wrote %d synthetic run files under %s", len(paths),
             cfg.data_root)
    return subjects


def _cache_digest(ingest_dir, meta_core: dict) -> str:
    h = hashlib.sha256()
    h.update(canon_json(meta_core).encode())
    for name in CACHE_ARRAYS:
        with open(os.path.join(ingest_dir, f"{name}.npy"), "rb") as f:
            h.update(f.read())
    return h.hexdigest()


def run_ingest(cfg: ExperimentConfig) -> dict:
    """Parse, window, split, normalize; persist the result as an array cache.

    Returns a summary dict: subjects, per-subject-per-class counts, digests.
    """
    task = TaskSpec(window_len=cfg.window_len)
    subjects = resolve_subjects(cfg)
    source_digest = dataset_digest(cfg.data_root, subjects, task)
    examples = ingest_directory(cfg.data_root, subjects, task)
    split = split_normalize(examples, cfg.split_ratio, cfg.seed)

    counts = {s: {name: {"train": 0, "test": 0} for name in CLASS_NAMES}
              for s in subjects}
    for part, exs in (("train", split.train), ("test", split.test)):
        for ex in exs:
            counts[ex.subject_id][CLASS_NAMES[ex.label]][part] += 1

    ingest_dir = os.path.join(cfg.out_dir, INGEST_DIR)
    os.makedirs(ingest_dir, exist_ok=True)
    arrays = {
        "train_windows": np.stack([e.window for e in split.train]),
        "train_labels": np.array([e.label for e in split.train], np.int64),
        "test_windows": np.stack([e.window for e in split.test]),
        "test_labels": np.array([e.label for e in split.test], np.int64),
        "mean": split.mean,
        "std": split.std,
    }
    for name, arr in arrays.items():
        np.save(os.path.join(ingest_dir, f"{name}.npy"), arr)
    meta_core = {
        "version": __version__,
        "seed": cfg.seed,
        "subjects": subjects,
        "split_ratio": cfg.split_ratio,
        "window_len": cfg.window_len,
        "source_digest": source_digest,
        "train_subjects": [e.subject_id for e in split.train],
        "test_subjects": [e.subject_id for e in split.test],
        "counts": counts,
    }
    meta = dict(meta_core, cache_digest=_cache_digest(ingest_dir, meta_core))
    atomic_write(os.path.join(ingest_dir, "meta.json"), canon_json(meta))
    log.info("ingested %d train / %d test examples from %d subject(s)",
             len(split.train), len(split.test), len(subjects))
    return {"subjects": subjects, "counts": counts,
            "n_train": len(split.train), "n_test": len(split.test),
            "source_digest": source_digest,
            "cache_digest": meta["cache_digest"]}


def load_split(cfg: ExperimentConfig):
    """Rebuild the DatasetSplit from the ingest cache; returns (split, meta)."""
    ingest_dir = os.path.join(cfg.out_dir, INGEST_DIR)
    meta_path = os.path.join(ingest_dir, "meta.json")
    if not os.path.exists(meta_path):
        raise DataError(f"no ingest cache under {ingest_dir}; "
                        f"run the ingest command first")
    with open(meta_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    mismatches = [
        name for name, got, want in (
            ("seed", meta.get("seed"), cfg.seed),
            ("split_ratio", meta.get("split_ratio"), cfg.split_ratio),
            ("window_len", meta.get("window_len"), cfg.window_len))
        if got != want]
    if mismatches:
        raise ConfigError(
            f"ingest cache under {ingest_dir} was built with different "
            f"settings ({', '.join(mismatches)}); re-run ingest")
    arrays = {name: np.load(os.path.join(ingest_dir, f"{name}.npy"))
              for name in CACHE_ARRAYS}
    train = [LabeledExample(window=w, label=int(y), subject_id=s)
             for w, y, s in zip(arrays["train_windows"],
                                arrays["train_labels"],
                                meta["train_subjects"])]
    test = [LabeledExample(window=w, label=int(y), subject_id=s)
            for w, y, s in zip(arrays["test_windows"], arrays["test_labels"],
                               meta["test_subjects"])]
    split = DatasetSplit(train=train, test=test, mean=arrays["mean"],
                         std=arrays["std"], seed=meta["seed"])
    return split, meta


def _method_dir(cfg: ExperimentConfig, kind: str) -> str:
    return os.path.join(cfg.out_dir, kind)


def build_model_for(cfg: ExperimentConfig, kind: str, n_channels: int):
    in_ch, win = cfg.model_io_shape(kind, n_channels)
    return make_model(kind, arch=cfg.arch, lif=cfg.lif, in_channels=in_ch,
                      window_len=win, gain=cfg.gains[kind])


def metrics_text(results) -> str:
    """Columnar round log: per-client train loss rows plus the global row."""
    lines = ["round\tclient\tloss\taccuracy"]
    for r in results:
        for cid in sorted(r.client_losses):
            lines.append(f"{r.round_index}\t{cid}\t"
                         f"{r.client_losses[cid]!r}\tnan")
        lines.append(f"{r.round_index}\tglobal\t{r.test_loss!r}\t"
                     f"{r.test_accuracy!r}")
    return "\n".join(lines) + "\n"


def train_method(cfg: ExperimentConfig, kind: str) -> dict:
    """Federated training for one method; writes metrics, checkpoint, manifest.

    Returns a summary dict (final accuracy, file paths).
    """
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown method {kind!r}; pick from {MODEL_KINDS}")
    split, meta = load_split(cfg)
    cache_digest = _cache_digest(os.path.join(cfg.out_dir, INGEST_DIR),
                                 {k: meta[k] for k in meta
                                  if k != "cache_digest"})
    if cache_digest != meta["cache_digest"]:
        raise DataError("ingest cache content changed since it was written; "
                        "re-run ingest")

    model = build_model_for(cfg, kind, split.n_channels)
    params = model.init_params(cfg.seed)
    clients = partition_by_subject(split)
    test_windows, test_labels = server_test_set(split)
    encoder = cfg.encoder if kind == "snn" else None

    def on_round(result, updates):
        log.info("%s round %d/%d: test acc %.4f, test loss %.4f (%.0f ms)",
                 kind, result.round_index + 1, cfg.rounds,
                 result.test_accuracy, result.test_loss, result.duration_ms)

    results, final_params = run_rounds(
        clients, model, params, test_windows, test_labels, cfg.rounds,
        tc=cfg.train, encoder=encoder, on_round=on_round)

    method_dir = _method_dir(cfg, kind)
    os.makedirs(method_dir, exist_ok=True)
    atomic_write(os.path.join(method_dir, "metrics.tsv"),
                 metrics_text(results))
    save_checkpoint(final_params, os.path.join(method_dir, "checkpoint.txt"))
    manifest = {
        "version": __version__,
        "status": "complete",
        "method": kind,
        "config": cfg.param_snapshot(),
        "dataset_digest": meta["source_digest"],
        "cache_digest": meta["cache_digest"],
        "clients": [c.client_id for c in clients],
        "files": {"metrics": "metrics.tsv", "checkpoint": "checkpoint.txt"},
        "final_test_accuracy": results[-1].test_accuracy,
    }
    atomic_write(os.path.join(method_dir, "manifest.json"),
                 canon_json(manifest))
    return {"method": kind, "rounds": cfg.rounds,
            "final_test_accuracy": results[-1].test_accuracy,
            "metrics": os.path.join(method_dir, "metrics.tsv"),
            "checkpoint": os.path.join(method_dir, "checkpoint.txt"),
            "manifest": os.path.join(method_dir, "manifest.json")}


def read_manifest(cfg: ExperimentConfig, kind: str) -> dict:
    path = os.path.join(_method_dir(cfg, kind), "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"missing run manifest for {kind!r} ({path}); "
            f"run: train --method {kind}")
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("status") != "complete":
        raise DataError(f"{path}: run did not complete "
                        f"(status {manifest.get('status')!r})")
    return manifest


def accuracy_curve(cfg: ExperimentConfig, kind: str, manifest: dict) -> list:
    """Per-round global test accuracy strings from a method's metrics log."""
    path = os.path.join(_method_dir(cfg, kind), manifest["files"]["metrics"])
    curve = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        for line in f:
            row = dict(zip(header, line.rstrip("\n").split("\t")))
            if row["client"] == "global":
                curve.append((int(row["round"]), row["accuracy"]))
    return curve


def run_compare(cfg: ExperimentConfig) -> dict:
    """Score all three trained methods: accuracy, energy, WSP, curve data."""
    split, meta = load_split(cfg)
    test_windows, test_labels = server_test_set(split)

    manifests = {kind: read_manifest(cfg, kind) for kind in MODEL_KINDS}
    digests = {m["dataset_digest"] for m in manifests.values()}
    digests.add(meta["source_digest"])
    if len(digests) != 1:
        raise ConfigError("the trained runs and the ingest cache do not all "
                          "come from the same dataset; re-run the pipeline")

    rows, wsp_inputs = [], []
    for kind in MODEL_KINDS:
        model = build_model_for(cfg, kind, split.n_channels)
        params = load_checkpoint(
            os.path.join(_method_dir(cfg, kind),
                         manifests[kind]["files"]["checkpoint"]))
        encoder = cfg.encoder if kind == "snn" else None
        _, acc, stats = evaluate(model, params, test_windows, test_labels,
                                 encoder, batch_size=cfg.train.batch)
        counts = count_ops(model, stats)
        energy = estimate_energy(counts, cfg.energy)
        rows.append(dict(method=kind, accuracy=acc, energy=energy,
                         macs=counts.macs, acs=counts.acs))
        wsp_inputs.append((kind, acc, energy))
        log.info("%s: accuracy %.4f, energy %.4e J", kind, acc, energy)

    report = compute_wsp(wsp_inputs)
    text = format_report(rows, report, cfg.energy)

    curves = {kind: accuracy_curve(cfg, kind, manifests[kind])
              for kind in MODEL_KINDS}
    lengths = {len(c) for c in curves.values()}
    if len(lengths) != 1:
        raise ConfigError(f"methods were trained for different round counts "
                          f"{sorted(lengths)}; re-train with a common config")
    curve_lines = ["round\t" + "\t".join(MODEL_KINDS)]
    for i in range(len(curves[MODEL_KINDS[0]])):
        rnd = curves[MODEL_KINDS[0]][i][0]
        curve_lines.append(f"{rnd}\t" + "\t".join(
            curves[kind][i][1] for kind in MODEL_KINDS))

    report_json = {
        "config": cfg.param_snapshot(),
        "dataset_digest": meta["source_digest"],
        "methods": [dict(method=r["method"], accuracy=r["accuracy"],
                         energy_joules=r["energy"], macs=r["macs"],
                         acs=r["acs"], wsp=report.wsp(r["method"]))
                    for r in rows],
        "wsp_ratios": report.ratios,
        "best": report.best(),
    }
    atomic_write(os.path.join(cfg.out_dir, "report.txt"), text)
    atomic_write(os.path.join(cfg.out_dir, "report.json"),
                 canon_json(report_json))
    atomic_write(os.path.join(cfg.out_dir, "curves.tsv"),
                 "\n".join(curve_lines) + "\n")
    return {"rows": rows, "report": report, "text": text,
            "files": {name: os.path.join(cfg.out_dir, name) for name in
                      ("report.txt", "report.json", "curves.tsv")}}
