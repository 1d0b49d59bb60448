"""Turn annotated recordings into labeled imagery trials and train/test splits.

Class mapping follows the public motor-imagery run protocol: in runs 4/8/12
cue T1 means left fist (class 0) and T2 right fist (class 1); in runs 6/10/14
T1 means both fists (class 2) and T2 both feet (class 3). T0 marks rest and is
discarded. Windows are cropped from cue onset at a fixed length; the split is
stratified per (subject, class) with z-score statistics computed on the train
partition only.
"""

from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import dataclass

import numpy as np

from .autodiff import substream
from .edf import EdfError, EegRecording, parse_edf

log = logging.getLogger(__name__)

CLASS_NAMES = ("left fist", "right fist", "both fists", "both feet")

# Raw time points per subject in the reference dataset; used as an ingest-time
# sanity check (warning on mismatch), not a hard requirement.
EXPECTED_SAMPLES_PER_SUBJECT = 255_680

RUN_FILE_RE = re.compile(r"^(S\d{3})R(\d{2})\.edf$")


class DataError(Exception):
    """Trial extraction or split constraint violated."""


@dataclass(frozen=True)
class TaskSpec:
    """Window length plus the (run kind, cue code) -> class mapping."""

    window_len: int = 640
    expected_rate: float = 160.0
    runs_left_right: tuple = (4, 8, 12)
    runs_fists_feet: tuple = (6, 10, 14)

    @property
    def runs(self) -> tuple:
        return tuple(sorted(self.runs_left_right + self.runs_fists_feet))

    def classes_for_run(self, run: int) -> dict:
        if run in self.runs_left_right:
            return {"T1": 0, "T2": 1}
        if run in self.runs_fists_feet:
            return {"T1": 2, "T2": 3}
        raise DataError(f"run {run} is not an imagery run (expected one of {self.runs})")


@dataclass(eq=False)
class LabeledExample:
    window: np.ndarray  # (channels, window_len) physical or normalized values
    label: int
    subject_id: str


@dataclass(eq=False)
class DatasetSplit:
    train: list
    test: list
    mean: np.ndarray  # per-channel, from train only
    std: np.ndarray
    seed: int

    @property
    def n_channels(self) -> int:
        return self.mean.shape[0]


def build_trials(rec: EegRecording, task: TaskSpec, run: int):
    """One LabeledExample per cue annotation whose window fits the signal.

    T0 (rest) annotations are skipped; unknown codes are an error; windows
    running past the end of the recording are dropped with a counted warning.
    """
    cue_class = task.classes_for_run(run)
    if rec.channels and rec.sample_rate != task.expected_rate:
        raise DataError(
            f"{rec.subject_id}: sampling rate {rec.sample_rate:g} Hz differs from "
            f"the configured {task.expected_rate:g} Hz")
    out = []
    dropped = 0
    rate = task.expected_rate
    for ann in rec.annotations:
        if ann.label == "T0":
            continue
        if ann.label not in cue_class:
            raise DataError(
                f"{rec.subject_id} run {run}: unknown annotation code {ann.label!r}")
        start = int(round(ann.onset * rate))
        stop = start + task.window_len
        if start < 0 or stop > rec.n_samples:
            dropped += 1
            continue
        out.append(LabeledExample(
            window=np.array(rec.samples[:, start:stop], dtype=np.float64),
            label=cue_class[ann.label],
            subject_id=rec.subject_id))
    if dropped:
        log.warning("%s run %d: dropped %d trial(s) whose %d-sample window "
                    "exceeds the signal", rec.subject_id, run, dropped, task.window_len)
    return out


def split_normalize(examples, ratio: float, seed: int) -> DatasetSplit:
    """Stratified seeded split plus per-channel z-scoring from train stats.

    Within each (subject, class) stratum the test share is
    floor(n * (1 - ratio)); the remainder stays in train.
    """
    if not examples:
        raise DataError("cannot split an empty example list")
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")

    strata = {}
    for i, ex in enumerate(examples):
        strata.setdefault((ex.subject_id, ex.label), []).append(i)

    train_idx, test_idx = [], []
    for key in sorted(strata):
        idxs = strata[key]
        if len(idxs) < 2:
            raise DataError(
                f"stratum subject={key[0]} class={key[1]} has only "
                f"{len(idxs)} example(s); need at least 2 to split")
        rng = substream(seed, "split", key[0], key[1])
        perm = rng.permutation(len(idxs))
        # Epsilon guard so e.g. 10 * (1 - 0.8) floors to 2, not 1.
        n_test = math.floor(len(idxs) * (1.0 - ratio) + 1e-9)
        test_idx.extend(idxs[p] for p in perm[:n_test])
        train_idx.extend(idxs[p] for p in perm[n_test:])
    train_idx.sort()
    test_idx.sort()

    stacked = np.stack([examples[i].window for i in train_idx])  # (N, C, L)
    mean = stacked.mean(axis=(0, 2))
    std = stacked.std(axis=(0, 2))
    if (std == 0).any():
        raise DataError("constant channel in train partition; cannot z-score")

    def norm(i):
        ex = examples[i]
        w = (ex.window - mean[:, None]) / std[:, None]
        return LabeledExample(window=w, label=ex.label, subject_id=ex.subject_id)

    return DatasetSplit(train=[norm(i) for i in train_idx],
                        test=[norm(i) for i in test_idx],
                        mean=mean, std=std, seed=seed)


def discover_runs(root, subjects, task: TaskSpec):
    """Map subject id -> sorted [(run, path)] for that subject's run files."""
    try:
        names = sorted(os.listdir(root))
    except FileNotFoundError:
        raise DataError(f"dataset root does not exist: {root}") from None
    found = {s: [] for s in subjects}
    wanted = set(task.runs)
    for name in names:
        m = RUN_FILE_RE.match(name)
        if not m:
            continue
        subj, run = m.group(1), int(m.group(2))
        if subj in found and run in wanted:
            found[subj].append((run, os.path.join(root, name)))
    for s, runs in found.items():
        if not runs:
            raise DataError(f"no imagery run files for subject {s} under {root}")
    return found


def list_subjects(root):
    """All subject ids with at least one run file under root, sorted."""
    try:
        names = os.listdir(root)
    except FileNotFoundError:
        raise DataError(f"dataset root does not exist: {root}") from None
    subs = {m.group(1) for name in names if (m := RUN_FILE_RE.match(name))}
    return sorted(subs)


def ingest_directory(root, subjects, task: TaskSpec):
    """Parse every imagery run of the given subjects into labeled examples.

    Also runs the per-subject raw-sample sanity check against the reference
    dataset size (warning only: the figure depends on which runs are ingested).
    """
    examples = []
    for subj, runs in sorted(discover_runs(root, subjects, task).items()):
        raw_samples = 0
        for run, path in sorted(runs):
            with open(path, "rb") as f:
                data = f.read()
            try:
                rec = parse_edf(data, subject_id=subj)
            except EdfError as e:
                err = EdfError(f"{path}: {e}")
                err.offset = e.offset
                raise err from None
            raw_samples += rec.n_samples
            examples.extend(build_trials(rec, task, run))
        if raw_samples != EXPECTED_SAMPLES_PER_SUBJECT:
            log.warning("%s: %d raw samples across ingested runs (reference "
                        "dataset has %d per subject)", subj, raw_samples,
                        EXPECTED_SAMPLES_PER_SUBJECT)
    return examples
