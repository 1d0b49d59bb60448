"""Synthetic motor-imagery EEG recordings written as genuine EDF+ files.

Produces per-subject run files following the public motor-imagery dataset
conventions: S###R##.edf naming, 64 EEG channels at 160 Hz, an annotation
channel carrying T0 (rest) / T1 / T2 cue markers, and the run-number
convention where runs 4/8/12 cue left-vs-right fist and runs 6/10/14 cue
both-fists-vs-both-feet.

Each imagery class gets a fixed spatial amplitude pattern and a class
frequency, superimposed on background noise during cue periods, so the
classes are separable from channel statistics but not trivially so.
Generation is fully determined by (master seed, subject, run).
"""

from __future__ import annotations

import os

import numpy as np

from .autodiff import substream
from .edf import Annotation, ChannelInfo, EegRecording, write_edf

SAMPLE_RATE = 160.0
RUNS_LEFT_RIGHT = (4, 8, 12)
RUNS_FISTS_FEET = (6, 10, 14)
IMAGERY_RUNS = tuple(sorted(RUNS_LEFT_RIGHT + RUNS_FISTS_FEET))

CLASS_FREQS = (9.0, 11.0, 13.0, 15.0)  # Hz, one oscillation band per class
CUE_SECONDS = 4.2
REST_SECONDS = 2.0
CUES_PER_RUN = 15

# 64-channel montage labels as they appear in the public dataset's headers.
CHANNEL_LABELS = [
    "Fc5.", "Fc3.", "Fc1.", "Fcz.", "Fc2.", "Fc4.", "Fc6.",
    "C5..", "C3..", "C1..", "Cz..", "C2..", "C4..", "C6..",
    "Cp5.", "Cp3.", "Cp1.", "Cpz.", "Cp2.", "Cp4.", "Cp6.",
    "Fp1.", "Fpz.", "Fp2.", "Af7.", "Af3.", "Afz.", "Af4.", "Af8.",
    "F7..", "F5..", "F3..", "F1..", "Fz..", "F2..", "F4..", "F6..", "F8..",
    "Ft7.", "Ft8.", "T7..", "T8..", "T9..", "T10.",
    "Tp7.", "Tp8.", "P7..", "P5..", "P3..", "P1..", "Pz..",
    "P2..", "P4..", "P6..", "P8..", "Po7.", "Po3.", "Poz.", "Po4.", "Po8.",
    "O1..", "Oz..", "O2..", "Iz..",
]


def class_patterns(master_seed: int, n_channels: int = 64) -> np.ndarray:
    """Per-class spatial amplitude pattern, shape (4, n_channels).

    Shared across subjects (the task structure is common); unit RMS per class.
    """
    rng = substream(master_seed, "synthetic", "patterns")
    pat = rng.normal(size=(4, n_channels))
    return pat / np.sqrt(np.mean(pat ** 2, axis=1, keepdims=True))


def cue_schedule(run: int, rng: np.random.Generator):
    """Alternating rest/cue annotation schedule for one run.

    Returns (annotations, total_seconds). Cue codes are a shuffled balanced
    mix of T1/T2; every cue lasts CUE_SECONDS so a 4.0 s window always fits.
    """
    codes = ["T1"] * ((CUES_PER_RUN + 1) // 2) + ["T2"] * (CUES_PER_RUN // 2)
    codes = [codes[i] for i in rng.permutation(len(codes))]
    anns = []
    t = 0.0
    for code in codes:
        anns.append(Annotation(onset=t, duration=REST_SECONDS, label="T0"))
        t += REST_SECONDS
        anns.append(Annotation(onset=t, duration=CUE_SECONDS, label=code))
        t += CUE_SECONDS
    anns.append(Annotation(onset=t, duration=REST_SECONDS, label="T0"))
    t += REST_SECONDS
    return anns, t


def synth_run_recording(subject_id: str, run: int, master_seed: int,
                        n_channels: int = 64) -> EegRecording:
    """Build one synthetic run as an in-memory recording."""
    if run in RUNS_LEFT_RIGHT:
        cue_class = {"T1": 0, "T2": 1}
    elif run in RUNS_FISTS_FEET:
        cue_class = {"T1": 2, "T2": 3}
    else:
        raise ValueError(f"run {run} is not an imagery run {IMAGERY_RUNS}")

    rng = substream(master_seed, "data", subject_id, run)
    anns, total_s = cue_schedule(run, rng)
    n_records = int(round(total_s))
    n = int(n_records * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE

    x = rng.normal(scale=22.0, size=(n_channels, n))
    x += rng.normal(scale=3.0, size=(n_channels, 1))  # per-run channel offsets
    # Weak common background rhythm so rest periods are not pure noise.
    x += 6.0 * np.sin(2 * np.pi * 10.0 * t + rng.uniform(0, 2 * np.pi))

    pats = class_patterns(master_seed, n_channels)
    for ann in anns:
        if ann.label == "T0":
            continue
        k = cue_class[ann.label]
        i0 = int(round(ann.onset * SAMPLE_RATE))
        i1 = min(n, int(round((ann.onset + ann.duration) * SAMPLE_RATE)))
        tt = t[i0:i1]
        amp = 35.0 * rng.uniform(0.8, 1.2)
        phase = rng.uniform(0, 2 * np.pi)
        x[:, i0:i1] += amp * pats[k][:, None] * np.sin(
            2 * np.pi * CLASS_FREQS[k] * tt + phase)

    np.clip(x, -499.0, 499.0, out=x)
    channels = [
        ChannelInfo(label=CHANNEL_LABELS[c % len(CHANNEL_LABELS)],
                    phys_dim="uV", phys_min=-500.0, phys_max=500.0,
                    dig_min=-2048, dig_max=2047,
                    samples_per_record=int(SAMPLE_RATE))
        for c in range(n_channels)
    ]
    return EegRecording(
        subject_id=subject_id,
        patient=f"X {subject_id}",
        recording=f"synthetic imagery run {run}",
        startdate="12.08.09", starttime="16.15.00",
        record_duration=1.0, n_records=n_records,
        channels=channels, samples=x, annotations=anns,
        ann_samples_per_record=None)


def write_subject_runs(root, subject_ids, master_seed: int,
                       runs=IMAGERY_RUNS, n_channels: int = 64):
    """Write S###R##.edf files for each subject under root; returns paths."""
    os.makedirs(root, exist_ok=True)
    paths = []
    for subject_id in subject_ids:
        for run in runs:
            rec = synth_run_recording(subject_id, run, master_seed, n_channels)
            path = os.path.join(root, f"{subject_id}R{run:02d}.edf")
            with open(path, "wb") as f:
                f.write(write_edf(rec))
            paths.append(path)
    return paths
