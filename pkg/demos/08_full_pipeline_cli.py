"""
The whole pipeline through the command-line interface
=====================================================

Generates a synthetic corpus, ingests it, trains the three methods
federatedly for a few rounds, and emits the comparison report — exactly
what `fedspike ingest/train/compare` do from a shell, but driven
in-process so this script works anywhere the package is installed.

A short run with a small architecture: expect rough accuracies, the
point here is the artifact flow. The acceptance-scale run uses the
config defaults (full architecture, 60 rounds) instead.
"""

import json
import pathlib
import tempfile

from fedspike.cli import main

base = pathlib.Path(tempfile.mkdtemp(prefix="fedspike_demo_"))
config = {
    "seed": 7,
    "data_root": str(base / "data"),
    "out_dir": str(base / "out"),
    "dataset": {"n_subjects": 3, "window_len": 320},
    "model": {"conv": [[4, 3, 8], [8, 5, 4]], "fc": [64],
              "lstm_hidden": 8, "lstm_layers": 1},
    "federated": {"rounds": 6},
}
cfg = base / "config.json"
cfg.write_text(json.dumps(config, indent=2))
print("config at", cfg)

steps = [
    ["ingest", "-c", str(cfg), "--synthetic"],
    ["train", "-c", str(cfg), "--method", "snn"],
    ["train", "-c", str(cfg), "--method", "cnn"],
    ["train", "-c", str(cfg), "--method", "lstm"],
    ["compare", "-c", str(cfg)],
]
for argv in steps:
    print(f"\n$ fedspike {' '.join(argv)}")
    code = main(argv)
    assert code == 0, f"step failed with exit code {code}"

print("\nartifacts under", base / "out")
for p in sorted((base / "out").rglob("*")):
    if p.is_file():
        print("  ", p.relative_to(base / "out"))
