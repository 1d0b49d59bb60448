"""
EDF files: write, read back, and break on purpose
=================================================

Builds a two-channel recording with cue annotations, serializes it to
EDF+ bytes, parses it back bit-faithfully, and then corrupts the header
to show the parser's byte-offset diagnostics.
"""

import numpy as np

from fedspike.edf import (Annotation, ChannelInfo, EdfError, EegRecording,
                          describe, parse_edf, write_edf)

rng = np.random.default_rng(42)

channels = [
    ChannelInfo(label="EEG C3", samples_per_record=160),
    ChannelInfo(label="EEG C4", samples_per_record=160),
]
n_records = 4
samples = np.zeros((2, n_records * 160))
for c, ch in enumerate(channels):
    digital = rng.integers(ch.dig_min, ch.dig_max + 1, size=samples.shape[1])
    samples[c] = digital * ch.scale + ch.offset  # representable physical values

rec = EegRecording(
    subject_id="S999",
    channels=channels,
    samples=samples,
    n_records=n_records,
    annotations=[Annotation(onset=0.0, duration=1.0, label="T0"),
                 Annotation(onset=1.5, duration=2.0, label="T1")],
)

raw = write_edf(rec)
print(f"serialized {len(raw)} bytes")
parsed = parse_edf(raw, subject_id="S999")
print(describe(parsed))
print("round trip equal:",
      parsed == parse_edf(write_edf(parsed), subject_id="S999"))

# Stomp on the header's record-count field and watch the error point at it.
broken = bytearray(raw)
broken[236:244] = b"banana  "
try:
    parse_edf(bytes(broken))
except EdfError as e:
    print("as expected:", e)
