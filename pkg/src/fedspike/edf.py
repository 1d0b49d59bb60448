"""EDF/EDF+ reading and writing.

Layout: 256-byte fixed header, 256 bytes of per-signal header fields per
signal, then fixed-size data records of little-endian int16 samples. EDF+
annotations live in an 'EDF Annotations' signal as time-stamped annotation
lists (TALs): ``onset[\\x15duration]\\x14label\\x14...\\x00``.

The parser converts digital to physical values exactly once and never reads
past declared record boundaries; malformed or truncated input raises EdfError
with a byte offset where known. The writer inverts the scaling (rounding to
the original digital integers), so parse -> write -> parse is an identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ANNOTATION_LABEL = "EDF Annotations"


class EdfError(Exception):
    """Structured parse/encode failure, with byte offset when known."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


@dataclass
class ChannelInfo:
    label: str
    transducer: str = ""
    phys_dim: str = "uV"
    phys_min: float = -500.0
    phys_max: float = 500.0
    dig_min: int = -2048
    dig_max: int = 2047
    prefilter: str = ""
    samples_per_record: int = 160

    @property
    def scale(self) -> float:
        return (self.phys_max - self.phys_min) / (self.dig_max - self.dig_min)

    @property
    def offset(self) -> float:
        return self.phys_min - self.scale * self.dig_min


@dataclass
class Annotation:
    onset: float
    duration: float
    label: str


@dataclass(eq=False)
class EegRecording:
    """One parsed multichannel recording with physical samples.

    All signal channels share one sampling rate; `samples` is
    (n_channels, n_records * samples_per_record) in physical units.
    """

    subject_id: str = ""
    version: str = "0"
    patient: str = ""
    recording: str = ""
    startdate: str = "01.01.00"
    starttime: str = "00.00.00"
    reserved: str = "EDF+C"
    record_duration: float = 1.0
    n_records: int = 0
    channels: list = field(default_factory=list)
    samples: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    annotations: list = field(default_factory=list)
    ann_samples_per_record: int | None = None

    @property
    def sample_rate(self) -> float:
        if not self.channels:
            return 0.0
        return self.channels[0].samples_per_record / self.record_duration

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1] if self.samples.size else 0

    def __eq__(self, other):
        if not isinstance(other, EegRecording):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.version == other.version
            and self.patient == other.patient
            and self.recording == other.recording
            and self.startdate == other.startdate
            and self.starttime == other.starttime
            and self.record_duration == other.record_duration
            and self.n_records == other.n_records
            and self.channels == other.channels
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
            and self.annotations == other.annotations
            and self.ann_samples_per_record == other.ann_samples_per_record
        )


# ---------------------------------------------------------------------------
# Parsing


def _ascii(data: bytes, start: int, length: int, what: str) -> str:
    chunk = data[start:start + length]
    if len(chunk) < length:
        raise EdfError(f"header truncated in field '{what}'", offset=start)
    try:
        return chunk.decode("ascii").strip()
    except UnicodeDecodeError:
        return chunk.decode("latin-1").strip()


def _int(data, start, length, what) -> int:
    text = _ascii(data, start, length, what)
    try:
        return int(text)
    except ValueError:
        raise EdfError(f"malformed integer field '{what}': {text!r}", offset=start) from None


def _float(data, start, length, what) -> float:
    text = _ascii(data, start, length, what)
    try:
        return float(text)
    except ValueError:
        raise EdfError(f"malformed number field '{what}': {text!r}", offset=start) from None


def parse_edf(data: bytes, subject_id: str = "") -> EegRecording:
    """Parse EDF/EDF+ bytes into an EegRecording.

    Rejects mixed signal sampling rates, inconsistent record counts, and
    truncated records. Annotations are decoded from the EDF+ annotation
    channel when present and returned sorted by onset.
    """
    try:
        return _parse_edf(data, subject_id)
    except EdfError:
        raise
    except Exception as exc:  # malformed input must never escape as a raw crash
        raise EdfError(f"malformed EDF stream: {exc}") from exc


def _parse_edf(data: bytes, subject_id: str) -> EegRecording:
    if len(data) < 256:
        raise EdfError(f"file shorter than the 256-byte header ({len(data)} bytes)")

    version = _ascii(data, 0, 8, "version")
    patient = _ascii(data, 8, 80, "patient")
    recording = _ascii(data, 88, 80, "recording")
    startdate = _ascii(data, 168, 8, "startdate")
    starttime = _ascii(data, 176, 8, "starttime")
    header_bytes = _int(data, 184, 8, "header bytes")
    reserved = _ascii(data, 192, 44, "reserved")
    n_records = _int(data, 236, 8, "record count")
    record_duration = _float(data, 244, 8, "record duration")
    ns = _int(data, 252, 4, "signal count")

    if ns < 1:
        raise EdfError(f"signal count must be >= 1, got {ns}", offset=252)
    expect_header = 256 * (ns + 1)
    if header_bytes != expect_header:
        raise EdfError(
            f"header byte count {header_bytes} inconsistent with {ns} signals "
            f"(expected {expect_header})", offset=184)
    if len(data) < expect_header:
        raise EdfError(f"signal header truncated ({len(data)} < {expect_header} bytes)",
                       offset=len(data))

    def sig_field(pos, width, conv, what):
        base = 256 + pos * ns
        out = []
        for i in range(ns):
            out.append(conv(data, base + i * width, width, f"{what}[{i}]"))
        return out

    # Per-signal arrays are stored field-major: all labels, all transducers, ...
    offs = [0, 16 * ns, 96 * ns, 104 * ns, 112 * ns, 120 * ns, 128 * ns, 136 * ns, 216 * ns]
    labels = [_ascii(data, 256 + offs[0] + i * 16, 16, f"label[{i}]") for i in range(ns)]
    transducers = [_ascii(data, 256 + offs[1] + i * 80, 80, f"transducer[{i}]") for i in range(ns)]
    phys_dims = [_ascii(data, 256 + offs[2] + i * 8, 8, f"phys_dim[{i}]") for i in range(ns)]
    phys_mins = [_float(data, 256 + offs[3] + i * 8, 8, f"phys_min[{i}]") for i in range(ns)]
    phys_maxs = [_float(data, 256 + offs[4] + i * 8, 8, f"phys_max[{i}]") for i in range(ns)]
    dig_mins = [_int(data, 256 + offs[5] + i * 8, 8, f"dig_min[{i}]") for i in range(ns)]
    dig_maxs = [_int(data, 256 + offs[6] + i * 8, 8, f"dig_max[{i}]") for i in range(ns)]
    prefilters = [_ascii(data, 256 + offs[7] + i * 80, 80, f"prefilter[{i}]") for i in range(ns)]
    sprs = [_int(data, 256 + offs[8] + i * 8, 8, f"samples_per_record[{i}]") for i in range(ns)]

    for i, spr in enumerate(sprs):
        if spr < 1:
            raise EdfError(f"samples_per_record[{i}] must be >= 1, got {spr}")

    record_size = 2 * sum(sprs)
    body = len(data) - expect_header
    if n_records == -1:
        if body % record_size:
            raise EdfError("cannot infer record count: trailing partial record",
                           offset=expect_header + (body // record_size) * record_size)
        n_records = body // record_size
    if n_records < 0:
        raise EdfError(f"record count must be >= 0, got {n_records}", offset=236)
    if body < n_records * record_size:
        raise EdfError(
            f"truncated data records: {body} bytes for {n_records} records "
            f"of {record_size} bytes", offset=len(data))
    if body > n_records * record_size:
        raise EdfError(
            f"inconsistent record count: {body - n_records * record_size} trailing bytes",
            offset=expect_header + n_records * record_size)

    ann_idx = [i for i in range(ns) if labels[i] == ANNOTATION_LABEL]
    sig_idx = [i for i in range(ns) if labels[i] != ANNOTATION_LABEL]

    if sig_idx:
        if record_duration <= 0:
            raise EdfError(f"record duration must be > 0, got {record_duration}", offset=244)
        rates = {sprs[i] for i in sig_idx}
        if len(rates) > 1:
            raise EdfError(f"mixed sampling rates unsupported: {sorted(rates)} samples/record")

    channels = []
    for i in sig_idx:
        if dig_maxs[i] <= dig_mins[i]:
            raise EdfError(f"digital range empty for signal {i}: "
                           f"[{dig_mins[i]}, {dig_maxs[i]}]")
        if phys_maxs[i] == phys_mins[i]:
            raise EdfError(f"physical range empty for signal {i}")
        channels.append(ChannelInfo(
            label=labels[i], transducer=transducers[i], phys_dim=phys_dims[i],
            phys_min=phys_mins[i], phys_max=phys_maxs[i],
            dig_min=dig_mins[i], dig_max=dig_maxs[i],
            prefilter=prefilters[i], samples_per_record=sprs[i]))

    # Slice the body once as a (records, bytes) grid, then pull each signal's
    # column block in a single vectorized pass.
    sig_offsets = np.concatenate([[0], np.cumsum([2 * s for s in sprs])])
    spr = sprs[sig_idx[0]] if sig_idx else 0
    samples = np.zeros((len(sig_idx), n_records * spr))
    grid = np.frombuffer(data, dtype=np.uint8, count=n_records * record_size,
                         offset=expect_header).reshape(n_records, record_size)
    for ci, i in enumerate(sig_idx):
        start = int(sig_offsets[i])
        raw = np.ascontiguousarray(grid[:, start:start + 2 * spr]).view("<i2")
        ch = channels[ci]
        samples[ci] = raw.reshape(-1) * ch.scale + ch.offset
    ann_payload = []
    for i in ann_idx:
        start = int(sig_offsets[i])
        block = grid[:, start:start + 2 * sprs[i]]
        for r in range(n_records):
            ann_payload.append(block[r].tobytes())

    annotations = []
    for chunk in ann_payload:
        annotations.extend(_decode_tals(chunk))
    annotations.sort(key=lambda a: a.onset)

    return EegRecording(
        subject_id=subject_id, version=version, patient=patient, recording=recording,
        startdate=startdate, starttime=starttime, reserved=reserved,
        record_duration=record_duration, n_records=n_records,
        channels=channels, samples=samples, annotations=annotations,
        ann_samples_per_record=sprs[ann_idx[0]] if ann_idx else None)


def _decode_tals(chunk: bytes):
    """Decode one record's TAL payload; record-keeping TALs (no label) are
    dropped, real annotations are kept."""
    out = []
    for tal in chunk.split(b"\x00"):
        if not tal:
            continue
        parts = tal.split(b"\x14")
        head = parts[0]
        if not head:
            continue
        if b"\x15" in head:
            onset_b, dur_b = head.split(b"\x15", 1)
        else:
            onset_b, dur_b = head, b""
        try:
            onset = float(onset_b.decode("ascii"))
            duration = float(dur_b.decode("ascii")) if dur_b else 0.0
        except (ValueError, UnicodeDecodeError):
            raise EdfError(f"malformed TAL timestamp: {head!r}") from None
        for label_b in parts[1:]:
            if not label_b:
                continue
            out.append(Annotation(onset=onset, duration=duration,
                                  label=label_b.decode("latin-1")))
    return out


# ---------------------------------------------------------------------------
# Writing


def _fit_ascii(text: str, width: int, what: str) -> bytes:
    b = text.encode("latin-1")
    if len(b) > width:
        raise EdfError(f"field '{what}' longer than {width} bytes: {text!r}")
    return b.ljust(width)


def _fit_number(value, width: int, what: str) -> bytes:
    if float(value) == int(value):
        text = str(int(value))
    else:
        text = repr(float(value))
        if len(text) > width:
            for fmt in ("%.6g", "%.5g", "%.4g", "%.3g"):
                text = fmt % value
                if len(text) <= width and float(text) == float(value):
                    break
            else:
                raise EdfError(f"cannot represent {what}={value!r} in {width} ascii bytes")
    return _fit_ascii(text, width, what)


def _format_onset(t: float) -> str:
    text = repr(float(t)) if t != int(t) else str(int(t))
    return text if text.startswith("-") else "+" + text


def write_edf(rec: EegRecording) -> bytes:
    """Serialize a recording back to EDF/EDF+ bytes.

    Physical samples are re-quantized with the stored per-channel scaling;
    for a recording produced by parse_edf this recovers the original digital
    integers exactly.
    """
    n_sig = len(rec.channels)
    has_ann = rec.ann_samples_per_record is not None or bool(rec.annotations)
    if rec.n_records and n_sig:
        expect = rec.n_records * rec.channels[0].samples_per_record
        if rec.n_samples != expect:
            raise EdfError(f"sample count {rec.n_samples} != records*spr {expect}")

    ann_records = []
    ann_spr = rec.ann_samples_per_record or 0
    if has_ann:
        if rec.n_records == 0 and rec.annotations:
            raise EdfError("annotations present but record count is 0")
        buckets = [[] for _ in range(rec.n_records)]
        for ann in rec.annotations:
            idx = int(ann.onset // rec.record_duration) if rec.record_duration > 0 else 0
            buckets[min(max(idx, 0), rec.n_records - 1)].append(ann)
        payloads = []
        for r, bucket in enumerate(buckets):
            tal = _format_onset(r * rec.record_duration).encode("ascii") + b"\x14\x14\x00"
            for ann in bucket:
                for ch in ("\x00", "\x14", "\x15"):
                    if ch in ann.label:
                        raise EdfError(f"annotation label contains reserved byte: {ann.label!r}")
                tal += _format_onset(ann.onset).encode("ascii")
                if ann.duration:
                    tal += b"\x15" + repr(float(ann.duration)).encode("ascii")
                tal += b"\x14" + ann.label.encode("latin-1") + b"\x14\x00"
            payloads.append(tal)
        need = max((len(p) + 1) // 2 for p in payloads) if payloads else 1
        ann_spr = max(rec.ann_samples_per_record or 0, need)
        ann_records = [p.ljust(2 * ann_spr, b"\x00") for p in payloads]

    ns = n_sig + (1 if has_ann else 0)
    header = bytearray()
    header += _fit_ascii(rec.version, 8, "version")
    header += _fit_ascii(rec.patient, 80, "patient")
    header += _fit_ascii(rec.recording, 80, "recording")
    header += _fit_ascii(rec.startdate, 8, "startdate")
    header += _fit_ascii(rec.starttime, 8, "starttime")
    header += _fit_number(256 * (ns + 1), 8, "header bytes")
    header += _fit_ascii(rec.reserved, 44, "reserved")
    header += _fit_number(rec.n_records, 8, "record count")
    header += _fit_number(rec.record_duration, 8, "record duration")
    header += _fit_number(ns, 4, "signal count")

    infos = list(rec.channels)
    if has_ann:
        infos = infos + [ChannelInfo(label=ANNOTATION_LABEL, phys_dim="",
                                     phys_min=-1.0, phys_max=1.0,
                                     dig_min=-32768, dig_max=32767,
                                     samples_per_record=ann_spr)]
    for ch in infos:
        header += _fit_ascii(ch.label, 16, "label")
    for ch in infos:
        header += _fit_ascii(ch.transducer, 80, "transducer")
    for ch in infos:
        header += _fit_ascii(ch.phys_dim, 8, "phys_dim")
    for ch in infos:
        header += _fit_number(ch.phys_min, 8, "phys_min")
    for ch in infos:
        header += _fit_number(ch.phys_max, 8, "phys_max")
    for ch in infos:
        header += _fit_number(ch.dig_min, 8, "dig_min")
    for ch in infos:
        header += _fit_number(ch.dig_max, 8, "dig_max")
    for ch in infos:
        header += _fit_ascii(ch.prefilter, 80, "prefilter")
    for ch in infos:
        header += _fit_number(ch.samples_per_record, 8, "samples_per_record")
    for ch in infos:
        header += _fit_ascii("", 32, "reserved2")

    body = bytearray()
    digital = []
    for ci, ch in enumerate(rec.channels):
        d = np.rint((rec.samples[ci] - ch.offset) / ch.scale)
        if (d < ch.dig_min).any() or (d > ch.dig_max).any():
            raise EdfError(f"channel '{ch.label}' samples outside digital range "
                           f"[{ch.dig_min}, {ch.dig_max}] after quantization")
        digital.append(d.astype("<i2"))
    for r in range(rec.n_records):
        for ci, ch in enumerate(rec.channels):
            spr = ch.samples_per_record
            body += digital[ci][r * spr:(r + 1) * spr].tobytes()
        if has_ann:
            body += ann_records[r]

    return bytes(header) + bytes(body)


# ---------------------------------------------------------------------------
# Inspection


def describe(rec: EegRecording) -> str:
    """Structured text summary: header fields, channel table, annotation
    histogram. Backs the `inspect` CLI path."""
    lines = [
        f"version       {rec.version}",
        f"patient       {rec.patient}",
        f"recording     {rec.recording}",
        f"start         {rec.startdate} {rec.starttime}",
        f"records       {rec.n_records} x {rec.record_duration}s",
        f"channels      {len(rec.channels)} signal"
        + (f" + 1 annotation ({rec.ann_samples_per_record} samples/record)"
           if rec.ann_samples_per_record else ""),
        f"sample rate   {rec.sample_rate:g} Hz",
        f"samples/ch    {rec.n_samples}",
        "",
        f"{'idx':>3}  {'label':<16} {'dim':<6} {'phys range':<22} {'dig range':<15} spr",
    ]
    for i, ch in enumerate(rec.channels):
        lines.append(
            f"{i:>3}  {ch.label:<16} {ch.phys_dim:<6} "
            f"[{ch.phys_min:g}, {ch.phys_max:g}]".ljust(51)
            + f"[{ch.dig_min}, {ch.dig_max}]".ljust(16)
            + f"{ch.samples_per_record}")
    lines.append("")
    hist = {}
    for ann in rec.annotations:
        hist[ann.label] = hist.get(ann.label, 0) + 1
    lines.append(f"annotations   {len(rec.annotations)}")
    for label in sorted(hist):
        lines.append(f"  {label:<12} {hist[label]}")
    return "\n".join(lines) + "\n"
