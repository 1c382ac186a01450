"""Readers for MIT-format WFDB records: ``.hea`` headers, format-212 signal
files and binary ``.atr`` annotation files.

Only what the MIT-BIH arrhythmia and noise stress test databases need is
supported. A small writer exists so synthetic records can be produced in the
same on-disk layout the readers consume.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = (212,)
DEFAULT_GAIN = 200.0

# annotation modifier codes
SKIP, NUM, SUB, CHN, AUX = 59, 60, 61, 62, 63

UNKNOWN_SYMBOL = "#"

# standard WFDB anntyp -> mnemonic table (ecgcodes.h)
ANNOTATION_SYMBOLS = {
    0: " ", 1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A",
    9: "S", 10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s",
    19: "T", 20: "*", 21: "D", 22: '"', 23: "=", 24: "p", 25: "B", 26: "^",
    27: "t", 28: "+", 29: "u", 30: "?", 31: "!", 32: "[", 33: "]", 34: "e",
    35: "n", 36: "@", 37: "x", 38: "f", 39: "(", 40: ")", 41: "r",
}
SYMBOL_CODES = {sym: code for code, sym in ANNOTATION_SYMBOLS.items()}

# symbols that mark a QRS complex (WFDB isqrs)
BEAT_SYMBOLS = frozenset("NLRaVFJASEj/Q?!enfrB")


class WFDBError(Exception):
    """Base class for WFDB parsing failures."""


class HeaderParseError(WFDBError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class StructureError(WFDBError):
    pass


class UnsupportedFormatError(WFDBError):
    pass


class AnnotationParseError(WFDBError):
    pass


@dataclass
class SignalSpec:
    format_code: int
    gain: float
    baseline: int
    description: str = ""
    file_name: str = ""
    byte_offset: int = 0
    units: str = "mV"
    adc_resolution: int = 12
    adc_zero: int = 0
    initial_value: int = 0
    checksum: int = 0

    def __post_init__(self):
        if self.gain <= 0:
            raise StructureError(f"gain must be positive, got {self.gain}")
        if self.format_code not in SUPPORTED_FORMATS:
            raise UnsupportedFormatError(
                f"unsupported signal format {self.format_code} "
                f"(supported: {', '.join(map(str, SUPPORTED_FORMATS))})")


@dataclass
class RecordHeader:
    record_name: str
    n_signals: int
    fs: float
    n_samples: int
    signals: list[SignalSpec] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.n_signals != len(self.signals):
            raise StructureError(
                f"header declares {self.n_signals} signals but "
                f"{len(self.signals)} signal lines were given")
        if self.fs <= 0:
            raise StructureError(f"sampling frequency must be positive, got {self.fs}")


@dataclass
class AnnotationEvent:
    sample_index: int
    symbol: str
    subtype: int = 0
    channel: int = 0
    num: int = 0
    aux: bytes | None = None

    @property
    def aux_text(self):
        """AUX payload decoded for display; lossy."""
        if self.aux is None:
            return None
        return self.aux.rstrip(b"\x00").decode("latin-1")

    @property
    def is_beat(self):
        return self.symbol in BEAT_SYMBOLS


@dataclass
class RawRecord:
    header: RecordHeader
    samples: np.ndarray  # (n_samples, n_signals) int64, ADC units
    annotations: list[AnnotationEvent] = field(default_factory=list)
    unknown_annotation_codes: int = 0

    def __post_init__(self):
        if self.samples.shape != (self.header.n_samples, self.header.n_signals):
            raise StructureError(
                f"sample matrix shape {self.samples.shape} does not match header "
                f"({self.header.n_samples}, {self.header.n_signals})")

    @property
    def name(self):
        return self.header.record_name

    def physical(self, channel=0):
        return adu_to_physical(self.samples[:, channel], self.header.signals[channel])


# ---------------------------------------------------------------------------
# header

def _parse_record_line(tokens, lineno):
    if len(tokens) < 2:
        raise HeaderParseError("record line needs at least a name and signal count", lineno)
    name = tokens[0]
    if "/" in name:
        raise HeaderParseError("multi-segment records are not supported", lineno)
    try:
        n_signals = int(tokens[1])
        fs = 250.0
        if len(tokens) > 2:
            fs = float(tokens[2].split("/")[0].split("(")[0])
        n_samples = int(tokens[3]) if len(tokens) > 3 else 0
    except ValueError as exc:
        raise HeaderParseError(f"malformed record line: {exc}", lineno) from None
    if n_signals < 0 or n_samples < 0:
        raise HeaderParseError("negative signal or sample count", lineno)
    return name, n_signals, fs, n_samples


def _parse_signal_line(tokens, lineno):
    if len(tokens) < 2:
        raise HeaderParseError("signal line needs a file name and format", lineno)
    file_name, fmt_field = tokens[0], tokens[1]
    try:
        offset = 0
        if "+" in fmt_field:
            fmt_field, off = fmt_field.split("+", 1)
            offset = int(off)
        fmt = int(fmt_field.split("x")[0].split(":")[0])

        gain, baseline, units = DEFAULT_GAIN, None, "mV"
        if len(tokens) > 2:
            gain_field = tokens[2]
            if "/" in gain_field:
                gain_field, units = gain_field.split("/", 1)
            if "(" in gain_field:
                gain_field, base = gain_field.split("(", 1)
                baseline = int(base.rstrip(")"))
            gain = float(gain_field)
            if gain == 0:
                gain = DEFAULT_GAIN
        adc_res = int(tokens[3]) if len(tokens) > 3 else 12
        adc_zero = int(tokens[4]) if len(tokens) > 4 else 0
        init = int(tokens[5]) if len(tokens) > 5 else 0
        checksum = int(tokens[6]) if len(tokens) > 6 else 0
    except ValueError as exc:
        raise HeaderParseError(f"malformed signal line: {exc}", lineno) from None
    description = " ".join(tokens[8:]) if len(tokens) > 8 else ""
    if baseline is None:
        baseline = adc_zero
    if fmt not in SUPPORTED_FORMATS:
        raise UnsupportedFormatError(f"line {lineno}: unsupported signal format {fmt}")
    return SignalSpec(format_code=fmt, gain=gain, baseline=baseline,
                      description=description, file_name=file_name,
                      byte_offset=offset, units=units, adc_resolution=adc_res,
                      adc_zero=adc_zero, initial_value=init, checksum=checksum)


def parse_header(text: str) -> RecordHeader:
    """Parse the body of a ``.hea`` file."""
    record = None
    signals = []
    comments = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        tokens = line.split()
        if record is None:
            record = _parse_record_line(tokens, lineno)
        else:
            signals.append(_parse_signal_line(tokens, lineno))
    if record is None:
        raise HeaderParseError("no record line found")
    name, n_signals, fs, n_samples = record
    return RecordHeader(record_name=name, n_signals=n_signals, fs=fs,
                        n_samples=n_samples, signals=signals, comments=comments)


def format_header(header: RecordHeader) -> str:
    lines = [f"{header.record_name} {header.n_signals} {header.fs:g} {header.n_samples}"]
    for s in header.signals:
        fmt = f"{s.format_code}" + (f"+{s.byte_offset}" if s.byte_offset else "")
        lines.append(
            f"{s.file_name} {fmt} {s.gain:g}({s.baseline})/{s.units} {s.adc_resolution} "
            f"{s.adc_zero} {s.initial_value} {s.checksum} 0 {s.description}".rstrip())
    lines.extend(f"# {c}" for c in header.comments)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# format 212

def decode_format212(data: bytes, n_samples: int, n_signals: int = 2) -> np.ndarray:
    """Unpack format-212 bytes into an ``(n_samples, n_signals)`` int64 matrix.

    Every 3 bytes hold two 12-bit two's-complement samples; samples are
    interleaved frame by frame.
    """
    total = n_samples * n_signals
    needed = math.ceil(total * 1.5)
    buf = np.frombuffer(data, dtype=np.uint8)
    if buf.size < needed:
        raise WFDBError(f"format 212 stream truncated: need {needed} bytes, got {buf.size}")
    n_groups = (total + 1) // 2
    groups = np.zeros((n_groups, 3), dtype=np.int64)
    flat = buf[: min(buf.size, n_groups * 3)].astype(np.int64)
    groups.reshape(-1)[: flat.size] = flat
    b0, b1, b2 = groups[:, 0], groups[:, 1], groups[:, 2]
    out = np.empty(n_groups * 2, dtype=np.int64)
    out[0::2] = ((b1 & 0x0F) << 8) | b0
    out[1::2] = ((b1 & 0xF0) << 4) | b2
    out[out >= 2048] -= 4096
    return out[:total].reshape(n_samples, n_signals)


def encode_format212(samples: np.ndarray) -> bytes:
    """Pack an ``(n_samples, n_signals)`` integer matrix as format 212."""
    flat = np.asarray(samples, dtype=np.int64).reshape(-1)
    if flat.size and (flat.min() < -2048 or flat.max() > 2047):
        raise ValueError("format 212 samples must lie in [-2048, 2047]")
    if flat.size % 2:
        flat = np.append(flat, 0)
    u = flat & 0xFFF
    s1, s2 = u[0::2], u[1::2]
    groups = np.empty((s1.size, 3), dtype=np.uint8)
    groups[:, 0] = s1 & 0xFF
    groups[:, 1] = ((s1 >> 8) & 0x0F) | ((s2 >> 4) & 0xF0)
    groups[:, 2] = s2 & 0xFF
    out = groups.tobytes()
    return out[: math.ceil(np.asarray(samples).size * 1.5)]


# ---------------------------------------------------------------------------
# annotations

def parse_annotations(data: bytes) -> list[AnnotationEvent]:
    """Decode an MIT-format annotation file.

    Unknown annotation codes are kept with :data:`UNKNOWN_SYMBOL` so callers
    can count and discard them.
    """
    if len(data) % 2:
        raise AnnotationParseError("annotation stream has an odd number of bytes")
    words = np.frombuffer(data, dtype="<u2")
    events: list[AnnotationEvent] = []
    time = 0
    pending_skip = False
    chan = num = 0
    i = 0
    n = words.size
    while i < n:
        w = int(words[i])
        code, payload = w >> 10, w & 0x3FF
        i += 1
        if code == 0 and payload == 0:
            if pending_skip:
                raise AnnotationParseError("SKIP not followed by an annotation before EOF")
            return events
        if code == SKIP:
            if i + 2 > n:
                raise AnnotationParseError("SKIP word truncated at end of stream")
            hi, lo = int(words[i]), int(words[i + 1])
            i += 2
            time += struct.unpack("<i", struct.pack("<I", (hi << 16) | lo))[0]
            pending_skip = True
            continue
        if code in (NUM, SUB, CHN, AUX):
            if not events or pending_skip:
                raise AnnotationParseError(
                    f"modifier code {code} at word {i - 1} has no annotation to attach to")
            last = events[-1]
            if code == NUM:
                last.num = num = payload
            elif code == SUB:
                last.subtype = payload
            elif code == CHN:
                last.channel = chan = payload
            else:
                n_words = (payload + 1) // 2
                if i + n_words > n:
                    raise AnnotationParseError("AUX payload runs past end of stream")
                last.aux = words[i:i + n_words].tobytes()[:payload]
                i += n_words
            continue
        time += payload
        if events and time < events[-1].sample_index:
            raise StructureError(
                f"annotation time went backwards ({time} < {events[-1].sample_index})")
        if time < 0:
            raise StructureError(f"negative annotation time {time}")
        symbol = ANNOTATION_SYMBOLS.get(code, UNKNOWN_SYMBOL)
        events.append(AnnotationEvent(sample_index=time, symbol=symbol,
                                      channel=chan, num=num))
        pending_skip = False
    if pending_skip:
        raise AnnotationParseError("SKIP not followed by an annotation at end of stream")
    return events


def encode_annotations(events) -> bytes:
    """Write annotation events in MIT format (SKIP used for large gaps)."""
    words: list[int] = []
    prev = 0
    chan = num = 0
    for ev in events:
        delta = ev.sample_index - prev
        if delta < 0:
            raise StructureError("annotations must be sorted by sample index")
        code = SYMBOL_CODES.get(ev.symbol)
        if code is None:
            raise ValueError(f"no annotation code for symbol {ev.symbol!r}")
        if delta > 1023:
            words.append(SKIP << 10)
            words.extend(((delta >> 16) & 0xFFFF, delta & 0xFFFF))
            delta = 0
        words.append((code << 10) | delta)
        if ev.subtype:
            words.append((SUB << 10) | (ev.subtype & 0x3FF))
        if ev.channel != chan:
            chan = ev.channel
            words.append((CHN << 10) | (chan & 0x3FF))
        if ev.num != num:
            num = ev.num
            words.append((NUM << 10) | (num & 0x3FF))
        if ev.aux:
            aux = bytes(ev.aux)
            words.append((AUX << 10) | len(aux))
            padded = aux + b"\x00" * (len(aux) % 2)
            words.extend(np.frombuffer(padded, dtype="<u2").tolist())
        prev = ev.sample_index
    words.append(0)
    return np.asarray(words, dtype="<u2").tobytes()


def adu_to_physical(raw, spec: SignalSpec) -> np.ndarray:
    return (np.asarray(raw, dtype=np.float64) - spec.baseline) / spec.gain


# ---------------------------------------------------------------------------
# file level

def read_header(path) -> RecordHeader:
    return parse_header(Path(path).read_text(encoding="latin-1"))


def read_record(record_path, annotator: str | None = "atr") -> RawRecord:
    """Read ``<record_path>.hea`` plus its signal and annotation files.

    ``record_path`` is the record name without extension, e.g. ``data/100``.
    """
    record_path = Path(record_path)
    base = record_path.parent
    hea = record_path.with_name(record_path.name + ".hea")
    if not hea.exists():
        raise FileNotFoundError(f"header not found: {hea}")
    header = read_header(hea)

    columns = np.zeros((header.n_samples, header.n_signals), dtype=np.int64)
    # signals sharing a file are interleaved in that file
    groups: dict[str, list[int]] = {}
    for idx, spec in enumerate(header.signals):
        groups.setdefault(spec.file_name, []).append(idx)
    for file_name, idxs in groups.items():
        data = (base / file_name).read_bytes()[header.signals[idxs[0]].byte_offset:]
        block = decode_format212(data, header.n_samples, len(idxs))
        columns[:, idxs] = block

    annotations: list[AnnotationEvent] = []
    unknown = 0
    if annotator:
        ann_path = record_path.with_name(f"{record_path.name}.{annotator}")
        if ann_path.exists():
            annotations = parse_annotations(ann_path.read_bytes())
            unknown = sum(ev.symbol == UNKNOWN_SYMBOL for ev in annotations)
            if unknown:
                logger.warning("%s: %d annotations with unknown codes", header.record_name, unknown)
            late = [ev for ev in annotations if ev.sample_index >= header.n_samples]
            if late:
                raise StructureError(
                    f"{header.record_name}: annotation at sample {late[0].sample_index} "
                    f"beyond record length {header.n_samples}")
    return RawRecord(header=header, samples=columns, annotations=annotations,
                     unknown_annotation_codes=unknown)


def _checksum16(values):
    return (int(values.sum()) + 32768) % 65536 - 32768


def write_record(directory, name, samples, fs, gains=None, baselines=None,
                 descriptions=None, annotations=None, comments=()):
    """Write a format-212 record (``.hea``, ``.dat`` and optionally ``.atr``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim == 1:
        samples = samples[:, None]
    n_samples, n_signals = samples.shape
    gains = gains or [DEFAULT_GAIN] * n_signals
    baselines = baselines or [0] * n_signals
    descriptions = descriptions or [f"sig{i}" for i in range(n_signals)]
    dat = f"{name}.dat"
    specs = []
    for i in range(n_signals):
        col = samples[:, i]
        specs.append(SignalSpec(
            format_code=212, gain=float(gains[i]), baseline=int(baselines[i]),
            description=descriptions[i], file_name=dat, adc_zero=int(baselines[i]),
            initial_value=int(col[0]) if n_samples else 0,
            checksum=_checksum16(col)))
    header = RecordHeader(record_name=name, n_signals=n_signals, fs=fs,
                          n_samples=n_samples, signals=specs, comments=list(comments))
    (directory / f"{name}.hea").write_text(format_header(header))
    (directory / dat).write_bytes(encode_format212(samples))
    if annotations is not None:
        (directory / f"{name}.atr").write_bytes(encode_annotations(annotations))
    return header


def list_records(data_dir) -> list[str]:
    """Record names with a header file in ``data_dir``, sorted."""
    return sorted(p.stem for p in Path(data_dir).glob("*.hea"))
