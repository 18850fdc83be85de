"""Dataset files: one JSON header line, then fixed-size binary records.

The header carries the generating spec, record count and stream seed, so
a file is both an interchange container and a recipe: `regenerate` replays
the exact double-precision samples (including the transmitted symbols,
which the binary records do not store) from the seeded generator.

Record layout, in order: little-endian float32 interleaved I/Q for
y, z1, z2, z3; the timing vector as uint8; the class index as one uint8;
then the remaining generation parameters as little-endian float64 in
declared field order (n_symbols, sps, rolloff, t0, f0, phi0, channel taps
as re/im pairs, delay_spread, snr_db).  Complex waveforms are quantized
to float32; everything else round-trips exactly.
"""

from __future__ import annotations

import dataclasses
import json
from typing import BinaryIO, Iterable, Iterator, List, Tuple

import numpy as np

from .exceptions import BlindRxError
from .sigcore import LabeledSample, SignalParams, one_hot
from .waveform import DatasetSpec, stream_epoch

__all__ = [
    "FORMAT_NAME",
    "FORMAT_VERSION",
    "DatasetHeader",
    "record_size",
    "write_dataset",
    "generate_to_file",
    "read_header",
    "iter_dataset",
    "load_dataset",
    "regenerate",
]

FORMAT_NAME = "blindrx-dataset"
FORMAT_VERSION = 1

_N_PARAM_FIELDS = 14


class DatasetFileError(BlindRxError, ValueError):
    """Malformed or truncated dataset file."""


@dataclasses.dataclass(frozen=True)
class DatasetHeader:
    version: int
    count: int
    seed: int
    spec: DatasetSpec

    def to_json_line(self) -> bytes:
        blob = {
            "format": FORMAT_NAME,
            "version": self.version,
            "count": self.count,
            "seed": self.seed,
            "spec": self.spec.to_dict(),
        }
        return (json.dumps(blob) + "\n").encode("ascii")


def record_size(n_r: int) -> int:
    return 4 * 2 * n_r * 4 + n_r + 1 + _N_PARAM_FIELDS * 8


def _interleave(x: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(x), dtype="<f4")
    out[0::2] = x.real
    out[1::2] = x.imag
    return out


def _pack_record(s: LabeledSample, universe) -> bytes:
    p = s.params
    iq = np.concatenate([_interleave(np.asarray(v, dtype=np.complex128))
                         for v in (s.y, s.z1, s.z2, s.z3)])
    class_idx = int(np.argmax(s.z5))
    if universe[class_idx] is not p.scheme:
        raise DatasetFileError("class label disagrees with scheme")
    params = np.array(
        [p.n_symbols, p.sps, p.rolloff, p.t0, p.f0, p.phi0,
         p.channel_taps[0].real, p.channel_taps[0].imag,
         p.channel_taps[1].real, p.channel_taps[1].imag,
         p.channel_taps[2].real, p.channel_taps[2].imag,
         p.delay_spread, p.snr_db],
        dtype="<f8",
    )
    return (iq.tobytes() + np.asarray(s.z4, dtype=np.uint8).tobytes()
            + bytes([class_idx]) + params.tobytes())


def _unpack_record(buf: bytes, spec: DatasetSpec) -> LabeledSample:
    n = spec.n_r
    iq = np.frombuffer(buf, dtype="<f4", count=4 * 2 * n)
    signals = []
    for i in range(4):
        block = iq[i * 2 * n:(i + 1) * 2 * n].astype(np.float64)
        signals.append(block[0::2] + 1j * block[1::2])
    off = 4 * 2 * n * 4
    z4 = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).copy()
    class_idx = buf[off + n]
    if class_idx >= len(spec.universe):
        raise DatasetFileError(f"class index {class_idx} outside universe")
    scheme = spec.universe[class_idx]
    vals = np.frombuffer(buf, dtype="<f8", count=_N_PARAM_FIELDS,
                         offset=off + n + 1)
    params = SignalParams(
        scheme=scheme,
        n_symbols=int(vals[0]),
        sps=float(vals[1]),
        rolloff=float(vals[2]),
        t0=float(vals[3]),
        f0=float(vals[4]),
        phi0=float(vals[5]),
        channel_taps=np.array([vals[6] + 1j * vals[7],
                               vals[8] + 1j * vals[9],
                               vals[10] + 1j * vals[11]]),
        delay_spread=float(vals[12]),
        snr_db=float(vals[13]),
    )
    return LabeledSample(
        y=signals[0], z1=signals[1], z2=signals[2], z3=signals[3],
        z4=z4, z5=one_hot(scheme, spec.universe), params=params,
        symbols=np.zeros(0, dtype=np.complex128),
    )


def write_dataset(path: str, spec: DatasetSpec, seed: int,
                  samples: Iterable[LabeledSample]) -> DatasetHeader:
    """Write samples to a new file; count is fixed up after streaming."""
    written = 0
    with open(path, "wb") as f:
        placeholder = DatasetHeader(FORMAT_VERSION, 0, seed, spec)
        f.write(placeholder.to_json_line())
        for s in samples:
            if len(s.y) != spec.n_r:
                raise DatasetFileError(
                    f"record length {len(s.y)} does not match spec n_r {spec.n_r}"
                )
            f.write(_pack_record(s, spec.universe))
            written += 1
    header = DatasetHeader(FORMAT_VERSION, written, seed, spec)
    _rewrite_header(path, header)
    return header


def _rewrite_header(path: str, header: DatasetHeader):
    # the header line length depends only on digits in count; rewrite the
    # whole file prefix by splicing, which is cheap relative to records
    with open(path, "rb") as f:
        old = f.readline()
        body = f.read()
    new = header.to_json_line()
    if len(new) == len(old):
        with open(path, "r+b") as f:
            f.write(new)
    else:
        with open(path, "wb") as f:
            f.write(new)
            f.write(body)


def generate_to_file(path: str, spec: DatasetSpec, n: int, seed: int) -> DatasetHeader:
    return write_dataset(path, spec, seed, stream_epoch(spec, n, seed))


def read_header(f: BinaryIO) -> DatasetHeader:
    line = f.readline()
    try:
        blob = json.loads(line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetFileError(f"unreadable header: {e}") from None
    if blob.get("format") != FORMAT_NAME:
        raise DatasetFileError(f"not a {FORMAT_NAME} file")
    if blob.get("version") != FORMAT_VERSION:
        raise DatasetFileError(f"unsupported version {blob.get('version')}")
    return DatasetHeader(
        version=int(blob["version"]),
        count=int(blob["count"]),
        seed=int(blob["seed"]),
        spec=DatasetSpec.from_dict(blob["spec"]),
    )


def iter_dataset(path: str) -> Iterator[LabeledSample]:
    with open(path, "rb") as f:
        header = read_header(f)
        size = record_size(header.spec.n_r)
        for i in range(header.count):
            buf = f.read(size)
            if len(buf) != size:
                raise DatasetFileError(
                    f"truncated file: record {i} has {len(buf)} of {size} bytes"
                )
            yield _unpack_record(buf, header.spec)
        if f.read(1):
            raise DatasetFileError("trailing bytes after final record")


def load_dataset(path: str) -> Tuple[DatasetHeader, List[LabeledSample]]:
    with open(path, "rb") as f:
        header = read_header(f)
    return header, list(iter_dataset(path))


def regenerate(path: str) -> Iterator[LabeledSample]:
    """Replay the exact samples the file was generated from.

    Full double precision, symbols included; only valid for files written
    by generate_to_file (arbitrary sample collections cannot be replayed).
    """
    with open(path, "rb") as f:
        header = read_header(f)
    return stream_epoch(header.spec, header.count, header.seed)
