"""File formats: WAV/PGM ingestion, cube files, checkpoints, manifests.

All binary payloads are little-endian. Cube files (magic AVCB) hold one
row-major float32 array with explicit rank and extents; checkpoints (magic
AVCK) hold the model configuration, an architecture digest, and every
parameter and running statistic as a named float32 blob in a fixed order.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, DataError
from .model import CoupledModel, ModelConfig
from .speech import AudioClip

CUBE_MAGIC = b"AVCB"
CKPT_MAGIC = b"AVCK"
FORMAT_VERSION = 1


# ---------------------------------------------------------------- audio / video

def read_wav(path) -> AudioClip:
    """Load a mono PCM WAV (16-bit integer or 32-bit float, little-endian)."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise DataError(f"{path}: not a readable WAV file ({exc})") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples=samples, sample_rate=int(rate))


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1)."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767.0 / 32768.0)
    wavfile.write(path, sample_rate, (clipped * 32768.0).astype(np.int16))


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) as a uint8 [H, W] array."""
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(raw):
            raise DataError(f"{path}: truncated PGM header")
        if raw[pos:pos + 1].isspace():
            pos += 1
            continue
        if raw[pos:pos + 1] == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl == -1 else nl + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise DataError(f"{path}: not a binary grayscale PGM (magic {fields[0]!r})")
    try:
        width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    pixels = raw[pos:pos + width * height]
    if len(pixels) != width * height:
        raise DataError(f"{path}: pixel payload shorter than {width}x{height}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataError(f"PGM image must be 2-D, got shape {image.shape}")
    data = np.clip(np.round(image), 0, 255).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + data.tobytes())


def read_frame_dir(path) -> list:
    """All PGM frames in a directory, sorted by filename."""
    files = sorted(Path(path).glob("*.pgm"))
    if not files:
        raise DataError(f"{path}: no .pgm frames found")
    return [read_pgm(f) for f in files]


# ---------------------------------------------------------------- cube files

def write_cube(path, array) -> None:
    data = array.data if hasattr(array, "data") and not isinstance(array, np.ndarray) else array
    data = np.asarray(data)
    header = CUBE_MAGIC + struct.pack("<HH", FORMAT_VERSION, data.ndim)
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_cube(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CUBE_MAGIC:
        raise DataError(f"{path}: not a cube file")
    version, rank = struct.unpack_from("<HH", raw, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported cube version {version}")
    extents = struct.unpack_from(f"<{rank}I", raw, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(extents))
    expected = offset + 4 * count
    if len(raw) != expected:
        raise DataError(f"{path}: payload length {len(raw) - offset} does not match "
                        f"extents {extents}")
    return np.frombuffer(raw[offset:], dtype="<f4").reshape(extents)


# ---------------------------------------------------------------- checkpoints

def _pack_blob(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode()
    out = struct.pack("<H", len(encoded)) + encoded
    out += struct.pack("<H", array.ndim)
    out += struct.pack(f"<{array.ndim}I", *array.shape)
    out += np.ascontiguousarray(array, dtype="<f4").tobytes()
    return out


def save_checkpoint(path, model: CoupledModel) -> None:
    cfg = model.config
    blobs = [(name, p.data) for name, p in model.named_parameters()]
    blobs += [(name, b) for name, b in model.named_buffers()]
    body = struct.pack("<I", cfg.zeta)
    body += struct.pack("<ddd", cfg.mu, cfg.lam, cfg.rho)
    body += struct.pack("<q", cfg.seed)
    body += model.spec_digest()
    body += struct.pack("<I", len(blobs))
    for name, arr in blobs:
        body += _pack_blob(name, arr)
    Path(path).write_bytes(CKPT_MAGIC + struct.pack("<H", FORMAT_VERSION) + body)


def load_checkpoint(path, dtype: str = "float32",
                    builder=None) -> CoupledModel:
    """Rebuild the model and load every parameter and running statistic.

    Refuses to load when the stored architecture digest does not match the
    model the builder produces for the stored configuration.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 6
    (zeta,) = struct.unpack_from("<I", raw, pos); pos += 4
    mu, lam, rho = struct.unpack_from("<ddd", raw, pos); pos += 24
    (seed,) = struct.unpack_from("<q", raw, pos); pos += 8
    digest = raw[pos:pos + 32]; pos += 32
    (n_blobs,) = struct.unpack_from("<I", raw, pos); pos += 4

    cfg = ModelConfig(zeta=zeta, mu=mu, lam=lam, rho=rho, seed=seed, dtype=dtype)
    model = (builder or CoupledModel)(cfg)
    if model.spec_digest() != digest:
        raise DataError(f"{path}: architecture digest mismatch; refusing to load")

    params = dict(model.named_parameters())
    buffer_names = {name for name, _ in model.named_buffers()}
    loaded = set()
    for _ in range(n_blobs):
        (name_len,) = struct.unpack_from("<H", raw, pos); pos += 2
        name = raw[pos:pos + name_len].decode(); pos += name_len
        (rank,) = struct.unpack_from("<H", raw, pos); pos += 2
        extents = struct.unpack_from(f"<{rank}I", raw, pos); pos += 4 * rank
        count = int(np.prod(extents))
        arr = np.frombuffer(raw[pos:pos + 4 * count], dtype="<f4").reshape(extents)
        pos += 4 * count
        if name in params:
            target = params[name]
            if target.data.shape != arr.shape:
                raise DataError(f"{path}: blob {name} has shape {arr.shape}, "
                                f"expected {target.data.shape}")
            target.data = arr.astype(target.data.dtype)
        elif name in buffer_names:
            _assign_buffer(model, name, arr)
        else:
            raise DataError(f"{path}: unknown blob {name!r}")
        loaded.add(name)
    missing = (set(params) | buffer_names) - loaded
    if missing:
        raise DataError(f"{path}: missing blobs {sorted(missing)}")
    return model


def _assign_buffer(model: CoupledModel, name: str, value: np.ndarray) -> None:
    stack_name, layer_name, suffix = name.split(".")
    stack = model.visual_net if stack_name == "visual" else model.audio_net
    for layer in stack.layers:
        if getattr(layer, "name", None) == layer_name:
            layer.set_buffer(suffix, value)
            return
    raise DataError(f"no layer {layer_name!r} for buffer {name!r}")


# ---------------------------------------------------------------- manifests

@dataclass
class ManifestRow:
    subject_id: str
    audio_path: Path
    frames_dir: Path
    fps: float = 30.0
    sample_rate: int = 16000


REQUIRED_COLUMNS = ("subject_id", "audio_path", "frames_dir")


def load_manifest(path, allow_fps: bool = False, check_paths: bool = True) -> list:
    """Read a dataset manifest (CSV with header, or JSONL).

    Relative paths resolve against the manifest's directory. Frame rate must
    be 30 f/s unless ``allow_fps`` is set.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: manifest not found")
    base = path.parent
    rows = []
    if path.suffix.lower() in (".jsonl", ".json"):
        records = []
        for line in path.read_text().splitlines():
            line = line.strip()
            if line:
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}: bad JSONL line: {exc}") from exc
    else:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not set(REQUIRED_COLUMNS) <= set(reader.fieldnames):
                raise DataError(f"{path}: manifest needs columns {REQUIRED_COLUMNS}")
            records = list(reader)
    for i, rec in enumerate(records):
        try:
            row = ManifestRow(
                subject_id=str(rec["subject_id"]),
                audio_path=base / rec["audio_path"],
                frames_dir=base / rec["frames_dir"],
                fps=float(rec.get("fps", 30.0) or 30.0),
                sample_rate=int(rec.get("sample_rate", 16000) or 16000),
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: bad manifest record {i}: {exc}") from exc
        if row.fps != 30.0 and not allow_fps:
            raise ConfigError(f"{path}: record {i} has fps {row.fps}; expected 30 "
                              f"(pass --allow-fps to override)")
        if check_paths:
            if not row.audio_path.exists():
                raise DataError(f"{path}: record {i}: missing audio {row.audio_path}")
            if not row.frames_dir.exists():
                raise DataError(f"{path}: record {i}: missing frames dir {row.frames_dir}")
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: manifest is empty")
    return rows
