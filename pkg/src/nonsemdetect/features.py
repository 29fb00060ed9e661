"""Waveform-to-embedding-matrix frontend.

Audio is normalized to exactly 6 s at 16 kHz (96000 samples), split
into non-overlapping windows, and each window is embedded either by a
deterministic synthetic frontend or by reading precomputed embedding
files. Matrices travel between processes in the "EMB1" binary format.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, InvalidAudioError, NumericError

SAMPLE_RATE = 16000
CLIP_SAMPLES = 6 * SAMPLE_RATE  # fixed 6 s analysis length
EMB_MAGIC = b"EMB1"

# summary statistics per chunk: constant bias, mean, energy,
# zero-crossing count, 8 coarse spectral band energies
_N_STATS = 12


@dataclass
class EmbeddingMatrix:
    """Stacked chunk embeddings, one frame per chunk, shape (d, t)."""

    data: np.ndarray
    window_ms: int
    frontend_id: str

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ConfigurationError(f"embedding matrix must be 2-d, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigurationError(f"embedding matrix needs d,t >= 1, got {arr.shape}")
        arr = arr.astype(np.float32, copy=False)
        if not np.all(np.isfinite(arr)):
            raise NumericError("embedding matrix contains non-finite values")
        self.data = arr

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> int:
        return self.data.shape[1]


@dataclass
class FrontendSpec:
    """Where chunk embeddings come from.

    kind "synthetic": pure function of (chunk, seed, dim).
    kind "precomputed": embedding files live under `root`, one per utterance.
    """

    kind: str
    seed: int = 0
    dim: int = 16
    root: Path | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("synthetic", "precomputed"):
            raise ConfigurationError(f"unknown frontend kind '{self.kind}'")
        if self.kind == "synthetic" and self.dim < 1:
            raise ConfigurationError("synthetic frontend needs dim >= 1")
        if self.kind == "precomputed" and self.root is None:
            raise ConfigurationError("precomputed frontend needs a root directory")
        if not self.name:
            self.name = "synthetic-v1" if self.kind == "synthetic" else "precomputed"


def normalize_length(samples, pad_mode: str = "cycle") -> np.ndarray:
    """Force a mono sample sequence to exactly CLIP_SAMPLES.

    Longer input is truncated; shorter input is repeated cyclically
    (or zero-extended with pad_mode="zero").
    """
    arr = np.asarray(samples, dtype=np.float32).reshape(-1)
    if arr.size == 0:
        raise InvalidAudioError("empty audio input")
    if pad_mode not in ("cycle", "zero"):
        raise ConfigurationError(f"unknown pad_mode '{pad_mode}'")
    if arr.size >= CLIP_SAMPLES:
        return arr[:CLIP_SAMPLES].copy()
    if pad_mode == "cycle":
        return np.resize(arr, CLIP_SAMPLES)
    out = np.zeros(CLIP_SAMPLES, dtype=np.float32)
    out[: arr.size] = arr
    return out


def chunk_waveform(samples, window_ms: int) -> list[np.ndarray]:
    """Split a normalized clip into consecutive non-overlapping windows."""
    arr = np.asarray(samples, dtype=np.float32).reshape(-1)
    if arr.size != CLIP_SAMPLES:
        raise ConfigurationError(
            f"chunking expects exactly {CLIP_SAMPLES} samples, got {arr.size}"
        )
    if window_ms <= 0 or 6000 % window_ms != 0:
        raise ConfigurationError(f"window_ms must divide 6000, got {window_ms}")
    n_chunks = 6000 // window_ms
    chunk_len = window_ms * (SAMPLE_RATE // 1000)
    return [arr[i * chunk_len : (i + 1) * chunk_len] for i in range(n_chunks)]


def _chunk_stats(chunk: np.ndarray) -> np.ndarray:
    x = chunk.astype(np.float64)
    zero_crossings = float(np.count_nonzero(np.signbit(x[1:]) != np.signbit(x[:-1])))
    spectrum = np.abs(np.fft.rfft(x)) ** 2
    bands = [float(b.sum()) for b in np.array_split(spectrum, 8)]
    return np.array([1.0, x.mean(), float(x @ x), zero_crossings] + bands)


def synthetic_frontend(chunk, seed: int, d: int) -> np.ndarray:
    """Deterministic unit-norm embedding from chunk summary statistics.

    The same (chunk, seed, d) always yields the same vector; the constant
    bias statistic keeps all-zero chunks on the unit sphere too.
    """
    if d < 1:
        raise ConfigurationError(f"embedding dimension must be >= 1, got {d}")
    stats = _chunk_stats(np.asarray(chunk, dtype=np.float32).reshape(-1))
    projection = np.random.default_rng([seed, d]).standard_normal((d, _N_STATS))
    vec = projection @ stats
    norm = np.linalg.norm(vec)
    if norm == 0.0:  # measure-zero, but stay defined
        vec = projection[:, 0]
        norm = np.linalg.norm(vec)
    return (vec / norm).astype(np.float32)


def build_matrix(chunks, frontend: FrontendSpec, window_ms: int) -> EmbeddingMatrix:
    """Stack per-chunk embeddings as matrix columns in temporal order."""
    if frontend.kind != "synthetic":
        raise ConfigurationError("build_matrix embeds chunks; use read_embedding_file for precomputed")
    columns = []
    for idx, chunk in enumerate(chunks):
        vec = synthetic_frontend(chunk, frontend.seed, frontend.dim)
        if vec.shape != (frontend.dim,):
            raise ConfigurationError(
                f"frontend returned dimension {vec.shape} for chunk {idx}, expected ({frontend.dim},)"
            )
        columns.append(vec)
    if not columns:
        raise ConfigurationError("cannot build a matrix from zero chunks")
    return EmbeddingMatrix(np.stack(columns, axis=1), window_ms, frontend.name)


def extract_matrix(samples, frontend: FrontendSpec, window_ms: int, pad_mode: str = "cycle") -> EmbeddingMatrix:
    """normalize -> chunk -> embed, the full waveform path."""
    normalized = normalize_length(samples, pad_mode=pad_mode)
    return build_matrix(chunk_waveform(normalized, window_ms), frontend, window_ms)


# ---------------------------------------------------------------------------
# EMB1 file format
#
# bytes 0-3   magic "EMB1"
# bytes 4-7   u32 d            (little-endian, as are all integers)
# bytes 8-11  u32 t
# bytes 12-15 u32 window_ms
# bytes 16-17 u16 frontend_id byte length L
# bytes 18-.. UTF-8 frontend_id (L bytes)
# then        d*t float32, frame-major (frame 0's d values first)


def write_embedding_file(matrix: EmbeddingMatrix, path) -> None:
    Path(path).write_bytes(embedding_file_bytes(matrix))


def embedding_file_bytes(matrix: EmbeddingMatrix) -> bytes:
    fid = matrix.frontend_id.encode("utf-8")
    if len(fid) > 0xFFFF:
        raise FormatError(f"frontend_id too long to encode ({len(fid)} bytes)")
    header = EMB_MAGIC + struct.pack("<IIIH", matrix.d, matrix.t, matrix.window_ms, len(fid)) + fid
    # frame-major payload: transpose (d, t) so each frame's d values are contiguous
    payload = np.ascontiguousarray(matrix.data.T, dtype="<f4").tobytes()
    return header + payload


def read_embedding_file(path) -> EmbeddingMatrix:
    blob = Path(path).read_bytes()
    return embedding_matrix_from_bytes(blob, source=str(path))


def embedding_matrix_from_bytes(blob: bytes, source: str = "<bytes>") -> EmbeddingMatrix:
    if len(blob) < 4 or blob[:4] != EMB_MAGIC:
        raise FormatError(f"{source}: bad magic at byte offset 0")
    if len(blob) < 18:
        raise FormatError(f"{source}: truncated header at byte offset {len(blob)}")
    d, t, window_ms, fid_len = struct.unpack("<IIIH", blob[4:18])
    if len(blob) < 18 + fid_len:
        raise FormatError(f"{source}: truncated frontend_id at byte offset {len(blob)}")
    frontend_id = blob[18 : 18 + fid_len].decode("utf-8")
    payload_offset = 18 + fid_len
    expected = d * t * 4
    actual = len(blob) - payload_offset
    if actual != expected:
        raise FormatError(
            f"{source}: payload length mismatch at byte offset {payload_offset}: "
            f"expected {expected} bytes for d={d} t={t}, found {actual}"
        )
    if d < 1 or t < 1:
        raise FormatError(f"{source}: invalid dimensions d={d} t={t} at byte offset 4")
    frames = np.frombuffer(blob, dtype="<f4", count=d * t, offset=payload_offset)
    data = frames.reshape(t, d).T.copy()
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{source}: non-finite values in payload at byte offset {payload_offset}")
    return EmbeddingMatrix(data, int(window_ms), frontend_id)


def read_wav(path) -> np.ndarray:
    """Mono 16 kHz 16-bit PCM WAV to float32 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            n = wav.getnframes()
            raw = wav.readframes(n)
    except (wave.Error, EOFError, OSError) as exc:
        raise InvalidAudioError(f"{path}: unreadable WAV ({exc})") from exc
    if channels != 1:
        raise InvalidAudioError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise InvalidAudioError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise InvalidAudioError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    if n == 0:
        raise InvalidAudioError(f"{path}: empty audio input")
    ints = np.frombuffer(raw, dtype="<i2")
    return (ints.astype(np.float32)) / 32768.0


def write_wav(path, samples) -> None:
    """Inverse of read_wav, mainly for tests and synthetic fixtures."""
    arr = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767.0 / 32768.0)
    ints = np.round(arr * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(SAMPLE_RATE)
        wav.writeframes(ints.tobytes())
