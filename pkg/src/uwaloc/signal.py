"""Array snapshot synthesis, noise injection at a target array SNR, and the
time-domain segmentation pipeline (Kaiser-tapered overlapping segments)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal.windows import kaiser

from .ocean import Environment, ModeSet, greens_vector

NOISE_MAGIC = b"UWAN"
NOISE_VERSION = 1
NOISE_FREE = float("inf")


@dataclass(frozen=True)
class SnapshotMatrix:
    coefficients: np.ndarray  # (L, P) complex
    frequency: float = 130.0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.ndim != 2 or min(c.shape) < 1:
            raise ValueError(f"coefficients must be a non-empty L x P matrix, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite snapshot coefficients")
        object.__setattr__(self, "coefficients", c)

    @property
    def num_sensors(self) -> int:
        return self.coefficients.shape[0]

    @property
    def num_snapshots(self) -> int:
        return self.coefficients.shape[1]


@dataclass(frozen=True)
class SegmentationConfig:
    total_duration: float = 3.0
    segment_duration: float = 1.0
    overlap_fraction: float = 0.5
    kaiser_beta: float = 9.24
    sample_rate: float = 2000.0

    @property
    def segment_length(self) -> int:
        return int(round(self.segment_duration * self.sample_rate))

    @property
    def hop_length(self) -> int:
        return int(round(self.segment_length * (1 - self.overlap_fraction)))

    @property
    def total_samples(self) -> int:
        return int(round(self.total_duration * self.sample_rate))

    @property
    def num_segments(self) -> int:
        return (self.total_samples - self.segment_length) // self.hop_length + 1


@dataclass(frozen=True)
class NoiseSource:
    """Additive noise model. ``kind='file'`` draws segments from a noise record."""

    kind: str = "gaussian"
    file_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "file"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "file" and not self.file_path:
            raise ValueError("file noise requires file_path")


def generate_snapshots(g: np.ndarray, num_snapshots: int, rng: np.random.Generator,
                       frequency: float = 130.0) -> SnapshotMatrix:
    """Each column is ``g`` rotated by an independent uniform random phase."""
    if num_snapshots < 1:
        raise ValueError("need at least one snapshot")
    theta = rng.uniform(0.0, 2 * np.pi, size=num_snapshots)
    return SnapshotMatrix(np.outer(np.asarray(g, dtype=complex), np.exp(1j * theta)), frequency)


def noise_power_for_snr(s: SnapshotMatrix, snr_db: float) -> float:
    """Per-entry noise power ``E_w`` giving ``SNR = 10 log10(sum_l E_l / (L E_w))``."""
    energy_per_sensor = np.mean(np.abs(s.coefficients) ** 2, axis=1)
    return float(energy_per_sensor.sum() / (s.num_sensors * 10 ** (snr_db / 10)))


def add_noise(s: SnapshotMatrix, snr_db: float, noise: NoiseSource, rng: np.random.Generator) -> SnapshotMatrix:
    if np.isposinf(snr_db):
        return s
    power = noise_power_for_snr(s, snr_db)
    L, P = s.coefficients.shape
    if noise.kind == "gaussian":
        w = rng.standard_normal((L, P)) + 1j * rng.standard_normal((L, P))
        w *= np.sqrt(power / 2)
    else:
        w = draw_file_noise(load_noise_record(noise.file_path), L * P, rng).reshape(L, P)
        w *= np.sqrt(power / np.mean(np.abs(w) ** 2))
    return SnapshotMatrix(s.coefficients + w, s.frequency)


def synthesize_time_series(env: Environment, modes: ModeSet, range_d: float,
                           cfg: SegmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Real L x T array time series of a CW source with one random phase."""
    if cfg.sample_rate <= 2 * env.frequency:
        raise ValueError("sample_rate must exceed twice the source frequency")
    g = greens_vector(env, modes, range_d)
    theta = rng.uniform(0.0, 2 * np.pi)
    t = np.arange(cfg.total_samples) / cfg.sample_rate
    carrier = np.exp(1j * (2 * np.pi * env.frequency * t + theta))
    return np.real(np.outer(g, carrier))


def extract_fourier_coefficients(ts: np.ndarray, cfg: SegmentationConfig, frequency: float = 130.0) -> SnapshotMatrix:
    """Kaiser-windowed DFT coefficient at the bin nearest ``frequency`` for each segment."""
    ts = np.atleast_2d(np.asarray(ts, dtype=float))
    n, hop, P = cfg.segment_length, cfg.hop_length, cfg.num_segments
    if P < 1 or ts.shape[1] < (P - 1) * hop + n:
        raise ValueError(f"time series of {ts.shape[1]} samples too short for {cfg}")
    window = kaiser(n, cfg.kaiser_beta, sym=False)
    k = int(round(frequency * n / cfg.sample_rate))
    basis = window * np.exp(-2j * np.pi * k * np.arange(n) / n)
    starts = np.arange(P) * hop
    segments = np.stack([ts[:, s:s + n] for s in starts], axis=1)  # (L, P, n)
    return SnapshotMatrix(segments @ basis, frequency)


# -- noise record files --------------------------------------------------------
# Layout (little endian): b"UWAN", u32 version, u32 channels, u64 samples,
# then float32 samples channel-major (channel 0 first). Two consecutive
# samples of a channel form one complex value (real, imag).

def write_noise_record(path: str | Path, samples: np.ndarray) -> None:
    samples = np.atleast_2d(np.asarray(samples, dtype="<f4"))
    channels, n = samples.shape
    with open(path, "wb") as fh:
        fh.write(NOISE_MAGIC)
        fh.write(struct.pack("<IIQ", NOISE_VERSION, channels, n))
        fh.write(samples.tobytes(order="C"))


def load_noise_record(path: str | Path) -> np.ndarray:
    """Return the record as complex samples of shape (channels, samples // 2)."""
    raw = Path(path).read_bytes()
    if raw[:4] != NOISE_MAGIC:
        raise ValueError(f"{path}: not a noise record (bad magic)")
    version, channels, n = struct.unpack_from("<IIQ", raw, 4)
    if version != NOISE_VERSION:
        raise ValueError(f"{path}: unsupported noise record version {version}")
    data = np.frombuffer(raw, dtype="<f4", offset=20)
    if data.size != channels * n:
        raise ValueError(f"{path}: expected {channels * n} samples, found {data.size}")
    data = data.reshape(channels, n)[:, : n - n % 2].astype(float)
    return data[:, 0::2] + 1j * data[:, 1::2]


def draw_file_noise(record: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    flat = record.reshape(-1)
    if flat.size < count:
        raise ValueError(f"noise record holds {flat.size} complex samples, need {count}")
    start = int(rng.integers(0, flat.size - count + 1))
    return flat[start:start + count].copy()
