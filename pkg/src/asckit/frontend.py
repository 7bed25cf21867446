"""Spectrogram front-end: WAV input, resampling, and three aligned time-frequency
representations (mel, gammatone, constant-Q) with delta stacking.

All three filterbanks are applied to the same STFT power spectrogram so that a
fixed clip length always yields identical tensor shapes regardless of the
representation.  Framing is centered with reflection padding and a hop-size
grid: ``frame_count = len(samples) // hop_size + 1``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .errors import DataFormatError, InvalidConfigError, InvalidInputError

CANONICAL_RATE = 32000
LOG_FLOOR = 1e-10

SPECTROGRAM_KINDS = ("mel", "gammatone", "cqt")

# Per-kind analysis ranges.  Mel spans the full band; gammatone starts above
# the ERB model's breakdown region; CQT starts at C1 so 128 geometric bands
# stay below Nyquist.
_KIND_FMIN = {"mel": 0.0, "gammatone": 50.0, "cqt": 32.703}


@dataclass(frozen=True)
class AudioClip:
    """A mono audio clip with its sampling rate and an opaque source id."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidInputError("clip must hold a non-empty 1-D sample sequence")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("clip samples must be finite")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    """Shared analysis settings for all spectrogram kinds.

    The same fft/window/hop/band values must be used for every kind so the
    resulting tensors can be consumed by one ensemble.
    """

    kind: str = "mel"
    fft_size: int = 4096
    window_size: int = 2048
    hop_size: int = 1024
    band_count: int = 128
    log_compression: bool = True
    delta_width: int = 9

    def __post_init__(self):
        if self.kind not in SPECTROGRAM_KINDS:
            raise InvalidConfigError(f"unknown spectrogram kind {self.kind!r}")
        if self.window_size > self.fft_size:
            raise InvalidConfigError("window_size must not exceed fft_size")
        if self.hop_size > self.window_size:
            raise InvalidConfigError("hop_size must not exceed window_size")
        if self.band_count < 2:
            raise InvalidConfigError("band_count must be at least 2")
        if self.delta_width < 3 or self.delta_width % 2 == 0:
            raise InvalidConfigError("delta_width must be an odd integer >= 3")

    def digest(self) -> str:
        """Stable hash of every setting that affects the output values."""
        payload = {
            "kind": self.kind,
            "fft_size": self.fft_size,
            "window_size": self.window_size,
            "hop_size": self.hop_size,
            "band_count": self.band_count,
            "log_compression": self.log_compression,
            "delta_width": self.delta_width,
            "framing": "center-reflect/floor+1",
            "log_floor": LOG_FLOOR,
            "fmin": _KIND_FMIN[self.kind],
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureTensor:
    """A bands x frames x channels block with provenance."""

    values: np.ndarray
    kind: str
    config_digest: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise InvalidInputError("feature values must be 3-D (bands, frames, channels)")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("feature values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample to ``target_rate`` Hz, preserving duration within one sample."""
    if target_rate <= 0:
        raise InvalidInputError("target_rate must be positive")
    if clip.sample_rate == target_rate:
        return clip
    g = np.gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    samples = resample_poly(clip.samples, up, down)
    return AudioClip(samples=samples, sample_rate=target_rate, source_id=clip.source_id)


def frame_count(n_samples: int, hop_size: int) -> int:
    return n_samples // hop_size + 1


def stft_power(samples: np.ndarray, config: SpectrogramConfig) -> np.ndarray:
    """Centered STFT power spectrum, shape (fft_size // 2 + 1, frames)."""
    win = config.window_size
    hop = config.hop_size
    if samples.size < win:
        raise InvalidInputError(
            f"clip of {samples.size} samples is shorter than one window ({win})"
        )
    half = win // 2
    padded = np.pad(samples, (half, half), mode="reflect")
    n_frames = frame_count(samples.size, hop)
    window = get_window("hann", win, fftbins=True)
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[::hop][:n_frames]
    spectrum = np.fft.rfft(frames * window, n=config.fft_size, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


def _hz_to_mel(f):
    # Linear below 1 kHz, logarithmic above (Slaney's formulation).
    f = np.asarray(f, dtype=np.float64)
    mel = 3.0 * f / 200.0
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / (np.log(6.4) / 27.0), mel)
    return mel


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = 200.0 * m / 3.0
    log_region = m >= 15.0
    f = np.where(log_region, 1000.0 * np.exp((m - 15.0) * np.log(6.4) / 27.0), f)
    return f


def mel_band_edges(band_count: int, sample_rate: int = CANONICAL_RATE) -> np.ndarray:
    """Band edge frequencies (band_count + 2 points) on the mel scale."""
    lo = _hz_to_mel(_KIND_FMIN["mel"])
    hi = _hz_to_mel(sample_rate / 2.0)
    return _mel_to_hz(np.linspace(lo, hi, band_count + 2))


def _triangle_bank(edges: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Triangular filters with peaks at edges[1:-1], shape (bands, bins)."""
    bands = edges.size - 2
    bank = np.zeros((bands, freqs.size))
    for b in range(bands):
        left, center, right = edges[b], edges[b + 1], edges[b + 2]
        up = (freqs - left) / max(center - left, 1e-9)
        down = (right - freqs) / max(right - center, 1e-9)
        bank[b] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def erb_band_centers(band_count: int, sample_rate: int = CANONICAL_RATE) -> np.ndarray:
    """Gammatone center frequencies, equally spaced on the ERB-number scale."""
    def hz_to_erb_number(f):
        return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))

    def erb_number_to_hz(e):
        return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437

    lo = hz_to_erb_number(_KIND_FMIN["gammatone"])
    hi = hz_to_erb_number(sample_rate / 2.0)
    return erb_number_to_hz(np.linspace(lo, hi, band_count))


def cqt_band_centers(band_count: int, sample_rate: int = CANONICAL_RATE) -> np.ndarray:
    """Geometrically spaced center frequencies from fmin up to Nyquist."""
    fmin = _KIND_FMIN["cqt"]
    fmax = sample_rate / 2.0
    return fmin * (fmax / fmin) ** (np.arange(band_count) / (band_count - 1))


def build_filterbank(config: SpectrogramConfig, sample_rate: int = CANONICAL_RATE) -> np.ndarray:
    """Non-negative (bands, fft_bins) weight matrix for the configured kind."""
    freqs = np.fft.rfftfreq(config.fft_size, d=1.0 / sample_rate)
    if config.kind == "mel":
        return _triangle_bank(mel_band_edges(config.band_count, sample_rate), freqs)
    if config.kind == "gammatone":
        centers = erb_band_centers(config.band_count, sample_rate)
        erb = 24.7 * (4.37 * centers / 1000.0 + 1.0)
        b = 1.019 * erb
        # 4th-order gammatone magnitude response, peak-normalized.
        resp = (1.0 + ((freqs[None, :] - centers[:, None]) / b[:, None]) ** 2) ** -2.0
        return resp
    # Constant-Q: triangular filters on a log2-frequency grid, so each filter's
    # bandwidth is proportional to its center frequency.
    centers = cqt_band_centers(config.band_count, sample_rate)
    ratio = centers[1] / centers[0]
    edges = np.concatenate(([centers[0] / ratio], centers, [centers[-1] * ratio]))
    log_edges = np.log2(edges)
    safe_freqs = np.maximum(freqs, 1e-6)
    return _triangle_bank(log_edges, np.log2(safe_freqs))


def extract_spectrogram(clip: AudioClip, config: SpectrogramConfig) -> FeatureTensor:
    """Single-channel band-energy tensor of shape (band_count, frames, 1)."""
    if clip.sample_rate != CANONICAL_RATE:
        raise InvalidInputError(
            f"clip must be at {CANONICAL_RATE} Hz (got {clip.sample_rate}); resample first"
        )
    power = stft_power(clip.samples, config)
    bank = build_filterbank(config, clip.sample_rate)
    banded = bank @ power
    if config.log_compression:
        banded = np.log(banded + LOG_FLOOR)
    return FeatureTensor(values=banded[:, :, None].astype(np.float32),
                         kind=config.kind, config_digest=config.digest())


def regression_delta(values: np.ndarray, width: int) -> np.ndarray:
    """Least-squares local-slope estimate along axis 1 with edge replication."""
    if width < 3 or width % 2 == 0:
        raise InvalidConfigError("delta width must be an odd integer >= 3")
    if values.shape[1] < width:
        raise InvalidInputError(
            f"need at least {width} frames for delta of width {width}, got {values.shape[1]}"
        )
    half = width // 2
    denom = 2.0 * sum(k * k for k in range(1, half + 1))
    padded = np.pad(values, ((0, 0), (half, half)), mode="edge")
    out = np.zeros_like(values, dtype=np.float64)
    for k in range(1, half + 1):
        out += k * (padded[:, half + k:half + k + values.shape[1]]
                    - padded[:, half - k:half - k + values.shape[1]])
    return out / denom


def stack_deltas(spec: FeatureTensor, delta_width: int | None = None) -> FeatureTensor:
    """Stack (static, delta, delta-delta) into a 3-channel tensor."""
    if spec.values.shape[2] != 1:
        raise InvalidInputError("delta stacking expects a single-channel tensor")
    width = delta_width if delta_width is not None else 9
    static = spec.values[:, :, 0].astype(np.float64)
    d1 = regression_delta(static, width)
    d2 = regression_delta(d1, width)
    stacked = np.stack([static, d1, d2], axis=2)
    return FeatureTensor(values=stacked.astype(np.float32),
                         kind=spec.kind, config_digest=spec.config_digest)


def extract_features(clip: AudioClip, config: SpectrogramConfig) -> FeatureTensor:
    """Full front-end: band energies plus delta stacking."""
    return stack_deltas(extract_spectrogram(clip, config), config.delta_width)


# ---------------------------------------------------------------------------
# WAV reading / writing

def read_wav(path, source_id: str | None = None) -> AudioClip:
    """Read a PCM (16/24/32-bit) or float WAV file as a mono clip in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise DataFormatError(f"cannot read WAV {path}: {exc}") from exc
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    return AudioClip(samples=samples, sample_rate=int(rate),
                     source_id=source_id if source_id is not None else str(path))


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM."""
    scaled = np.clip(clip.samples, -1.0, 1.0)
    wavfile.write(path, clip.sample_rate, (scaled * 32767.0).astype(np.int16))


# ---------------------------------------------------------------------------
# Feature archive container
#
# Layout: magic 'ASCA', u16 version, u32 record count, then per record:
#   u16 id length, id (utf-8), u32 header length, header JSON
#   (kind, shape, config_digest, dtype), payload of row-major little-endian
#   float32 values.

_ARCHIVE_MAGIC = b"ASCA"
_ARCHIVE_VERSION = 1


def write_feature_archive(path, features: dict[str, FeatureTensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(_ARCHIVE_MAGIC)
        fh.write(struct.pack("<HI", _ARCHIVE_VERSION, len(features)))
        for clip_id, feat in features.items():
            values = np.ascontiguousarray(feat.values, dtype="<f4")
            header = json.dumps({
                "kind": feat.kind,
                "shape": list(values.shape),
                "config_digest": feat.config_digest,
                "dtype": "<f4",
            }, sort_keys=True).encode()
            cid = clip_id.encode()
            fh.write(struct.pack("<H", len(cid)))
            fh.write(cid)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(values.tobytes())


def read_feature_archive(path) -> dict[str, FeatureTensor]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _ARCHIVE_MAGIC:
            raise DataFormatError(f"{path} is not a feature archive (bad magic {magic!r})")
        version, count = struct.unpack("<HI", fh.read(6))
        if version != _ARCHIVE_VERSION:
            raise DataFormatError(f"unsupported feature archive version {version}")
        out: dict[str, FeatureTensor] = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            clip_id = fh.read(id_len).decode()
            (hdr_len,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hdr_len).decode())
            shape = tuple(header["shape"])
            n = int(np.prod(shape))
            payload = fh.read(n * 4)
            if len(payload) != n * 4:
                raise DataFormatError(f"truncated payload for record {clip_id!r}")
            values = np.frombuffer(payload, dtype="<f4").reshape(shape)
            out[clip_id] = FeatureTensor(values=values.copy(), kind=header["kind"],
                                         config_digest=header["config_digest"])
        return out
