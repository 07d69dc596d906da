"""Acoustic side: feature files, log-mel extraction, the strided conv
down-sampler, and the learnable virtual embedding used when audio is absent."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

MAGIC = b"UPFT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIf")


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class PayloadLengthError(FeatureFileError):
    pass


class AudioConsistencyError(ValueError):
    pass


class FeaturesTooShortError(T.InputTooShortError):
    def __init__(self, length: int, minimum: int):
        ValueError.__init__(
            self, f"{length} feature frames are too few for the down-sampling stack; "
                  f"provide at least {minimum} frames")
        self.length = length
        self.kernel = minimum
        self.minimum = minimum


@dataclass
class AcousticFeatures:
    frames: np.ndarray
    frame_rate_hz: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ValueError(f"feature frames must be a non-empty 2-D array, got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError("feature frames contain non-finite values")
        if not self.frame_rate_hz > 0:
            raise ValueError(f"frame rate must be positive, got {self.frame_rate_hz}")

    @property
    def duration_s(self) -> float:
        return self.frames.shape[0] / self.frame_rate_hz


def write_features(path, features: AcousticFeatures) -> None:
    rows, cols = features.frames.shape
    payload = features.frames.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols, features.frame_rate_hz))
        fh.write(payload)


def read_header(path) -> tuple[int, int, float]:
    """``(rows, cols, frame_rate_hz)`` from a feature file, payload not read."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"feature file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    return _parse_header(head, path)


def _parse_header(head: bytes, path) -> tuple[int, int, float]:
    if len(head) < _HEADER.size:
        raise FeatureFileError(f"{path}: truncated header ({len(head)} bytes)")
    magic, version, rows, cols, rate = _HEADER.unpack(head)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"{path}: unsupported format version {version}")
    return rows, cols, float(rate)


def load_features(path) -> AcousticFeatures:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"feature file not found: {path}")
    raw = path.read_bytes()
    rows, cols, rate = _parse_header(raw[: _HEADER.size], path)
    payload = raw[_HEADER.size:]
    if len(payload) != rows * cols * 4:
        raise PayloadLengthError(
            f"{path}: header declares {rows}x{cols} floats ({rows * cols * 4} bytes), "
            f"payload has {len(payload)} bytes"
        )
    frames = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    return AcousticFeatures(frames.astype(np.float64), rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-scale filters, ``[n_mels x (n_fft // 2 + 1)]``."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def logmel(waveform, sample_rate: int, n_mels: int = 80, win_ms: float = 25.0,
           hop_ms: float = 10.0) -> AcousticFeatures:
    if sample_rate <= 0:
        raise ValueError(f"sample rate must be positive, got {sample_rate}")
    x = np.asarray(waveform, dtype=np.float64)
    win = int(round(sample_rate * win_ms / 1000.0))
    hop = int(round(sample_rate * hop_ms / 1000.0))
    if win < 1 or hop < 1:
        raise ValueError("window and hop must span at least one sample")
    if x.shape[0] < win:
        raise InputTooShortForWindow(x.shape[0], win)
    n_frames = (x.shape[0] - win) // hop + 1
    n_fft = 1 << (win - 1).bit_length()
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spectrum = np.abs(np.fft.rfft(frames * np.hanning(win), n=n_fft, axis=1))
    energies = spectrum @ mel_filterbank(n_mels, n_fft, sample_rate).T
    return AcousticFeatures(np.log(np.maximum(energies, 1e-10)), 1000.0 / hop_ms)


class InputTooShortForWindow(ValueError):
    def __init__(self, length: int, window: int):
        super().__init__(f"waveform of {length} samples is shorter than one {window}-sample window")


# -------------------------------------------------------------- down-sampling

def downsample_length(m: int, kernel: int = 15, stride: int = 5, layers: int = 2) -> int:
    for _ in range(layers):
        m = T.conv_output_length(m, kernel, stride)
    return m


def min_input_length(kernel: int = 15, stride: int = 5, layers: int = 2) -> int:
    m = kernel
    for _ in range(layers - 1):
        m = (m - 1) * stride + kernel
    return m


def init_acoustic(params: dict, feat_dim: int, channels: int, d: int, kernel: int,
                  ve_len: int, rng: np.random.Generator) -> None:
    params["acoustic.conv1.w"] = Tensor(
        rng.normal(0.0, np.sqrt(2.0 / (kernel * feat_dim)), (kernel, feat_dim, channels)), requires_grad=True)
    params["acoustic.conv1.b"] = Tensor(np.zeros(channels), requires_grad=True)
    params["acoustic.conv2.w"] = Tensor(
        rng.normal(0.0, np.sqrt(2.0 / (kernel * channels)), (kernel, channels, channels)), requires_grad=True)
    params["acoustic.conv2.b"] = Tensor(np.zeros(channels), requires_grad=True)
    params["acoustic.proj.w"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(channels), (channels, d)), requires_grad=True)
    params["acoustic.proj.b"] = Tensor(np.zeros(d), requires_grad=True)
    params["acoustic.virtual"] = Tensor(rng.normal(0.0, 0.02, (ve_len, d)), requires_grad=True)


def downsample(features: AcousticFeatures, params: dict, kernel: int = 15, stride: int = 5) -> Tensor:
    """conv -> ReLU -> conv -> ReLU -> linear, giving ``[m' x d]``."""
    m = features.frames.shape[0]
    need = min_input_length(kernel, stride, 2)
    if m < need:
        raise FeaturesTooShortError(m, need)
    h = Tensor(features.frames)
    h = T.relu(T.conv1d(h, params["acoustic.conv1.w"], params["acoustic.conv1.b"], stride))
    h = T.relu(T.conv1d(h, params["acoustic.conv2.w"], params["acoustic.conv2.b"], stride))
    return T.add(T.matmul(h, params["acoustic.proj.w"]), params["acoustic.proj.b"])


def acoustic_or_virtual(has_audio: bool, features: AcousticFeatures | None, params: dict,
                        kernel: int = 15, stride: int = 5, downsample_fn=None) -> Tensor:
    """Down-sampled audio when present, otherwise the shared virtual embedding table."""
    if has_audio != (features is not None):
        raise AudioConsistencyError(
            f"has_audio={has_audio} but features are {'present' if features is not None else 'missing'}"
        )
    if not has_audio:
        return params["acoustic.virtual"]
    if downsample_fn is not None:
        return downsample_fn(features, params)
    return downsample(features, params, kernel, stride)
