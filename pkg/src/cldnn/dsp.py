"""Log-Mel / MFCC front end, context splicing, WAV and feature-dump I/O.

All arithmetic is float64. Frames are windowed with a periodic Hann window
and zero-padded to a 512-point FFT; no pre-emphasis is applied.
"""

import enum
import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import BadBandEdges, BadOrder, EmptySignal, FormatError, UnsupportedRate

SAMPLE_RATE = 16000
WIN_SEC = 0.025
HOP_SEC = 0.010
FFT_SIZE = 512
NUM_MELS = 40
NUM_CEPS = 13
F_LOW = 20.0
F_HIGH = 7600.0
LOG_FLOOR = 1e-10
SPLICE_LEFT = 10
SPLICE_RIGHT = 5


class FeatureKind(enum.IntEnum):
    LOGMEL = 0
    MFCC = 1


@dataclass(frozen=True)
class MelFilterBank:
    """Triangular Mel filters.

    weights : (num_banks, fft_size // 2 + 1) nonnegative matrix
    band_edges : (num_banks + 2,) Hz; filter m spans edges[m]..edges[m + 2]
    """

    weights: np.ndarray
    band_edges: np.ndarray
    sample_rate: int
    fft_size: int

    @property
    def num_banks(self):
        return self.weights.shape[0]

    @property
    def centers(self):
        return self.band_edges[1:-1]


@dataclass(frozen=True)
class SpectralSequence:
    """A (T, D) matrix of per-frame spectral vectors."""

    frames: np.ndarray
    kind: FeatureKind
    frame_shift: float = HOP_SEC

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass(frozen=True)
class SplicedSequence:
    """``blocks[t]`` is the D x W context window around frame t."""

    blocks: np.ndarray
    source_kind: FeatureKind
    left: int
    right: int

    @property
    def width(self):
        return self.left + 1 + self.right

    def flat(self):
        """Row-major flattening of each block, shape (T, D * W)."""
        return self.blocks.reshape(self.blocks.shape[0], -1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hann_window(n):
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(samples, sample_rate=SAMPLE_RATE, win_sec=WIN_SEC, hop_sec=HOP_SEC):
    """Cut a waveform into overlapping Hann-windowed frames.

    Returns an array of shape ``(floor((len - win) / hop) + 1, win)``.
    Trailing samples that do not fill a whole window are dropped.
    """
    x = np.asarray(samples, dtype=np.float64)
    win = int(round(win_sec * sample_rate))
    hop = int(round(hop_sec * sample_rate))
    if win < 2 or hop <= 0:
        raise ValueError(f"invalid framing: win={win} samples, hop={hop} samples")
    if x.ndim != 1 or x.shape[0] < win:
        raise EmptySignal(f"signal of {x.size} samples is shorter than one {win}-sample window")
    n_frames = (x.shape[0] - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    return frames * hann_window(win)


def power_spectrum(frames, fft_size=FFT_SIZE):
    """Squared DFT magnitudes of the nonnegative-frequency bins.

    ``frames`` may be a single frame or a stack along the first axis. Frames are
    zero-padded to ``fft_size``. No 1/N normalization is applied, so by
    Parseval ``sum(|X_k|^2 over all N bins) == N * sum(x^2)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if fft_size & (fft_size - 1) or fft_size < frames.shape[-1]:
        raise ValueError(f"fft_size must be a power of two >= frame length, got {fft_size}")
    spec = np.fft.rfft(frames, n=fft_size, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def build_mel_filterbank(num_banks=NUM_MELS, fft_size=FFT_SIZE, sample_rate=SAMPLE_RATE,
                         f_low=F_LOW, f_high=F_HIGH):
    """Triangular filters with centers equally spaced on the Mel scale."""
    if num_banks < 1:
        raise BadBandEdges("num_banks must be >= 1")
    if not (0.0 <= f_low < f_high <= sample_rate / 2.0):
        raise BadBandEdges(
            f"need 0 <= f_low < f_high <= {sample_rate / 2}, got ({f_low}, {f_high})")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), num_banks + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size

    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterBank(weights=weights, band_edges=edges,
                         sample_rate=sample_rate, fft_size=fft_size)


def mel_energies(samples, fb, win_sec=WIN_SEC, hop_sec=HOP_SEC):
    frames = frame_signal(samples, fb.sample_rate, win_sec, hop_sec)
    return power_spectrum(frames, fb.fft_size) @ fb.weights.T


def log_mels(samples, fb=None, floor=LOG_FLOOR):
    """Log Mel-filterbank energies, one row per 10 ms frame."""
    if fb is None:
        fb = default_filterbank()
    energies = mel_energies(samples, fb)
    return SpectralSequence(np.log(np.maximum(energies, floor)), FeatureKind.LOGMEL)


def dct_filters(num_banks):
    """Unnormalized DCT-II basis: ``out[k, m] = cos(k * pi / M * (m + 1/2))``."""
    if num_banks < 1:
        raise ValueError("num_banks must be >= 1")
    k = np.arange(num_banks)[:, None]
    m = np.arange(num_banks)[None, :]
    return np.cos(k * np.pi / num_banks * (m + 0.5))


def mfcc_from_logmels(seq, keep=NUM_CEPS):
    if seq.kind != FeatureKind.LOGMEL:
        raise BadOrder(f"expected a log-Mel sequence, got {seq.kind.name}")
    num_banks = seq.dim
    if not 1 <= keep <= num_banks:
        raise BadOrder(f"cannot keep {keep} coefficients from {num_banks} bands")
    basis = dct_filters(num_banks)[:keep]
    return SpectralSequence(seq.frames @ basis.T, FeatureKind.MFCC, seq.frame_shift)


def mfcc(samples, fb=None, keep=NUM_CEPS):
    return mfcc_from_logmels(log_mels(samples, fb), keep)


def splice(seq, left=SPLICE_LEFT, right=SPLICE_RIGHT):
    """Stack ``left`` past and ``right`` future frames around every frame.

    Out-of-range neighbours are replaced by the first or last frame, so the
    number of blocks equals the number of frames.
    """
    frames = seq.frames if isinstance(seq, SpectralSequence) else np.asarray(seq)
    kind = seq.kind if isinstance(seq, SpectralSequence) else FeatureKind.LOGMEL
    T = frames.shape[0]
    if T < 1:
        raise EmptySignal("cannot splice an empty sequence")
    idx = np.arange(T)[:, None] + np.arange(-left, right + 1)[None, :]
    idx = np.clip(idx, 0, T - 1)
    # (T, W, D) -> (T, D, W): spectral axis first inside each block
    blocks = np.ascontiguousarray(frames[idx].transpose(0, 2, 1))
    return SplicedSequence(blocks, kind, left, right)


_DEFAULT_FB = None


def default_filterbank():
    global _DEFAULT_FB
    if _DEFAULT_FB is None:
        _DEFAULT_FB = build_mel_filterbank()
    return _DEFAULT_FB


def extract(samples, kind, fb=None):
    """log-Mel or MFCC sequence for one waveform."""
    seq = log_mels(samples, fb)
    if FeatureKind(kind) == FeatureKind.MFCC:
        seq = mfcc_from_logmels(seq)
    return seq


# -- audio I/O --

def read_wav(path, expected_rate=SAMPLE_RATE):
    """Read a mono 16-bit PCM WAV into float64 samples in [-1, 1)."""
    with wave.open(str(path), "rb") as f:
        rate, width, channels = f.getframerate(), f.getsampwidth(), f.getnchannels()
        raw = f.readframes(f.getnframes())
    if rate != expected_rate:
        raise UnsupportedRate(f"{path}: {rate} Hz (only {expected_rate} Hz is supported)")
    if width != 2 or channels != 1:
        raise FormatError(f"{path}: expected mono 16-bit PCM, got {channels} ch x {8 * width} bit")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    x = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(x.astype("<i2").tobytes())


# -- feature dump: b"SPEC", u32 version, u8 kind, u32 T, u32 D, float64 LE row-major --

_DUMP_MAGIC = b"SPEC"
_DUMP_VERSION = 1
_DUMP_HEADER = struct.Struct("<4sIBII")


def dump_features(seq):
    frames = np.ascontiguousarray(seq.frames, dtype="<f8")
    T, D = frames.shape
    return _DUMP_HEADER.pack(_DUMP_MAGIC, _DUMP_VERSION, int(seq.kind), T, D) + frames.tobytes()


def load_features(data):
    if len(data) < _DUMP_HEADER.size:
        raise FormatError("feature dump truncated")
    magic, version, kind, T, D = _DUMP_HEADER.unpack_from(data)
    if magic != _DUMP_MAGIC or version != _DUMP_VERSION:
        raise FormatError(f"bad feature dump header {magic!r} v{version}")
    body = data[_DUMP_HEADER.size:]
    if len(body) != 8 * T * D:
        raise FormatError(f"feature dump body has {len(body)} bytes, expected {8 * T * D}")
    frames = np.frombuffer(body, dtype="<f8").reshape(T, D).astype(np.float64)
    return SpectralSequence(frames, FeatureKind(kind))


def save_features(path, seq):
    with open(path, "wb") as f:
        f.write(dump_features(seq))


def read_features(path):
    with open(path, "rb") as f:
        return load_features(f.read())
