"""Audio frontend: WAV I/O, log-mel features and the trainable temporal block."""
import io
from dataclasses import dataclass

import librosa
import numpy as np
from scipy import signal
from scipy.io import wavfile

from . import autograd as ag
from .errors import InputError, InvalidInputError
from .layers import Conv1d, Module
from .utils import atomic_write_bytes, linear_resample_matrix

SAMPLE_RATE = 16000
WIN_LENGTH = 400
HOP_LENGTH = 160
N_MELS = 80
LOG_FLOOR = 1e-10
DOWN_LAYERS = 3

_MEL_BANKS = {}


@dataclass
class AudioTokenSeq:
    """Audio tokens at motion-token rate, ``tokens`` is (N, D_a)."""

    tokens: np.ndarray

    def __len__(self):
        return self.tokens.shape[0]


def mel_filter_bank(sample_rate=SAMPLE_RATE, n_fft=WIN_LENGTH, n_mels=N_MELS):
    key = (sample_rate, n_fft, n_mels)
    if key not in _MEL_BANKS:
        _MEL_BANKS[key] = librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels)
    return _MEL_BANKS[key]


def extract_audio_features(waveform, sample_rate=SAMPLE_RATE, n_mels=N_MELS):
    """
    Log-mel filterbank features, 25 ms Hann window, 10 ms hop.

    Args:
        waveform (np.ndarray): Mono samples
        sample_rate (int): Must be 16000
        n_mels (int): Number of mel bins

    Returns:
        np.ndarray: (frames, n_mels) natural-log magnitudes floored at 1e-10;
        frames = (N - 400) // 160 + 1, inputs shorter than one window are
        zero-padded to one frame

    Raises:
        InvalidInputError: On an empty or multi-channel waveform or another rate
    """
    waveform = np.asarray(waveform, dtype=np.float64)
    if sample_rate != SAMPLE_RATE:
        raise InvalidInputError(f"sample rate must be {SAMPLE_RATE}, got {sample_rate}")
    if waveform.ndim != 1:
        raise InvalidInputError(f"waveform must be mono (1-D), got shape {waveform.shape}")
    if waveform.size == 0:
        raise InvalidInputError("waveform is empty")
    if not np.all(np.isfinite(waveform)):
        raise InvalidInputError("waveform contains non-finite samples")
    if waveform.size < WIN_LENGTH:
        waveform = np.pad(waveform, (0, WIN_LENGTH - waveform.size))

    _, _, magnitude = signal.spectrogram(
        waveform, fs=sample_rate, window=signal.get_window("hann", WIN_LENGTH), nperseg=WIN_LENGTH,
        noverlap=WIN_LENGTH - HOP_LENGTH, detrend=False, mode="magnitude")
    mel = mel_filter_bank(sample_rate, WIN_LENGTH, n_mels) @ magnitude
    return np.log(np.maximum(mel, LOG_FLOOR)).T.astype(np.float32)


def read_wav(path):
    """
    Read a PCM16 mono 16 kHz WAV file.

    Returns:
        np.ndarray: float32 samples in [-1, 1)

    Raises:
        InputError: If the file is unreadable or not PCM16 mono 16 kHz
    """
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read WAV {path}: {exc}")
    if rate != SAMPLE_RATE:
        raise InputError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE} (no resampling)")
    if data.dtype != np.int16:
        raise InputError(f"{path}: sample format {data.dtype}, expected PCM16")
    if data.ndim != 1:
        raise InputError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.size == 0:
        raise InputError(f"{path}: no samples")
    return (data.astype(np.float32) / 32768.0).astype(np.float32)


def wav_bytes(waveform, sample_rate=SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(waveform, dtype=np.float64) * 32767.0), -32768, 32767)
    buffer = io.BytesIO()
    wavfile.write(buffer, sample_rate, pcm.astype(np.int16))
    return buffer.getvalue()


def write_wav(path, waveform, sample_rate=SAMPLE_RATE):
    atomic_write_bytes(path, wav_bytes(waveform, sample_rate))


def token_count(n_samples, downsample, fps=20, sample_rate=SAMPLE_RATE):
    """Motion tokens covering ``n_samples`` of audio: ceil(frames / l), frames at ``fps``."""
    frames = int(np.ceil(n_samples * fps / sample_rate))
    return max(1, -(-frames // downsample))


class AudioTemporalBlock(Module):
    """
    Conv stack from 100 Hz log-mel frames to D_a-wide tokens.

    A width-preserving conv is followed by three stride-2 convs; linear
    interpolation then hits the requested token count exactly.
    """

    def __init__(self, n_mels, width, rng):
        super().__init__()
        self.conv_in = Conv1d(n_mels, width, 3, rng, padding=1)
        self.down = [Conv1d(width, width, 4, rng, stride=2, padding=1) for _ in range(DOWN_LAYERS)]

    def forward(self, frames, target_len):
        """
        Args:
            frames: (B, F, n_mels) normalized log-mel frames
            target_len (int): Output token count

        Returns:
            Tensor: (B, target_len, D_a)
        """
        if target_len < 1:
            raise InvalidInputError(f"target_len must be at least 1, got {target_len}")
        frames = ag.as_tensor(frames)
        minimum = 2 ** DOWN_LAYERS
        if frames.shape[1] < minimum:
            frames = ag.concat([frames, np.zeros((frames.shape[0], minimum - frames.shape[1],
                                                  frames.shape[2]), dtype=frames.data.dtype)], axis=1)
        h = ag.gelu(self.conv_in(frames))
        for conv in self.down:
            h = ag.gelu(conv(h))
        weights = linear_resample_matrix(h.shape[1], target_len).astype(h.data.dtype)
        return ag.matmul(weights, h)


def temporal_block(block, frames, target_len):
    """
    Map one utterance's frames to exactly ``target_len`` audio tokens.

    Args:
        block (AudioTemporalBlock): Trained block
        frames (np.ndarray): (F, n_mels) normalized log-mel frames

    Returns:
        AudioTokenSeq: (target_len, D_a) tokens
    """
    with ag.no_grad():
        tokens = block(np.asarray(frames, dtype=np.float32)[None], target_len).data[0]
    return AudioTokenSeq(tokens)
