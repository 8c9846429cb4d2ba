"""WAV file I/O: 16-bit PCM little-endian, mono after stereo downmix.

Integer samples map to floats by division by 32768; writing rounds and
clips back to the int16 range, so a write/read round trip is exact to
one quantization step.
"""

from __future__ import annotations

import wave

import numpy as np

from .dsp import Waveform

_SCALE = 32768.0


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM WAV file; stereo is downmixed by channel averaging."""
    with wave.open(str(path), "rb") as f:
        n_channels = f.getnchannels()
        sampwidth = f.getsampwidth()
        rate = f.getframerate()
        n_frames = f.getnframes()
        if sampwidth != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported, got {8 * sampwidth}-bit")
        raw = f.readframes(n_frames)
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _SCALE
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return Waveform(data, rate)


def write_wav(path, w: Waveform) -> None:
    """Write a mono 16-bit PCM WAV file."""
    ints = np.clip(np.rint(w.samples * _SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(ints.tobytes())
