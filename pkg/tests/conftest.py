"""Shared fixtures: synthetic tone corpora and waveform helpers."""

import numpy as np
import pytest

from melgen.data import scan_corpus, write_manifest
from melgen.dsp import SpectroParams, Waveform
from melgen.wavio import write_wav


def sine_wave(freq: float, seconds: float, sample_rate: int, amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sample_rate)


def make_tone_corpus(root, genres=("low", "high"), files_per_genre=3,
                     sample_rate=8000, seconds=2.0, seed=0):
    """Write a tiny corpus of noisy tones, low genres around 200-400 Hz and
    high genres around 1.5-2 kHz; returns the manifest entries."""
    rng = np.random.default_rng(seed)
    bands = {"low": (200, 300, 400), "high": (1500, 1800, 2100)}
    for genre in genres:
        d = root / genre
        d.mkdir(parents=True)
        freqs = bands.get(genre, (500, 700, 900))
        for i in range(files_per_genre):
            t = np.arange(int(seconds * sample_rate)) / sample_rate
            x = 0.4 * np.sin(2 * np.pi * freqs[i % len(freqs)] * t)
            x = x + 0.05 * rng.standard_normal(len(t))
            write_wav(d / f"tone{i}.wav", Waveform(np.clip(x, -1.0, 1.0), sample_rate))
    return scan_corpus([str(root / g) for g in genres]).entries


@pytest.fixture
def tone_corpus(tmp_path):
    entries = make_tone_corpus(tmp_path)
    manifest_path = tmp_path / "manifest.csv"
    write_manifest(entries, manifest_path)
    return {"root": tmp_path, "entries": entries, "manifest": manifest_path}


@pytest.fixture
def small_params():
    return SpectroParams(sample_rate=8000, stft_win_sz=512, stft_hop_sz=256, num_mels=16)
