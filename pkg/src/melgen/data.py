"""Corpus indexing, ingestion and batching.

A corpus is a set of WAV files under genre-labeled directories.  Scanning
produces a manifest (CSV rows of genre, path, duration, sample rate); loading
resamples every file once into an in-memory cache so that chunk sampling
never touches the disk again (the cache keeps an instrumented read counter).
Batches are assembled from random fixed-length chunks of random songs,
optionally prepared ahead by a single producer thread.

Determinism: with ``prefetch_depth=0`` (synchronous) and a fixed RNG the
chunk/batch stream is bit-reproducible.  With a producer thread the batch
*contents* still follow the RNG sequence, but consumers should not rely on
cross-run timing.  The cache itself is immutable after warm-up and safe to
share across threads.
"""

from __future__ import annotations

import os
import queue
import threading
import wave
from dataclasses import dataclass

import numpy as np

from .dsp import MelSpectrogram, SpectroParams, Waveform, mel_spectrogram, resample
from .errors import CorpusError, EmptyCorpusError, ParseError
from .wavio import read_wav

MANIFEST_HEADER = "genre,path,duration_s,sample_rate"


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    genre: str
    path: str
    duration_s: float
    sample_rate: int

    def __post_init__(self):
        if not self.genre:
            raise ValueError("genre must be non-empty")
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")


@dataclass
class ScanResult:
    entries: list[ManifestEntry]
    skipped: list[str]

    @property
    def total_duration_s(self) -> float:
        return sum(e.duration_s for e in self.entries)


def _wav_header_info(path) -> tuple[float, int]:
    with wave.open(str(path), "rb") as f:
        rate = f.getframerate()
        frames = f.getnframes()
    if rate <= 0 or frames <= 0:
        raise wave.Error("empty or invalid WAV")
    return frames / rate, rate


def scan_corpus(root_dirs, genre_of_dir: dict[str, str] | None = None) -> ScanResult:
    """Index every decodable WAV under the given directories.

    The genre of a file is looked up from ``genre_of_dir`` by its root
    directory (falling back to the directory's basename).  Undecodable files
    are skipped and reported in the result.
    """
    genre_of_dir = genre_of_dir or {}
    entries: list[ManifestEntry] = []
    skipped: list[str] = []
    for root in root_dirs:
        genre = genre_of_dir.get(str(root), os.path.basename(os.path.normpath(str(root))))
        for dirpath, _, filenames in sorted(os.walk(root)):
            for fname in sorted(filenames):
                path = os.path.join(dirpath, fname)
                try:
                    duration, rate = _wav_header_info(path)
                except (wave.Error, EOFError, OSError):
                    skipped.append(path)
                    continue
                entries.append(ManifestEntry(genre, path, duration, rate))
    if not entries:
        raise EmptyCorpusError(f"no decodable audio found under {list(map(str, root_dirs))}")
    return ScanResult(entries, skipped)


def write_manifest(entries: list[ManifestEntry], path) -> None:
    """Write the fixed-column CSV (header ``genre,path,duration_s,sample_rate``)."""
    lines = [MANIFEST_HEADER]
    for e in entries:
        if "," in e.path or "," in e.genre:
            raise ValueError(f"manifest fields may not contain commas: {e.path!r}")
        lines.append(f"{e.genre},{e.path},{e.duration_s!r},{e.sample_rate}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ParseError(f"expected header {MANIFEST_HEADER!r}", line=1)
    entries = []
    for lineno, row in enumerate(lines[1:], start=2):
        if not row.strip():
            continue
        fields = row.split(",")
        if len(fields) != 4:
            raise ParseError(f"expected 4 comma-separated fields, got {len(fields)}", line=lineno)
        genre, fpath, dur_s, rate_s = fields
        try:
            entry = ManifestEntry(genre, fpath, float(dur_s), int(rate_s))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        entries.append(entry)
    return entries


class GenreVocab:
    """Stable label <-> index mapping (labels sorted, indices 0..G-1)."""

    def __init__(self, labels):
        self.labels = tuple(labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate genre labels")
        self._index = {label: i for i, label in enumerate(self.labels)}

    @classmethod
    def from_manifest(cls, entries) -> "GenreVocab":
        return cls(sorted({e.genre for e in entries}))

    def __len__(self):
        return len(self.labels)

    def genre_id(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown genre {label!r}; known genres: {list(self.labels)}") from None

    def label(self, genre_id: int) -> str:
        return self.labels[genre_id]


# ---------------------------------------------------------------------------
# In-memory cache
# ---------------------------------------------------------------------------


class CorpusCache:
    """All corpus audio resampled and held in memory; one disk read per file."""

    def __init__(self, entries: list[ManifestEntry], target_rate: int, loader=read_wav):
        if not entries:
            raise EmptyCorpusError("cannot build a cache from an empty manifest")
        self.entries = list(entries)
        self.target_rate = target_rate
        self.disk_reads = 0
        self.waveforms: dict[str, np.ndarray] = {}
        for e in self.entries:
            if e.path in self.waveforms:
                continue
            try:
                w = loader(e.path)
            except (OSError, wave.Error) as exc:
                raise CorpusError(f"failed to load {e.path!r}: {exc}") from exc
            self.disk_reads += 1
            self.waveforms[e.path] = resample(w, target_rate).samples


def load_corpus_cache(entries: list[ManifestEntry], target_rate: int) -> CorpusCache:
    return CorpusCache(entries, target_rate)


# ---------------------------------------------------------------------------
# Chunk sampling and batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Chunk:
    mel: MelSpectrogram
    genre_id: int
    source_path: str
    offset_s: float


@dataclass(frozen=True)
class Batch:
    mels: np.ndarray        # [batch, num_mels, frames] float32
    genre_ids: np.ndarray   # [batch] int64


def clip_samples(clip_seconds: float, sample_rate: int) -> int:
    return int(round(clip_seconds * sample_rate))


def sample_chunk(cache: CorpusCache, vocab: GenreVocab, clip_seconds: float,
                 params: SpectroParams, rng: np.random.Generator) -> Chunk:
    """A random fixed-length excerpt of a random song, as a Mel spectrogram.

    Songs are drawn uniformly over manifest entries and the offset uniformly
    over valid starts; songs shorter than the clip are zero-padded at the end.
    """
    entry = cache.entries[int(rng.integers(len(cache.entries)))]
    samples = cache.waveforms[entry.path]
    n_clip = clip_samples(clip_seconds, cache.target_rate)
    if n_clip < params.stft_win_sz:
        raise ValueError(f"clip of {n_clip} samples is shorter than one STFT window")
    if len(samples) < n_clip:
        samples = np.concatenate([samples, np.zeros(n_clip - len(samples))])
    offset = int(rng.integers(len(samples) - n_clip + 1))
    excerpt = Waveform(samples[offset:offset + n_clip], cache.target_rate)
    mel = mel_spectrogram(excerpt, params)
    return Chunk(mel, vocab.genre_id(entry.genre), entry.path, offset / cache.target_rate)


def _make_batch(cache, vocab, batch_sz, clip_seconds, params, rng) -> Batch:
    chunks = [sample_chunk(cache, vocab, clip_seconds, params, rng) for _ in range(batch_sz)]
    mels = np.stack([c.mel.values for c in chunks]).astype(np.float32)
    ids = np.array([c.genre_id for c in chunks], dtype=np.int64)
    return Batch(mels, ids)


class Batcher:
    """Endless stream of batches; ``prefetch_depth > 0`` runs one producer
    thread filling a bounded queue of that depth.
    """

    def __init__(self, cache: CorpusCache, vocab: GenreVocab, batch_sz: int,
                 clip_seconds: float, params: SpectroParams, rng: np.random.Generator,
                 prefetch_depth: int = 0):
        if prefetch_depth < 0:
            raise ValueError(f"prefetch_depth must be >= 0, got {prefetch_depth}")
        self._args = (cache, vocab, batch_sz, clip_seconds, params, rng)
        self._depth = prefetch_depth
        self._queue: queue.Queue | None = None
        self._stop = threading.Event()
        self._worker: threading.Thread | None = None
        self._error: BaseException | None = None
        if prefetch_depth > 0:
            self._queue = queue.Queue(maxsize=prefetch_depth)
            self._worker = threading.Thread(target=self._produce, daemon=True)
            self._worker.start()

    def _produce(self):
        try:
            while not self._stop.is_set():
                batch = _make_batch(*self._args)
                while not self._stop.is_set():
                    try:
                        self._queue.put(batch, timeout=0.05)
                        break
                    except queue.Full:
                        continue
        except BaseException as exc:  # surfaced on the consumer side
            self._error = exc

    def __iter__(self):
        return self

    def __next__(self) -> Batch:
        if self._queue is None:
            return _make_batch(*self._args)
        while True:
            if self._error is not None:
                raise self._error
            try:
                return self._queue.get(timeout=0.05)
            except queue.Empty:
                continue

    def close(self):
        self._stop.set()
        if self._worker is not None:
            self._worker.join(timeout=2.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def batcher(cache, vocab, batch_sz, clip_seconds, params, rng,
            prefetch_depth: int = 0) -> Batcher:
    return Batcher(cache, vocab, batch_sz, clip_seconds, params, rng, prefetch_depth)
