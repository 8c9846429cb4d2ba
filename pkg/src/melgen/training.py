"""Training loops, run logging, throughput metering and checkpoint plumbing.

Determinism contract: with a fixed seed, the synchronous loader
(``prefetch_depth=0``) and an injected monotonic ``clock``, two runs produce
byte-identical run logs and checkpoints.  The wall clock is injectable
precisely so the timing columns can be reproduced under test; real runs use
``time.perf_counter``.

An epoch is one pass of ``total_corpus_seconds / clip_seconds`` chunk draws.
A checkpoint is written after every epoch; a numeric fault (NaN/Inf) aborts
training immediately, leaving the last epoch checkpoint in place.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import cmelgan, melnet
from .config import TrainConfig
from .data import Batch, GenreVocab, batcher, clip_samples, load_corpus_cache
from .dsp import MelSpectrogram, SpectroParams, griffin_lim, mel_spectrogram, mel_to_linear
from .errors import ConfigError
from .nn import Adam, Tensor, backward, load_checkpoint, no_grad, save_checkpoint
from .wavio import read_wav, write_wav

RUNLOG_HEADER = "step,epoch,loss_a,loss_b,rate_khz,wall_s"

# informational reference training speeds (kHz) printed by `bench`:
# autoregressive small/large, GAN small/large on the original GPU setup
REFERENCE_SPEEDS_KHZ = (307.0, 75.0, 980.0, 705.0)


class ThroughputMeter:
    """Audio samples consumed per wall-clock second, in kHz; exact ratio of
    integer sample counts to measured seconds."""

    def __init__(self, clock=time.perf_counter):
        self._clock = clock
        self._t0 = clock()
        self.samples = 0

    def add_samples(self, n: int) -> None:
        self.samples += int(n)

    @property
    def seconds(self) -> float:
        return self._clock() - self._t0

    @property
    def rate_khz(self) -> float:
        s = self.seconds
        return self.samples / (1000.0 * s) if s > 0 else 0.0


@dataclass
class RunRecord:
    step: int
    epoch: int
    loss_a: float
    loss_b: float | None
    rate_khz: float
    wall_s: float


class RunLog:
    def __init__(self):
        self.records: list[RunRecord] = []

    def add(self, step, epoch, loss_a, loss_b, rate_khz, wall_s) -> None:
        if self.records and step <= self.records[-1].step:
            raise ValueError("run log steps must be strictly increasing")
        self.records.append(RunRecord(step, epoch, float(loss_a),
                                      None if loss_b is None else float(loss_b),
                                      rate_khz, wall_s))

    def write_csv(self, path) -> None:
        lines = [RUNLOG_HEADER]
        for r in self.records:
            loss_b = "" if r.loss_b is None else f"{r.loss_b:.8g}"
            lines.append(f"{r.step},{r.epoch},{r.loss_a:.8g},{loss_b},"
                         f"{r.rate_khz:.6g},{r.wall_s:.6g}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")


@dataclass
class TrainResult:
    model: object
    runlog: RunLog
    checkpoint_path: str | None
    vocab: GenreVocab
    spectro: SpectroParams
    frames: int


def _spectro_params(cfg: TrainConfig) -> SpectroParams:
    d = cfg.data
    return SpectroParams(d.sample_rate, d.stft_win_sz, d.stft_hop_sz, d.num_mels)


def _steps_per_epoch(total_duration_s: float, clip_seconds: float, batch_sz: int) -> int:
    return max(1, int(round(total_duration_s / clip_seconds / batch_sz)))


def _epoch_of(step: int, steps_per_epoch: int) -> int:
    return (step - 1) // steps_per_epoch + 1


# ---------------------------------------------------------------------------
# Autoregressive model training
# ---------------------------------------------------------------------------


def _melnet_frames(cfg: TrainConfig, model_cfg: melnet.MelNetConfig, params: SpectroParams) -> int:
    axes = melnet.merge_axes(model_cfg.num_tiers)
    t_div = 1 << sum(1 for a in axes.values() if a == melnet.TIME_AXIS)
    f_div = 1 << sum(1 for a in axes.values() if a == melnet.FREQ_AXIS)
    if cfg.data.num_mels % f_div:
        raise ConfigError(f"num_mels={cfg.data.num_mels} not divisible by the "
                          f"tier scheme's frequency factor {f_div}")
    raw = params.n_frames(clip_samples(cfg.data.win_sz, cfg.data.sample_rate))
    frames = (raw // t_div) * t_div
    if frames < t_div:
        raise ConfigError(f"clip of {raw} frames too short for {model_cfg.num_tiers} tiers")
    return frames


def train_melnet(cfg: TrainConfig, manifest, out_dir=None, steps: int | None = None,
                 clock=time.perf_counter, prefetch_depth: int = 0,
                 save_checkpoints: bool = True) -> TrainResult:
    if cfg.model_kind != "melnet":
        raise ConfigError(f"config is for {cfg.model_kind!r}, expected melnet")
    ms = cfg.melnet
    init_rng, data_rng = (np.random.default_rng(s)
                          for s in np.random.SeedSequence(ms.seed).spawn(2))
    vocab = GenreVocab.from_manifest(manifest)
    cache = load_corpus_cache(manifest, cfg.data.sample_rate)
    params = _spectro_params(cfg)
    model_cfg = melnet.MelNetConfig(dims=ms.dims, n_layers=ms.n_layers,
                                    directions=ms.directions, mixture_k=ms.mixture_k,
                                    genre_count=len(vocab))
    frames = _melnet_frames(cfg, model_cfg, params)
    model = melnet.MelNet(model_cfg, rng=init_rng)
    opt = Adam(model.parameters(), lr=ms.lr)

    total_duration = sum(e.duration_s for e in manifest)
    spe = _steps_per_epoch(total_duration, cfg.data.win_sz, cfg.data.batch_sz)
    n_steps = steps if steps is not None else ms.epochs * spe
    clip_n = clip_samples(cfg.data.win_sz, cfg.data.sample_rate)

    echo = {
        "dims": ms.dims, "n_layers": list(ms.n_layers), "directions": list(ms.directions),
        "mixture_k": ms.mixture_k, "genres": list(vocab.labels),
        "sample_rate": cfg.data.sample_rate, "num_mels": cfg.data.num_mels,
        "stft_win_sz": cfg.data.stft_win_sz, "stft_hop_sz": cfg.data.stft_hop_sz,
        "win_sz": cfg.data.win_sz, "frames": frames,
    }

    meter = ThroughputMeter(clock)
    runlog = RunLog()
    ckpt_path = None

    def save(tag):
        nonlocal ckpt_path
        if not save_checkpoints or out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"melnet_{tag}.ckpt")
        save_checkpoint(path, "melnet", echo, model.state_arrays())
        ckpt_path = os.path.join(out_dir, "melnet_latest.ckpt")
        save_checkpoint(ckpt_path, "melnet", echo, model.state_arrays())

    with batcher(cache, vocab, cfg.data.batch_sz, cfg.data.win_sz, params,
                 data_rng, prefetch_depth) as stream:
        for step in range(1, n_steps + 1):
            batch = next(stream)
            grids = melnet.to_log_domain(batch.mels[:, :, :frames]).transpose(0, 2, 1)
            opt.zero_grad()
            loss = model.loss(grids, batch.genre_ids, checkpointing=ms.checkpointing)
            backward(loss)
            opt.step()
            meter.add_samples(cfg.data.batch_sz * clip_n)
            epoch = _epoch_of(step, spe)
            runlog.add(step, epoch, loss.item(), None, meter.rate_khz, meter.seconds)
            if step % spe == 0:
                save(f"epoch{epoch:03d}")
    if n_steps % spe:
        save("final")
    return TrainResult(model, runlog, ckpt_path, vocab, params, frames)


# ---------------------------------------------------------------------------
# Adversarial training
# ---------------------------------------------------------------------------


def _gan_configs(cfg: TrainConfig, vocab_size: int, params: SpectroParams):
    gs = cfg.cmelgan
    total = 1
    for _ in gs.upsample_channels:
        total *= gs.upsample_stride
    raw = params.n_frames(clip_samples(cfg.data.win_sz, cfg.data.sample_rate))
    t_out = gs.t_out if gs.t_out is not None else (raw // total) * total
    if t_out < total or t_out > raw:
        raise ConfigError(f"t_out={t_out} incompatible with {raw} frames per clip")
    gen_cfg = cmelgan.GeneratorConfig(
        genre_count=vocab_size, target=(cfg.data.num_mels, t_out),
        noise_dim=gs.noise_dim, seed_channels=gs.seed_channels,
        upsample_specs=tuple((gs.upsample_stride, gs.upsample_kernel, ch)
                             for ch in gs.upsample_channels),
        finetune_kernels=gs.finetune_kernels, residual_dilations=gs.dilations)
    conv_specs = []
    for i, (k, s, ch) in enumerate(zip(gs.disc_kernels, gs.disc_strides, gs.disc_channels)):
        groups = 1 if i == 0 else gs.disc_groups
        conv_specs.append((k, s, ch, groups))
    disc_cfg = cmelgan.DiscriminatorConfig(
        genre_count=vocab_size, input_shape=(cfg.data.num_mels, t_out),
        embed_dim=gs.disc_embed_dim, conv_specs=tuple(conv_specs))
    return gen_cfg, disc_cfg, t_out


def train_cmelgan(cfg: TrainConfig, manifest, out_dir=None, steps: int | None = None,
                  clock=time.perf_counter, prefetch_depth: int = 0,
                  save_checkpoints: bool = True) -> TrainResult:
    if cfg.model_kind != "cmelgan":
        raise ConfigError(f"config is for {cfg.model_kind!r}, expected cmelgan")
    gs = cfg.cmelgan
    init_rng, data_rng, gan_rng = (np.random.default_rng(s)
                                   for s in np.random.SeedSequence(gs.seed).spawn(3))
    vocab = GenreVocab.from_manifest(manifest)
    cache = load_corpus_cache(manifest, cfg.data.sample_rate)
    params = _spectro_params(cfg)
    gen_cfg, disc_cfg, t_out = _gan_configs(cfg, len(vocab), params)
    gen = cmelgan.Generator(gen_cfg, rng=init_rng)
    disc = cmelgan.Discriminator(disc_cfg, rng=init_rng)
    opt_g = Adam(gen.parameters(), lr=gs.lr, betas=(0.5, 0.9))
    opt_d = Adam(disc.parameters(), lr=gs.lr, betas=(0.5, 0.9))

    total_duration = sum(e.duration_s for e in manifest)
    spe = _steps_per_epoch(total_duration, cfg.data.win_sz, cfg.data.batch_sz)
    n_steps = steps if steps is not None else gs.epochs * spe
    clip_n = clip_samples(cfg.data.win_sz, cfg.data.sample_rate)

    echo = {
        "genres": list(vocab.labels), "sample_rate": cfg.data.sample_rate,
        "num_mels": cfg.data.num_mels, "stft_win_sz": cfg.data.stft_win_sz,
        "stft_hop_sz": cfg.data.stft_hop_sz, "win_sz": cfg.data.win_sz,
        "t_out": t_out, "noise_dim": gen_cfg.noise_dim,
        "seed_channels": gen_cfg.seed_channels,
        "upsample_specs": [list(s) for s in gen_cfg.upsample_specs],
        "finetune_kernels": list(gen_cfg.finetune_kernels),
        "dilations": list(gen_cfg.residual_dilations),
        "disc_embed_dim": disc_cfg.embed_dim,
        "disc_conv_specs": [list(s) for s in disc_cfg.conv_specs],
    }

    meter = ThroughputMeter(clock)
    runlog = RunLog()
    ckpt_path = None

    def save(tag):
        nonlocal ckpt_path
        if not save_checkpoints or out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        arrays = {f"generator.{k}": v for k, v in gen.state_arrays().items()}
        arrays.update({f"discriminator.{k}": v for k, v in disc.state_arrays().items()})
        path = os.path.join(out_dir, f"cmelgan_{tag}.ckpt")
        save_checkpoint(path, "cmelgan", echo, arrays)
        ckpt_path = os.path.join(out_dir, "cmelgan_latest.ckpt")
        save_checkpoint(ckpt_path, "cmelgan", echo, arrays)

    with batcher(cache, vocab, cfg.data.batch_sz, cfg.data.win_sz, params,
                 data_rng, prefetch_depth) as stream:
        for step in range(1, n_steps + 1):
            batch = next(stream)
            log_batch = Batch(melnet.to_log_domain(batch.mels[:, :, :t_out]),
                              batch.genre_ids)
            opt_d.zero_grad()
            dl = cmelgan.d_loss(disc, gen, log_batch, gan_rng)
            backward(dl)
            opt_d.step()
            opt_g.zero_grad()
            gl = cmelgan.g_loss(disc, gen, cfg.data.batch_sz, gan_rng)
            backward(gl)
            opt_g.step()
            meter.add_samples(cfg.data.batch_sz * clip_n)
            epoch = _epoch_of(step, spe)
            runlog.add(step, epoch, dl.item(), gl.item(), meter.rate_khz, meter.seconds)
            if step % spe == 0:
                save(f"epoch{epoch:03d}")
    if n_steps % spe:
        save("final")
    return TrainResult((gen, disc), runlog, ckpt_path, vocab, params, t_out)


# ---------------------------------------------------------------------------
# Generation and inversion
# ---------------------------------------------------------------------------


def generate_from_checkpoint(ckpt_path, genre: str, seed: int, out_wav,
                             gl_iters: int = 60):
    """Sample a spectrogram from a checkpointed model, invert it and write a
    WAV.  Fully deterministic in (checkpoint, genre, seed)."""
    ck = load_checkpoint(ckpt_path)
    echo = ck.config
    vocab = GenreVocab(echo["genres"])
    genre_id = vocab.genre_id(genre)
    params = SpectroParams(echo["sample_rate"], echo["stft_win_sz"],
                           echo["stft_hop_sz"], echo["num_mels"])
    rng = np.random.default_rng(seed)
    if ck.model_kind == "melnet":
        model_cfg = melnet.MelNetConfig(dims=echo["dims"], n_layers=tuple(echo["n_layers"]),
                                        directions=tuple(echo["directions"]),
                                        mixture_k=echo["mixture_k"], genre_count=len(vocab))
        model = melnet.MelNet(model_cfg)
        model.load_state(ck.arrays)
        grid = model.multiscale_generate(genre_id, (echo["frames"], echo["num_mels"]), rng)
        log_mel = grid.T
    elif ck.model_kind == "cmelgan":
        gen_cfg = cmelgan.GeneratorConfig(
            genre_count=len(vocab), target=(echo["num_mels"], echo["t_out"]),
            noise_dim=echo["noise_dim"], seed_channels=echo["seed_channels"],
            upsample_specs=tuple(tuple(s) for s in echo["upsample_specs"]),
            finetune_kernels=tuple(echo["finetune_kernels"]),
            residual_dilations=tuple(echo["dilations"]))
        gen = cmelgan.Generator(gen_cfg)
        prefix = "generator."
        gen.load_state({k[len(prefix):]: v for k, v in ck.arrays.items()
                        if k.startswith(prefix)})
        z = Tensor(rng.standard_normal((1, gen_cfg.noise_dim)).astype(np.float32))
        with no_grad():
            log_mel = gen(z, [genre_id]).data[0]
    else:
        raise ValueError(f"unknown model kind {ck.model_kind!r} in {ckpt_path}")
    mel = MelSpectrogram(melnet.from_log_domain(log_mel), params)
    wave = griffin_lim(mel_to_linear(mel), params, iters=gl_iters, seed=seed)
    write_wav(out_wav, wave)
    return wave


def invert_wav(in_path, params: SpectroParams, iters: int, out_path, seed: int = 0):
    """Mel round trip of real audio: analyze, invert the filterbank, rebuild
    phase, write the result.  Returns the spectral-convergence error series."""
    wave = read_wav(in_path)
    if wave.sample_rate != params.sample_rate:
        params = SpectroParams(wave.sample_rate, params.stft_win_sz, params.stft_hop_sz,
                               params.num_mels, params.f_min, None, params.power)
    mel = mel_spectrogram(wave, params)
    out, errors = griffin_lim(mel_to_linear(mel), params, iters=iters, seed=seed,
                              return_errors=True)
    write_wav(out_path, out)
    return errors


def bench(cfg: TrainConfig, manifest, steps: int, clock=time.perf_counter) -> dict:
    """Run the training loop for a few steps and report throughput."""
    train = train_melnet if cfg.model_kind == "melnet" else train_cmelgan
    result = train(cfg, manifest, out_dir=None, steps=steps, clock=clock,
                   save_checkpoints=False)
    last = result.runlog.records[-1]
    return {
        "model": cfg.model_kind,
        "steps": steps,
        "samples": steps * cfg.data.batch_sz * clip_samples(cfg.data.win_sz,
                                                            cfg.data.sample_rate),
        "wall_s": last.wall_s,
        "rate_khz": last.rate_khz,
        "reference_khz": REFERENCE_SPEEDS_KHZ,
    }
