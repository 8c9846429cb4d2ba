"""Conditional GAN over Mel spectrogram grids.

The generator multiplies a standard-normal noise vector elementwise with a
genre embedding, reshapes it through a linear layer, upsamples with 2-D
transposed convolutions (each followed by a dilated residual block with
reflection padding), collapses to Mel bands x time, and refines with 1-D
convolutions of increasing kernel size over time.  Weight normalization is
applied to every convolution weight.  Outputs live in the same log-amplitude
domain the autoregressive model uses.

The discriminator reshapes a genre embedding to the spectrogram plane,
stacks it as a second channel, downscales with grouped convolutions and ends
in a linear layer + sigmoid.  Real grids paired with a wrong genre count as
fake, per the conditional labeling scheme.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Batch
from .errors import ConfigError
from .nn import functional as F
from .nn.autograd import Tensor, checkpoint_segment

PROB_EPS = 1e-7
LEAKY_SLOPE = 0.2


# ---------------------------------------------------------------------------
# Configs
# ---------------------------------------------------------------------------


def _conv_out(extent: int, kernel: int, stride: int, pad: int, dilation: int = 1) -> int:
    return (extent + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1


@dataclass(frozen=True)
class GeneratorConfig:
    genre_count: int
    target: tuple[int, int]                      # (num_mels, t_out)
    noise_dim: int = 128
    seed_channels: int = 64
    upsample_specs: tuple[tuple[int, int, int], ...] = ((2, 4, 32), (2, 4, 16), (2, 4, 8))
    finetune_kernels: tuple[int, ...] = (3, 7, 15, 31)
    residual_dilations: tuple[int, ...] = (1, 3, 9)

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(self.target))
        object.__setattr__(self, "upsample_specs", tuple(tuple(s) for s in self.upsample_specs))
        object.__setattr__(self, "finetune_kernels", tuple(self.finetune_kernels))
        object.__setattr__(self, "residual_dilations", tuple(self.residual_dilations))
        if self.noise_dim < 1 or self.seed_channels < 1 or self.genre_count < 1:
            raise ConfigError("noise_dim, seed_channels and genre_count must be positive")
        total = 1
        for stride, kernel, out_ch in self.upsample_specs:
            if stride < 1 or out_ch < 1:
                raise ConfigError(f"bad upsample spec {(stride, kernel, out_ch)}")
            if kernel < stride or (kernel - stride) % 2:
                raise ConfigError(
                    f"upsample kernel {kernel} must be >= stride {stride} with even "
                    "difference so the stage scales exactly by its stride"
                )
            total *= stride
        mels, t_out = self.target
        if mels % total or t_out % total:
            raise ConfigError(
                f"target {self.target} not divisible by the total upsampling factor {total}"
            )
        if list(self.finetune_kernels) != sorted(set(self.finetune_kernels)):
            raise ConfigError(f"finetune_kernels must be strictly increasing, got {self.finetune_kernels}")
        if any(k % 2 == 0 for k in self.finetune_kernels):
            raise ConfigError(f"finetune_kernels must be odd, got {self.finetune_kernels}")
        # reflection padding of a dilated 3-tap conv needs pad <= extent-1
        f_ext, t_ext = self.seed_shape[1], self.seed_shape[2]
        for stride, _, _ in self.upsample_specs:
            f_ext, t_ext = f_ext * stride, t_ext * stride
            for d in self.residual_dilations:
                if d > min(f_ext, t_ext) - 1:
                    raise ConfigError(
                        f"residual dilation {d} too large for stage extent "
                        f"({f_ext}, {t_ext}); shrink dilations or enlarge target"
                    )
        for k in self.finetune_kernels:
            if (k - 1) // 2 > t_out - 1:
                raise ConfigError(f"finetune kernel {k} too large for {t_out} frames")
        for d in self.residual_dilations:
            if d > t_out - 1:
                raise ConfigError(f"residual dilation {d} too large for {t_out} frames")

    @property
    def seed_shape(self) -> tuple[int, int, int]:
        total = 1
        for stride, _, _ in self.upsample_specs:
            total *= stride
        return (self.seed_channels, self.target[0] // total, self.target[1] // total)


@dataclass(frozen=True)
class DiscriminatorConfig:
    genre_count: int
    input_shape: tuple[int, int]                 # (num_mels, t)
    embed_dim: int = 64
    conv_specs: tuple[tuple[int, int, int, int], ...] = ((7, 2, 16, 1), (7, 2, 32, 4), (9, 2, 64, 4))

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "conv_specs", tuple(tuple(s) for s in self.conv_specs))
        if self.genre_count < 1 or self.embed_dim < 1:
            raise ConfigError("genre_count and embed_dim must be positive")
        c_in = 2
        h, w = self.input_shape
        for kernel, stride, out_ch, groups in self.conv_specs:
            if c_in % groups or out_ch % groups:
                raise ConfigError(f"groups={groups} must divide channels ({c_in}, {out_ch})")
            h2 = _conv_out(h, kernel, stride, kernel // 2)
            w2 = _conv_out(w, kernel, stride, kernel // 2)
            if h2 < 1 or w2 < 1 or (h2, w2) >= (h, w):
                raise ConfigError(
                    f"conv spec {(kernel, stride, out_ch, groups)} does not shrink "
                    f"({h}, {w}) -> ({h2}, {w2})"
                )
            h, w, c_in = h2, w2, out_ch
        object.__setattr__(self, "flat_size", c_in * h * w)

    flat_size: int = field(init=False, default=0)


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


class ResidualBlock2d(nn.Module):
    """Three stacked dilated 3x3 convs, each a skip branch with a leaky-ReLU
    in front: ``y = y + conv_d(lrelu(y))``; reflection padding keeps shape."""

    def __init__(self, channels: int, dilations, rng=None, dtype=np.float32):
        self.convs = [
            nn.Conv2d(channels, channels, 3, padding=d, dilation=d,
                      padding_mode="reflection", weight_norm=True, rng=rng, dtype=dtype)
            for d in dilations
        ]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = x + conv(F.leaky_relu(x, LEAKY_SLOPE))
        return x


class ResidualBlock1d(nn.Module):
    def __init__(self, channels: int, dilations, rng=None, dtype=np.float32):
        self.convs = [
            nn.Conv1d(channels, channels, 3, padding=d, dilation=d,
                      padding_mode="reflection", weight_norm=True, rng=rng, dtype=dtype)
            for d in dilations
        ]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = x + conv(F.leaky_relu(x, LEAKY_SLOPE))
        return x


def embed_and_mix(z: Tensor, genre_ids, table) -> Tensor:
    """Elementwise product of the noise vector with the genre embedding row."""
    return z * F.embedding(np.asarray(genre_ids), table)


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng()
        self.config = config
        self.dtype = dtype
        c0, f0, t0 = config.seed_shape
        self.embed = nn.Embedding(config.genre_count, config.noise_dim, rng=rng, dtype=dtype)
        self.fc = nn.Linear(config.noise_dim, c0 * f0 * t0, rng=rng, dtype=dtype)
        self.upsample = []
        self.res2d = []
        c_in = c0
        for stride, kernel, out_ch in config.upsample_specs:
            self.upsample.append(nn.ConvTranspose2d(
                c_in, out_ch, kernel, stride=stride, padding=(kernel - stride) // 2,
                weight_norm=True, rng=rng, dtype=dtype))
            self.res2d.append(ResidualBlock2d(out_ch, config.residual_dilations, rng=rng, dtype=dtype))
            c_in = out_ch
        self.collapse = nn.Conv2d(c_in, 1, 1, weight_norm=True, rng=rng, dtype=dtype)
        mels = config.target[0]
        self.finetune = []
        self.res1d = []
        for k in config.finetune_kernels:
            self.finetune.append(nn.Conv1d(mels, mels, k, padding=(k - 1) // 2,
                                           padding_mode="reflection", weight_norm=True,
                                           rng=rng, dtype=dtype))
            self.res1d.append(ResidualBlock1d(mels, config.residual_dilations, rng=rng, dtype=dtype))

    def forward(self, z: Tensor, genre_ids, checkpointing: bool = False) -> Tensor:
        cfg = self.config
        c0, f0, t0 = cfg.seed_shape
        mixed = embed_and_mix(z, genre_ids, self.embed.weight)
        h = F.reshape(self.fc(mixed), (z.shape[0], c0, f0, t0))
        for up, res in zip(self.upsample, self.res2d):
            h = F.leaky_relu(up(h), LEAKY_SLOPE)
            h = checkpoint_segment(res, h) if checkpointing else res(h)
        h = self.collapse(h)
        h = F.reshape(h, (h.shape[0], cfg.target[0], cfg.target[1]))
        for conv, res in zip(self.finetune, self.res1d):
            h = F.leaky_relu(conv(h), LEAKY_SLOPE)
            h = checkpoint_segment(res, h) if checkpointing else res(h)
        return h


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng()
        self.config = config
        self.dtype = dtype
        mels, t = config.input_shape
        self.embed = nn.Embedding(config.genre_count, config.embed_dim, rng=rng, dtype=dtype)
        self.fc_embed = nn.Linear(config.embed_dim, mels * t, rng=rng, dtype=dtype)
        self.convs = []
        c_in = 2
        for kernel, stride, out_ch, groups in config.conv_specs:
            self.convs.append(nn.Conv2d(c_in, out_ch, kernel, stride=stride,
                                        padding=kernel // 2, groups=groups, rng=rng, dtype=dtype))
            c_in = out_ch
        self.fc_out = nn.Linear(config.flat_size, 1, rng=rng, dtype=dtype)

    def forward(self, mel: Tensor, genre_ids) -> Tensor:
        """Probability that (mel, genre) is a correctly-paired real sample."""
        mels, t = self.config.input_shape
        if mel.shape[1:] != (mels, t):
            raise ValueError(f"expected grids shaped {(mels, t)}, got {tuple(mel.shape[1:])}")
        b = mel.shape[0]
        plane = F.reshape(self.fc_embed(self.embed(np.asarray(genre_ids))), (b, 1, mels, t))
        h = F.concat([F.reshape(mel, (b, 1, mels, t)), plane], axis=1)
        for conv in self.convs:
            h = F.leaky_relu(conv(h), LEAKY_SLOPE)
        logit = self.fc_out(F.reshape(h, (b, -1)))
        return F.reshape(F.sigmoid(logit), (b,))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _log_prob(p: Tensor) -> Tensor:
    return F.log(F.clip(p, PROB_EPS, 1.0 - PROB_EPS))


def _bce(p: Tensor, real: bool) -> Tensor:
    return -(_log_prob(p) if real else _log_prob(1.0 - p)).mean()


def _wrong_genres(genre_ids: np.ndarray, genre_count: int, rng) -> np.ndarray:
    return (genre_ids + rng.integers(1, genre_count, size=len(genre_ids))) % genre_count


def d_loss(disc: Discriminator, gen: Generator, real_batch: Batch,
           rng: np.random.Generator) -> Tensor:
    """Three-way conditional labeling: correctly-paired real grids are real;
    generated grids and mismatched (real grid, wrong genre) pairs are fake,
    weighted 1/2, 1/4, 1/4.  Expects grids already in the model domain.

    Draw order from ``rng``: noise, generated-pair genres, mismatch genres.
    """
    mels = Tensor(np.asarray(real_batch.mels, dtype=disc.dtype))
    ids = np.asarray(real_batch.genre_ids)
    b = mels.shape[0]
    g_count = gen.config.genre_count
    z = Tensor(rng.standard_normal((b, gen.config.noise_dim)).astype(gen.dtype))
    fake_ids = rng.integers(0, g_count, size=b)
    p_real = disc(mels, ids)
    p_fake = disc(gen(z, fake_ids).detach(), fake_ids)
    if g_count < 2:
        warnings.warn("single-genre vocabulary: mismatched-pair loss term skipped")
        return (2.0 / 3.0) * _bce(p_real, True) + (1.0 / 3.0) * _bce(p_fake, False)
    wrong = _wrong_genres(ids, g_count, rng)
    p_mismatch = disc(mels, wrong)
    return 0.5 * _bce(p_real, True) + 0.25 * _bce(p_fake, False) + 0.25 * _bce(p_mismatch, False)


def g_loss(disc: Discriminator, gen: Generator, batch_sz: int,
           rng: np.random.Generator) -> Tensor:
    """Non-saturating objective: -mean log D(G(z, g), g) over fresh noise and
    uniformly drawn genres (draw order: noise, then genres)."""
    z = Tensor(rng.standard_normal((batch_sz, gen.config.noise_dim)).astype(gen.dtype))
    ids = rng.integers(0, gen.config.genre_count, size=batch_sz)
    return -_log_prob(disc(gen(z, ids), ids)).mean()
