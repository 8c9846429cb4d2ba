"""Autoregressive spectrogram model.

Grids are handled time-major as ``[batch, time, mel]`` (``i`` indexes time
frames, ``j`` Mel bands).  Each per-bin conditional is a Gaussian mixture
with parameters produced under a strict raster ordering: the parameters at
``(i, j)`` depend only on earlier time columns plus lower bands within the
current column.  Causality comes from input shifts (one step in time for the
time stack, one band in frequency for the frequency stack) and from the scan
directions of the recurrences.

Multiscale generation interleaves tiers coarse-to-fine: the full grid is
split along time first, then alternating time/frequency; each tier models
the odd lines of its split conditioned on the even lines through a feature
extraction recurrence over time.  Genre enters as an embedding added to the
lowest tier's layer-0 hidden states.

Grids are modeled in log amplitude: ``log(x + 1e-6)``, inverted by
:func:`from_log_domain` before spectrogram inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError
from .nn import functional as F
from .nn.autograd import Tensor, checkpoint_segment, no_grad
from .nn.functional import LOG_2PI

LOG_FLOOR = 1e-6
LOG_SIGMA_CLAMP = 7.0

TIME_AXIS, FREQ_AXIS = 0, 1  # axes of an unbatched (time, mel) grid


def to_log_domain(values: np.ndarray) -> np.ndarray:
    return np.log(values + LOG_FLOOR)


def from_log_domain(y: np.ndarray) -> np.ndarray:
    return np.maximum(np.exp(y) - LOG_FLOOR, 0.0)


# ---------------------------------------------------------------------------
# Config and mixture parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MelNetConfig:
    """dims: hidden width; n_layers: per-tier layer counts; directions:
    per-tier extractor bidirectionality flags (2 = bidirectional); mixture_k:
    Gaussian mixture components per bin."""

    dims: int
    n_layers: tuple[int, ...]
    directions: tuple[int, ...] = (2, 1)
    mixture_k: int = 10
    genre_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n_layers", tuple(self.n_layers))
        object.__setattr__(self, "directions", tuple(self.directions))
        if self.dims < 1:
            raise ConfigError(f"dims must be >= 1, got {self.dims}")
        if self.mixture_k < 1:
            raise ConfigError(f"mixture_k must be >= 1, got {self.mixture_k}")
        if not self.n_layers or any(n < 1 for n in self.n_layers):
            raise ConfigError(f"n_layers must be positive, got {self.n_layers}")
        if not self.directions or any(d not in (1, 2) for d in self.directions):
            raise ConfigError(f"directions entries must be 1 or 2, got {self.directions}")
        if self.genre_count < 1:
            raise ConfigError(f"genre_count must be >= 1, got {self.genre_count}")

    @property
    def num_tiers(self) -> int:
        return len(self.n_layers)

    def extractor_direction(self, tier: int) -> int:
        # the extractor of tier g reads tier g-1's merged output; directions
        # are indexed by that source tier, repeating the last entry
        return self.directions[min(tier - 1, len(self.directions) - 1)]


@dataclass
class MixtureParams:
    """Per-bin Gaussian mixture parameters over an [..., K] grid."""

    log_pi: Tensor
    mu: Tensor
    log_sigma: Tensor

    @property
    def pi(self) -> Tensor:
        return F.exp(self.log_pi)

    @property
    def sigma(self) -> Tensor:
        return F.exp(self.log_sigma)

    @classmethod
    def from_values(cls, pi, mu, sigma) -> "MixtureParams":
        return cls(Tensor(np.log(np.asarray(pi, dtype=np.float64))),
                   Tensor(np.asarray(mu, dtype=np.float64)),
                   Tensor(np.log(np.asarray(sigma, dtype=np.float64))))


def mdn_loss(params: MixtureParams, target) -> Tensor:
    """Mean negative log-likelihood of the mixture at each bin.

    Computed in the log domain with log-sum-exp over components.
    """
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target))
    y = F.reshape(target, target.shape + (1,))
    z = (y - params.mu) * F.exp(-params.log_sigma)
    log_norm = params.log_sigma + 0.5 * LOG_2PI
    log_comp = params.log_pi - 0.5 * z * z - log_norm
    return -F.logsumexp(log_comp, axis=-1).mean()


# ---------------------------------------------------------------------------
# Recurrent building blocks
# ---------------------------------------------------------------------------


def gru_scan(cell: nn.GRUCell, grid: Tensor, axis: int, reverse: bool = False) -> Tensor:
    """Run a GRU over one axis of a [B, T, J, d_in] grid (axis 1 or 2),
    batching over the other spatial axis.  Returns the per-step states."""
    if axis == 2:
        flipped = F.transpose(grid, (0, 2, 1, 3))
        return F.transpose(gru_scan(cell, flipped, 1, reverse), (0, 2, 1, 3))
    b, t, j, d_in = grid.shape
    state = Tensor(np.zeros((b * j, cell.hidden_size), dtype=grid.dtype))
    outs: list[Tensor | None] = [None] * t
    steps = range(t - 1, -1, -1) if reverse else range(t)
    for i in steps:
        x_i = F.reshape(grid[:, i], (b * j, d_in))
        state = cell(x_i, state)
        outs[i] = F.reshape(state, (b, 1, j, cell.hidden_size))
    return F.concat(outs, axis=1)


def _shift_one(x: Tensor, axis: int) -> Tensor:
    """Shift a [B, T, J] grid one step forward along ``axis`` (1 or 2),
    inserting a zero line so position 0 sees no input."""
    widths = [(0, 0), (0, 0), (0, 0)]
    widths[axis] = (1, 0)
    padded = F.pad_constant(x, widths)
    idx = [slice(None)] * 3
    idx[axis] = slice(0, x.shape[axis])
    return padded[tuple(idx)]


def shift_time_input(x: Tensor, proj: nn.Linear) -> Tensor:
    """Layer-0 hidden grid of the time stack: project x[i-1, j] to d dims."""
    shifted = _shift_one(x, 1)
    return proj(F.reshape(shifted, shifted.shape + (1,)))


def shift_freq_input(x: Tensor, proj: nn.Linear) -> Tensor:
    """Layer-0 hidden grid of the frequency stack: project x[i, j-1]."""
    shifted = _shift_one(x, 2)
    return proj(F.reshape(shifted, shifted.shape + (1,)))


class TimeStackLayer(nn.Module):
    """Three recurrences over the previous hidden grid (forward in time,
    forward and backward in frequency), concatenated, projected back to d and
    added as a residual."""

    def __init__(self, dims: int, rng=None, dtype=np.float32):
        self.gru_time = nn.GRUCell(dims, dims, rng=rng, dtype=dtype)
        self.gru_freq_fwd = nn.GRUCell(dims, dims, rng=rng, dtype=dtype)
        self.gru_freq_bwd = nn.GRUCell(dims, dims, rng=rng, dtype=dtype)
        self.proj = nn.Linear(3 * dims, dims, rng=rng, dtype=dtype)

    def forward(self, h: Tensor) -> Tensor:
        along_time = gru_scan(self.gru_time, h, axis=1)
        along_freq = gru_scan(self.gru_freq_fwd, h, axis=2)
        against_freq = gru_scan(self.gru_freq_bwd, h, axis=2, reverse=True)
        mixed = F.concat([along_time, along_freq, against_freq], axis=-1)
        return h + self.proj(mixed)


class FreqStackLayer(nn.Module):
    """One upward-frequency recurrence over the combined (frequency hidden,
    time hidden) grid, with a residual to the frequency hidden."""

    def __init__(self, dims: int, rng=None, dtype=np.float32):
        self.combine = nn.Linear(2 * dims, dims, rng=rng, dtype=dtype)
        self.gru = nn.GRUCell(dims, dims, rng=rng, dtype=dtype)

    def forward(self, hf: Tensor, ht: Tensor) -> Tensor:
        mixed = self.combine(F.concat([hf, ht], axis=-1))
        return hf + gru_scan(self.gru, mixed, axis=2)


class FeatureExtractor(nn.Module):
    """Conditioning features from the previous tier: a (bi)directional
    recurrence over time on the context grid, projected to d."""

    def __init__(self, dims: int, directions: int, rng=None, dtype=np.float32):
        self.directions = directions
        self.gru_fwd = nn.GRUCell(1, dims, rng=rng, dtype=dtype)
        self.gru_bwd = nn.GRUCell(1, dims, rng=rng, dtype=dtype) if directions == 2 else None
        self.proj = nn.Linear(directions * dims, dims, rng=rng, dtype=dtype)

    def forward(self, context: Tensor) -> Tensor:
        x = F.reshape(context, context.shape + (1,))
        feats = gru_scan(self.gru_fwd, x, axis=1)
        if self.gru_bwd is not None:
            feats = F.concat([feats, gru_scan(self.gru_bwd, x, axis=1, reverse=True)], axis=-1)
        return self.proj(feats)


class TierNetwork(nn.Module):
    """One tier: input shifts, stacked time/frequency layers, mixture head.

    Tier 0 carries the genre embedding; later tiers carry the feature
    extractor conditioning on the previous tiers' merged output.
    """

    def __init__(self, config: MelNetConfig, tier: int, rng=None, dtype=np.float32):
        d = config.dims
        self.dims = d
        self.mixture_k = config.mixture_k
        self.time_in = nn.Linear(1, d, bias=False, rng=rng, dtype=dtype)
        self.freq_in = nn.Linear(1, d, bias=False, rng=rng, dtype=dtype)
        self.genre_embed = (nn.Embedding(config.genre_count, d, rng=rng, dtype=dtype)
                            if tier == 0 else None)
        self.extractor = (FeatureExtractor(d, config.extractor_direction(tier), rng=rng, dtype=dtype)
                          if tier > 0 else None)
        n = config.n_layers[tier]
        self.time_layers = [TimeStackLayer(d, rng=rng, dtype=dtype) for _ in range(n)]
        self.freq_layers = [FreqStackLayer(d, rng=rng, dtype=dtype) for _ in range(n)]
        self.head = nn.Linear(d, 3 * config.mixture_k, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, genre_ids=None, cond: Tensor | None = None,
                checkpointing: bool = False) -> MixtureParams:
        d = self.dims
        ht = shift_time_input(x, self.time_in)
        hf = shift_freq_input(x, self.freq_in)
        if self.genre_embed is not None and genre_ids is not None:
            e = self.genre_embed(np.asarray(genre_ids))
            e = F.reshape(e, (e.shape[0], 1, 1, d))
            ht = ht + e
            hf = hf + e
        if cond is not None:
            ht = ht + cond
            hf = hf + cond
        for time_layer, freq_layer in zip(self.time_layers, self.freq_layers):
            if checkpointing:
                def segment(pair, tl=time_layer, fl=freq_layer):
                    a, b = pair[..., :d], pair[..., d:]
                    a = tl(a)
                    return F.concat([a, fl(b, a)], axis=-1)
                pair = checkpoint_segment(segment, F.concat([ht, hf], axis=-1))
                ht, hf = pair[..., :d], pair[..., d:]
            else:
                ht = time_layer(ht)
                hf = freq_layer(hf, ht)
        raw = self.head(hf)
        k = self.mixture_k
        return MixtureParams(
            log_pi=F.log_softmax(raw[..., :k], axis=-1),
            mu=raw[..., k:2 * k],
            log_sigma=F.clip(raw[..., 2 * k:], -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP),
        )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_bin(pi: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
               rng: np.random.Generator) -> float:
    """Draw a component from pi, then a Gaussian value from it.

    Consumes exactly two RNG values so generation prefixes are reproducible.
    """
    pi = np.asarray(pi, dtype=np.float64)
    cum = np.cumsum(pi)
    u = rng.random()
    k = min(int(np.searchsorted(cum, u * cum[-1], side="right")), len(pi) - 1)
    return float(mu[k] + sigma[k] * rng.standard_normal())


def generate(tier: TierNetwork, shape: tuple[int, int], rng: np.random.Generator,
             genre_id: int | None = None, cond: Tensor | None = None,
             dtype=np.float32) -> np.ndarray:
    """Raster-order ancestral sampling of a (time, mel) grid.

    Runs one full forward pass per bin (T*J passes); causality guarantees the
    not-yet-generated zeros cannot influence the current bin's parameters.
    """
    t_len, j_len = shape
    grid = np.zeros((t_len, j_len), dtype=dtype)
    ids = np.asarray([genre_id]) if genre_id is not None else None
    with no_grad():
        for i in range(t_len):
            for j in range(j_len):
                mp = tier(Tensor(grid[None]), genre_ids=ids, cond=cond)
                pi = np.exp(mp.log_pi.data[0, i, j])
                sigma = np.exp(mp.log_sigma.data[0, i, j])
                grid[i, j] = sample_bin(pi, mp.mu.data[0, i, j], sigma, rng)
    return grid


# ---------------------------------------------------------------------------
# Multiscale tiers
# ---------------------------------------------------------------------------


def tier_split(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Even/odd interleaved split along ``axis``; exact inverse of
    :func:`tier_merge`."""
    if x.shape[axis] < 2:
        raise ValueError(f"cannot split axis {axis} of extent {x.shape[axis]}")
    even = [slice(None)] * x.ndim
    odd = [slice(None)] * x.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    return x[tuple(even)].copy(), x[tuple(odd)].copy()


def tier_merge(even: np.ndarray, odd: np.ndarray, axis: int) -> np.ndarray:
    shape = list(even.shape)
    shape[axis] = even.shape[axis] + odd.shape[axis]
    out = np.empty(shape, dtype=even.dtype)
    sl_even = [slice(None)] * even.ndim
    sl_odd = [slice(None)] * even.ndim
    sl_even[axis] = slice(0, None, 2)
    sl_odd[axis] = slice(1, None, 2)
    out[tuple(sl_even)] = even
    out[tuple(sl_odd)] = odd
    return out


def merge_axes(num_tiers: int) -> dict[int, int]:
    """Axis (TIME_AXIS/FREQ_AXIS of an unbatched grid) merged in by each tier
    g >= 1.  The full grid splits along time first, then alternates, so tier
    g's merge happens at split depth ``num_tiers - 1 - g``."""
    return {g: (TIME_AXIS if (num_tiers - 1 - g) % 2 == 0 else FREQ_AXIS)
            for g in range(1, num_tiers)}


class MelNet(nn.Module):
    """All tiers of the multiscale model, with training loss and sampling."""

    def __init__(self, config: MelNetConfig, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng()
        self.config = config
        self.dtype = dtype
        self.tiers = [TierNetwork(config, g, rng=rng, dtype=dtype)
                      for g in range(config.num_tiers)]
        self._merge_axes = merge_axes(config.num_tiers)

    def decompose(self, x: np.ndarray) -> tuple[np.ndarray, list[tuple[int, np.ndarray, np.ndarray]]]:
        """Split a batched [B, T, J] grid into per-tier (target, context)."""
        parts = []
        cur = x
        for g in range(self.config.num_tiers - 1, 0, -1):
            even, odd = tier_split(cur, self._merge_axes[g] + 1)
            parts.append((g, odd, even))
            cur = even
        return cur, parts

    def loss(self, x: np.ndarray, genre_ids, checkpointing: bool = False) -> Tensor:
        """Total mixture NLL across tiers for a batched [B, T, J] grid."""
        base, parts = self.decompose(np.asarray(x, dtype=self.dtype))
        params = self.tiers[0](Tensor(base), genre_ids=np.asarray(genre_ids),
                               checkpointing=checkpointing)
        total = mdn_loss(params, Tensor(base))
        for g, target, context in parts:
            cond = self.tiers[g].extractor(Tensor(context))
            params = self.tiers[g](Tensor(target), cond=cond, checkpointing=checkpointing)
            total = total + mdn_loss(params, Tensor(target))
        return total

    def validate_shape(self, final_shape: tuple[int, int]) -> tuple[int, int]:
        t_len, j_len = final_shape
        t_splits = sum(1 for a in self._merge_axes.values() if a == TIME_AXIS)
        f_splits = sum(1 for a in self._merge_axes.values() if a == FREQ_AXIS)
        if t_len % (1 << t_splits) or j_len % (1 << f_splits):
            raise ConfigError(
                f"final shape {final_shape} not divisible by the tier scheme "
                f"(needs time % {1 << t_splits} == 0 and mel % {1 << f_splits} == 0)"
            )
        return t_len >> t_splits, j_len >> f_splits

    def multiscale_generate(self, genre_id: int, final_shape: tuple[int, int],
                            rng: np.random.Generator) -> np.ndarray:
        """Sample tier 0 with the genre embedding, then each higher tier
        conditioned on everything generated so far, interleaving as it goes."""
        shape0 = self.validate_shape(final_shape)
        grid = generate(self.tiers[0], shape0, rng, genre_id=genre_id, dtype=self.dtype)
        for g in range(1, self.config.num_tiers):
            with no_grad():
                cond = self.tiers[g].extractor(Tensor(grid[None]))
            new = generate(self.tiers[g], grid.shape, rng, cond=cond, dtype=self.dtype)
            grid = tier_merge(grid, new, self._merge_axes[g])
        return grid
