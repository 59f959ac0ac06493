"""Motion tokenizer: convolutional encoder, EMA codebook and decoder."""
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from . import autograd as ag
from .checkpoint import Checkpoint, add_optimizer_state
from .config import RunConfig, check_signature
from .errors import DivergenceError, InsufficientLengthError, InvalidInputError, ShapeError
from .layers import Conv1d, ConvTranspose1d, Module, ResBlock1d
from .motion import FEATURE_DIM, MotionSequence
from .optim import AdamState, ParamStore, adam_step
from .utils import derive_seed, make_rng

STD_FLOOR = 1e-2
VQ_STREAM = 1


@dataclass
class Normalizer:
    """Per-channel z-normalization. Identity until fitted."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, width):
        return cls(np.zeros(width, dtype=np.float32), np.ones(width, dtype=np.float32))

    @classmethod
    def fit(cls, frames):
        """
        Fit on stacked frames.

        Args:
            frames (np.ndarray): (N, C) samples
        """
        frames = np.asarray(frames, dtype=np.float64)
        std = np.maximum(frames.std(axis=0), STD_FLOOR)
        return cls(frames.mean(axis=0).astype(np.float32), std.astype(np.float32))

    def normalize(self, x):
        return ((np.asarray(x, dtype=np.float32) - self.mean) / self.std).astype(np.float32)

    def denormalize(self, x):
        return (np.asarray(x, dtype=np.float32) * self.std + self.mean).astype(np.float32)

    def state(self, prefix):
        return {f"{prefix}mean": self.mean, f"{prefix}std": self.std}

    @classmethod
    def from_state(cls, tensors, prefix):
        return cls(np.asarray(tensors[f"{prefix}mean"], dtype=np.float32),
                   np.asarray(tensors[f"{prefix}std"], dtype=np.float32))


@dataclass
class LatentSequence:
    """Continuous encoder output, ``latents`` is (ceil(T/l), d_c)."""

    latents: np.ndarray
    downsample: int = 4

    def __len__(self):
        return self.latents.shape[0]


@dataclass
class QuantizedSequence:
    """Token ids and the codes they select."""

    indices: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return self.indices.shape[0]


@dataclass
class VqLossConfig:
    beta: float = 0.25

    def __post_init__(self):
        if self.beta <= 0:
            raise InvalidInputError(f"beta must be positive, got {self.beta}")


@dataclass
class Codebook:
    """
    K codes of width d_c with EMA statistics.

    ``ema_sum / (ema_count + eps)`` is the code value after every update;
    codes whose ``ema_count`` falls below ``reset_threshold`` are reassigned.
    """

    codes: np.ndarray
    ema_count: np.ndarray
    ema_sum: np.ndarray
    gamma: float = 0.99
    reset_threshold: float = 1.0
    eps: float = 1e-5
    last_reset: np.ndarray = field(default=None, repr=False)

    @classmethod
    def create(cls, size, width, rng, gamma=0.99, reset_threshold=1.0, eps=1e-5):
        codes = (rng.standard_normal((size, width)) / np.sqrt(width)).astype(np.float32)
        return cls.from_codes(codes, gamma=gamma, reset_threshold=reset_threshold, eps=eps)

    @classmethod
    def from_codes(cls, codes, gamma=0.99, reset_threshold=1.0, eps=1e-5, count=1.0):
        codes = np.asarray(codes, dtype=np.float32)
        ema_count = np.full(codes.shape[0], count, dtype=np.float64)
        ema_sum = codes.astype(np.float64) * (ema_count[:, None] + eps)
        return cls(codes, ema_count, ema_sum, gamma, reset_threshold, eps)

    @property
    def size(self):
        return self.codes.shape[0]

    @property
    def width(self):
        return self.codes.shape[1]

    def copy(self):
        return Codebook(self.codes.copy(), self.ema_count.copy(), self.ema_sum.copy(),
                        self.gamma, self.reset_threshold, self.eps)

    def initialize_from(self, latents, rng):
        """Seed the codes with (jittered, tiled) batch latents."""
        latents = np.asarray(latents, dtype=np.float64)
        repeats = -(-self.size // latents.shape[0])
        pool = np.tile(latents, (repeats, 1))
        if repeats > 1:
            pool = pool + rng.standard_normal(pool.shape) * (0.01 / np.sqrt(self.width))
        chosen = pool[rng.permutation(pool.shape[0])[:self.size]]
        fresh = Codebook.from_codes(chosen, self.gamma, self.reset_threshold, self.eps)
        self.codes, self.ema_count, self.ema_sum = fresh.codes, fresh.ema_count, fresh.ema_sum
        return self

    def state(self, prefix="codebook/"):
        return {f"{prefix}codes": self.codes, f"{prefix}ema_count": self.ema_count,
                f"{prefix}ema_sum": self.ema_sum}

    @classmethod
    def from_state(cls, tensors, gamma, reset_threshold, eps, prefix="codebook/"):
        return cls(np.asarray(tensors[f"{prefix}codes"], dtype=np.float32),
                   np.asarray(tensors[f"{prefix}ema_count"], dtype=np.float64),
                   np.asarray(tensors[f"{prefix}ema_sum"], dtype=np.float64),
                   gamma, reset_threshold, eps)


def nearest_codes(latents, codes):
    """
    Index of the nearest code per row, ties to the lowest index.

    Distances are expanded in float64; rows with near-tied candidates are
    re-scored exactly.

    Args:
        latents (np.ndarray): (N, d)
        codes (np.ndarray): (K, d)

    Returns:
        np.ndarray: (N,) int64 indices
    """
    z = np.asarray(latents, dtype=np.float64)
    c = np.asarray(codes, dtype=np.float64)
    if z.ndim != 2 or c.ndim != 2 or z.shape[1] != c.shape[1]:
        raise ShapeError(f"quantize: latents {z.shape} do not match codebook {c.shape}")
    dist = np.sum(z * z, axis=1, keepdims=True) - 2.0 * z @ c.T + np.sum(c * c, axis=1)[None, :]
    best = dist.min(axis=1, keepdims=True)
    near = dist <= best + 1e-9 * (1.0 + np.abs(best))
    indices = np.argmin(dist, axis=1)
    for row in np.flatnonzero(near.sum(axis=1) > 1):
        candidates = np.flatnonzero(near[row])
        exact = np.sum((c[candidates] - z[row]) ** 2, axis=1)
        indices[row] = candidates[np.argmin(exact)]
    return indices.astype(np.int64)


def quantize(latents, codebook):
    """
    Snap each latent to its nearest code.

    Args:
        latents (LatentSequence or np.ndarray): (N, d_c) latents
        codebook (Codebook): Codes to select from

    Returns:
        QuantizedSequence: ``vectors[i]`` is exactly ``codes[indices[i]]``
    """
    z = latents.latents if isinstance(latents, LatentSequence) else latents
    indices = nearest_codes(z, codebook.codes)
    return QuantizedSequence(indices, codebook.codes[indices].copy())


def ema_update_and_reset(codebook, latents, indices, rng):
    """
    EMA update of the codebook followed by dead-code reset.

    Args:
        codebook (Codebook): Current codebook (not modified)
        latents (np.ndarray): (N, d_c) batch latents
        indices (np.ndarray): (N,) assigned code ids
        rng (np.random.Generator): Source of reset choices

    Returns:
        Codebook: Updated copy; ``last_reset`` flags the reassigned codes
    """
    updated = codebook.copy()
    latents = np.asarray(latents, dtype=np.float64).reshape(-1, codebook.width)
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if latents.shape[0] == 0:
        updated.last_reset = np.zeros(codebook.size, dtype=bool)
        return updated
    if indices.shape[0] != latents.shape[0]:
        raise ShapeError(f"{indices.shape[0]} indices for {latents.shape[0]} latents")
    if indices.min() < 0 or indices.max() >= codebook.size:
        raise InvalidInputError(f"code indices outside [0, {codebook.size})")

    counts = np.bincount(indices, minlength=codebook.size).astype(np.float64)
    sums = np.zeros_like(updated.ema_sum)
    np.add.at(sums, indices, latents)

    g = codebook.gamma
    updated.ema_count = g * codebook.ema_count + (1.0 - g) * counts
    updated.ema_sum = g * codebook.ema_sum + (1.0 - g) * sums
    codes = updated.ema_sum / (updated.ema_count[:, None] + codebook.eps)

    dead = updated.ema_count < codebook.reset_threshold
    n_dead = int(dead.sum())
    if n_dead:
        picks = latents[rng.integers(0, latents.shape[0], size=n_dead)]
        codes[dead] = picks
        updated.ema_count[dead] = codebook.reset_threshold
        updated.ema_sum[dead] = picks * (codebook.reset_threshold + codebook.eps)
    updated.codes = codes.astype(np.float32)
    updated.last_reset = dead
    return updated


def codebook_usage(indices, size):
    """
    Utilization and perplexity of a batch of code assignments.

    Returns:
        tuple: (fraction of codes used, perplexity of the usage histogram)
    """
    counts = np.bincount(np.asarray(indices, dtype=np.int64).reshape(-1), minlength=size)
    prob = counts / max(counts.sum(), 1)
    perplexity = float(np.exp(-np.sum(prob * np.log(prob + 1e-7))))
    return float(np.count_nonzero(counts)) / size, perplexity


def vq_loss(motion, reconstruction, latents, quantized, cfg):
    """
    Reconstruction plus embedding loss.

    ``mean|m - m_hat| + beta * mean((z - sg[z_hat])^2)``; the quantized
    vectors receive no gradient.

    Args:
        motion: Target features (array or Tensor)
        reconstruction (Tensor): Decoder output
        latents (Tensor): Encoder output z
        quantized: Selected codes z_hat
        cfg (VqLossConfig): Loss weights

    Returns:
        Tensor: Scalar loss
    """
    motion, reconstruction = ag.as_tensor(motion), ag.as_tensor(reconstruction)
    latents = ag.as_tensor(latents)
    if motion.shape != reconstruction.shape:
        raise ShapeError(f"vq_loss: motion {motion.shape} vs reconstruction {reconstruction.shape}")
    if latents.shape != ag.as_tensor(quantized).shape:
        raise ShapeError(f"vq_loss: latents {latents.shape} vs quantized {ag.as_tensor(quantized).shape}")
    recon = ag.mean(ag.abs(ag.sub(motion, reconstruction)))
    commit = ag.mean(ag.square(ag.sub(latents, ag.stop_gradient(quantized))))
    return ag.add(recon, ag.mul(commit, cfg.beta))


class Encoder(Module):
    """Conv stack with total stride 4: (B, T, 263) -> (B, T/4, d_c)."""

    def __init__(self, hidden, code_dim, rng, in_channels=FEATURE_DIM):
        super().__init__()
        self.conv_in = Conv1d(in_channels, hidden, 3, rng, padding=1)
        self.down = [Conv1d(hidden, hidden, 4, rng, stride=2, padding=1) for _ in range(2)]
        self.res = [ResBlock1d(hidden, rng) for _ in range(2)]
        self.conv_out = Conv1d(hidden, code_dim, 3, rng, padding=1)

    def forward(self, x):
        h = ag.gelu(self.conv_in(x))
        for down, res in zip(self.down, self.res):
            h = res(down(h))
        return self.conv_out(ag.gelu(h))


class Decoder(Module):
    """Mirror of :class:`Encoder` built from transposed convolutions."""

    def __init__(self, hidden, code_dim, rng, out_channels=FEATURE_DIM):
        super().__init__()
        self.conv_in = Conv1d(code_dim, hidden, 3, rng, padding=1)
        self.res = [ResBlock1d(hidden, rng) for _ in range(2)]
        self.up = [ConvTranspose1d(hidden, hidden, 4, rng, stride=2, padding=1) for _ in range(2)]
        self.conv_out = Conv1d(hidden, out_channels, 3, rng, padding=1)

    def forward(self, x):
        h = ag.gelu(self.conv_in(x))
        for res, up in zip(self.res, self.up):
            h = ag.gelu(up(res(h)))
        return self.conv_out(h)


class MotionTokenizer(Module):
    """
    VQ-VAE over motion features.

    Features are normalized before the encoder and denormalized after the
    decoder; the codebook is updated by EMA, never by gradient.
    """

    def __init__(self, config, rng=None):
        super().__init__()
        tok = config.tokenizer
        rng = rng if rng is not None else make_rng(config.seed)
        self.downsample = tok.downsample
        self.encoder = Encoder(tok.hidden, tok.code_dim, rng)
        self.decoder = Decoder(tok.hidden, tok.code_dim, rng)
        self.codebook = Codebook.create(
            tok.codebook_size, tok.code_dim, rng, tok.gamma, tok.reset_threshold, tok.ema_eps)
        self.normalizer = Normalizer.identity(FEATURE_DIM)
        self.config = config

    def _frames(self, motion):
        frames = motion.frames if isinstance(motion, MotionSequence) else np.asarray(motion, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[1] != FEATURE_DIM:
            raise InvalidInputError(f"motion features must be (T, {FEATURE_DIM}), got {frames.shape}")
        if frames.shape[0] < self.downsample:
            raise InsufficientLengthError(
                f"motion has {frames.shape[0]} frames, the encoder needs at least {self.downsample}")
        return frames

    def pad(self, frames):
        """Zero-pad normalized frames along time to a multiple of l."""
        extra = -frames.shape[-2] % self.downsample
        if not extra:
            return frames
        widths = [(0, 0)] * frames.ndim
        widths[-2] = (0, extra)
        return np.pad(frames, widths)

    def encode_batch(self, normalized):
        """Graph-building encoder over normalized (B, T, 263) windows."""
        return self.encoder(ag.as_tensor(normalized))

    def decode_batch(self, vectors):
        """Graph-building decoder; output is in normalized feature space."""
        return self.decoder(ag.as_tensor(vectors))

    def encode(self, motion):
        """
        Encode a motion sequence.

        Raises:
            InsufficientLengthError: If T < l
        """
        frames = self.pad(self.normalizer.normalize(self._frames(motion)))
        with ag.no_grad():
            latents = self.encode_batch(frames[None]).data[0]
        return LatentSequence(latents.astype(np.float32), self.downsample)

    def tokenize(self, motion):
        return quantize(self.encode(motion), self.codebook)

    def lookup(self, ids):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size == 0:
            raise InvalidInputError("no token ids to look up")
        if ids.min() < 0 or ids.max() >= self.codebook.size:
            raise InvalidInputError(f"token ids outside [0, {self.codebook.size})")
        return QuantizedSequence(ids, self.codebook.codes[ids].copy())

    def decode(self, quantized, fps=20):
        """
        Decode quantized codes (or raw token ids) to motion features.

        Returns:
            MotionSequence: ``len(quantized) * l`` frames
        """
        if not isinstance(quantized, QuantizedSequence):
            quantized = self.lookup(quantized)
        if len(quantized) == 0:
            raise InvalidInputError("cannot decode an empty token sequence")
        with ag.no_grad():
            out = self.decode_batch(quantized.vectors[None]).data[0]
        return MotionSequence(self.normalizer.denormalize(out), fps=fps)

    def reconstruct(self, motion):
        """decode(quantize(encode(m))) trimmed to the input length."""
        frames = self._frames(motion)
        decoded = self.decode(self.tokenize(motion))
        return MotionSequence(decoded.frames[:frames.shape[0]])

    def to_checkpoint(self, meta=None, optim=None):
        tensors = {f"model/{k}": v for k, v in self.state_dict().items()}
        tensors.update(self.codebook.state())
        tensors.update(self.normalizer.state("normalizer/"))
        meta = dict(meta or {})
        if optim is not None:
            add_optimizer_state(tensors, meta, optim)
        return Checkpoint("tokenizer", self.config.to_dict(), tensors, meta)

    @classmethod
    def from_checkpoint(cls, checkpoint, config=None):
        """
        Rebuild a tokenizer from a checkpoint.

        Raises:
            CompatibilityError: If ``config`` disagrees with the stored model signature
        """
        stored = RunConfig.from_dict(checkpoint.config)
        if config is not None:
            check_signature(config, checkpoint.config, "tokenizer checkpoint")
        tokenizer = cls(stored, make_rng(0))
        tokenizer.load_state_dict(checkpoint.tensors, prefix="model/")
        tok = stored.tokenizer
        tokenizer.codebook = Codebook.from_state(checkpoint.tensors, tok.gamma, tok.reset_threshold,
                                                 tok.ema_eps)
        tokenizer.normalizer = Normalizer.from_state(checkpoint.tensors, "normalizer/")
        return tokenizer


def sample_windows(frames_list, batch_size, window, rng):
    """
    Draw ``batch_size`` fixed-length windows uniformly.

    Args:
        frames_list (list): (T_i, C) arrays, each with T_i >= window
    """
    picks = rng.integers(0, len(frames_list), size=batch_size)
    batch = np.empty((batch_size, window, frames_list[0].shape[1]), dtype=np.float32)
    for b, i in enumerate(picks):
        start = rng.integers(0, frames_list[i].shape[0] - window + 1)
        batch[b] = frames_list[i][start:start + window]
    return batch


def reconstruction_error(tokenizer, motions):
    """Mean L1 of decode(quantize(encode(m))) against m over a set of motions."""
    errors = [np.mean(np.abs(tokenizer.reconstruct(m).frames - m.frames)) for m in motions]
    return float(np.mean(errors))


def train_vqvae(motions, config, steps=None):
    """
    Train the tokenizer on fixed-length windows.

    Args:
        motions (list): Training MotionSequence objects
        config (RunConfig): Run configuration
        steps (int): Overrides ``config.training.vqvae_steps``

    Returns:
        tuple: (Checkpoint, list of per-step history dicts)

    Raises:
        InvalidInputError: If there is no usable training motion
        DivergenceError: If the loss becomes non-finite
    """
    train = config.training
    steps = train.vqvae_steps if steps is None else steps
    usable = [m for m in motions if m.T >= train.window_frames]
    if not usable:
        raise InvalidInputError(f"no training motion has at least {train.window_frames} frames")

    rng = make_rng(derive_seed(config.seed, VQ_STREAM))
    tokenizer = MotionTokenizer(config, rng)
    tokenizer.normalizer = Normalizer.fit(np.concatenate([m.frames for m in usable]))
    frames_list = [tokenizer.normalizer.normalize(m.frames) for m in usable]

    params = ParamStore.from_module(tokenizer)
    state = AdamState.from_training(train)
    loss_cfg = VqLossConfig(config.tokenizer.beta)
    history = []
    logger.info(f"training tokenizer: {len(usable)} motions, {steps} steps, "
                f"{tokenizer.num_parameters()} parameters")

    for step in range(1, steps + 1):
        batch = sample_windows(frames_list, train.batch_size, train.window_frames, rng)
        z = tokenizer.encode_batch(batch)
        flat = z.data.reshape(-1, z.shape[-1])
        if step == 1:
            tokenizer.codebook.initialize_from(flat, rng)
        indices = nearest_codes(flat, tokenizer.codebook.codes)
        selected = tokenizer.codebook.codes[indices].reshape(z.shape)
        recon = tokenizer.decode_batch(ag.straight_through(z, selected))
        loss = vq_loss(batch, recon, z, selected, loss_cfg)
        if not np.isfinite(loss.data):
            raise DivergenceError(f"tokenizer loss became {float(loss.data)} at step {step}")

        tokenizer.zero_grad()
        loss.backward()
        adam_step(params, tokenizer.gradients(), state, clip_norm=train.clip_norm)
        tokenizer.codebook = ema_update_and_reset(tokenizer.codebook, flat, indices, rng)

        recon_l1 = float(np.mean(np.abs(batch - recon.data)))
        utilization, perplexity = codebook_usage(indices, tokenizer.codebook.size)
        resets = int(tokenizer.codebook.last_reset.sum())
        history.append({"step": step, "loss": float(loss.data), "recon": recon_l1,
                        "utilization": utilization, "perplexity": perplexity, "resets": resets})
        if step % train.log_every == 0 or step == steps:
            logger.info(f"vqvae step {step}/{steps}: loss {float(loss.data):.4f} recon {recon_l1:.4f} "
                        f"perplexity {perplexity:.1f} resets {resets}")
            if resets > tokenizer.codebook.size // 2:
                logger.warning(f"step {step}: {resets} of {tokenizer.codebook.size} codes were reset")

    meta = {"stage": "vqvae", "steps": steps}
    return tokenizer.to_checkpoint(meta, state), history
