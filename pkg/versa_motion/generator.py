"""Dual-branch motion generator: audio branch, text branch and per-layer fusion."""
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from . import autograd as ag
from .audio import AudioTemporalBlock, AudioTokenSeq, extract_audio_features, token_count
from .checkpoint import Checkpoint, add_optimizer_state
from .config import RunConfig, check_signature
from .errors import CompatibilityError, InvalidInputError, ShapeError
from .layers import Embedding, LayerNorm, Linear, Module, TransformerLayer, sinusoidal_positions
from .motion import MotionSequence
from .text import SPEECH_PROMPT, TextEmbedding, embed_text
from .tokenizer import Normalizer
from .utils import make_rng

MEL_FRAMES_PER_MOTION_FRAME = 5


@dataclass
class MaskedTokenSeq:
    """Token ids with MASK substituted; ``flags`` is 0 where masked, 1 otherwise."""

    ids: np.ndarray
    flags: np.ndarray
    mask_id: int


@dataclass
class CodeLogits:
    """Per-token logits over the codebook, ``logits`` is (N, K)."""

    logits: np.ndarray

    def probabilities(self, temperature=1.0):
        scaled = np.asarray(self.logits, dtype=np.float64) / temperature
        scaled -= scaled.max(axis=-1, keepdims=True)
        e = np.exp(scaled)
        return e / e.sum(axis=-1, keepdims=True)


@dataclass
class BranchActivations:
    """Per-layer outputs of both branches from the last fused forward pass."""

    audio: list = field(default_factory=list)
    text: list = field(default_factory=list)


def mask_tokens(tokens, ratio, seed, mask_id):
    """
    Independently replace each position by MASK with probability ``ratio``.

    Every row keeps at least one masked position (redrawn otherwise).

    Args:
        tokens (np.ndarray): (N,) or (B, N) token ids
        ratio (float): Masking probability in (0, 1)
        seed (int or np.random.Generator): Randomness source
        mask_id (int): Id of the MASK token (the codebook size)

    Raises:
        InvalidInputError: On an empty sequence or a ratio outside (0, 1)
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0 or tokens.shape[-1] == 0:
        raise InvalidInputError("cannot mask an empty token sequence")
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(f"mask ratio must lie in (0, 1), got {ratio}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    rows = tokens.reshape(-1, tokens.shape[-1])
    masked = np.empty(rows.shape, dtype=bool)
    for r in range(rows.shape[0]):
        draw = rng.random(rows.shape[1]) < ratio
        while not draw.any():
            draw = rng.random(rows.shape[1]) < ratio
        masked[r] = draw
    masked = masked.reshape(tokens.shape)
    ids = np.where(masked, mask_id, tokens)
    return MaskedTokenSeq(ids, (~masked).astype(np.int64), mask_id)


def text_branch_loss(logits, tokens, flags):
    """
    Mean negative log-likelihood of the original tokens at masked positions.

    Raises:
        UndefinedMeanError: If no position is masked
    """
    return ag.softmax_cross_entropy(logits, tokens, flags)


def sample_codes(logits, strategy="greedy", temperature=1.0, seed=None):
    """
    Pick one code per token position.

    Args:
        logits (CodeLogits or np.ndarray): (N, K)
        strategy (str): "greedy" (argmax, ties to the lowest index) or
            "categorical" (draw from softmax(logits / temperature))
        temperature (float): Softmax temperature, categorical only
        seed (int or np.random.Generator): Randomness for categorical draws

    Returns:
        np.ndarray: (N,) int64 ids

    Raises:
        InvalidInputError: On a non-positive temperature or unknown strategy
    """
    logits = logits if isinstance(logits, CodeLogits) else CodeLogits(np.asarray(logits))
    if strategy == "greedy":
        return np.argmax(logits.logits, axis=-1).astype(np.int64)
    if strategy != "categorical":
        raise InvalidInputError(f"unknown sampling strategy {strategy!r}")
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    probs = logits.probabilities(temperature)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(cdf.shape[:-1])[..., None] * cdf[..., -1:]
    ids = np.sum(cdf < u, axis=-1)
    return np.minimum(ids, probs.shape[-1] - 1).astype(np.int64)


def _batch_text(text):
    if isinstance(text, TextEmbedding):
        text = text.vector
    text = ag.as_tensor(text)
    return ag.reshape(text, (1, text.shape[0])) if text.ndim == 1 else text


class TextBranch(Module):
    """Text-conditioned masked-token transformer; the text vector occupies slot 0."""

    def __init__(self, codebook_size, text_width, width, layers, heads, rng):
        super().__init__()
        self.mask_id = codebook_size
        self.text_proj = Linear(text_width, width, rng)
        self.token_embedding = Embedding(codebook_size + 1, width, rng)
        self.layers = [TransformerLayer(width, heads, rng) for _ in range(layers)]
        self.norm = LayerNorm(width)
        self.head = Linear(width, codebook_size, rng)

    def features(self, text, ids):
        """
        Per-layer outputs, each (B, N+1, D).

        Args:
            text: (B, text_width) or (text_width,) embeddings
            ids (np.ndarray): (B, N) token ids, MASK allowed
        """
        text = _batch_text(text)
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if text.shape[0] != ids.shape[0]:
            raise ShapeError(f"{self.name}: {text.shape[0]} prompts for {ids.shape[0]} sequences")
        batch, length = ids.shape
        slot = ag.reshape(self.text_proj(text), (batch, 1, -1))
        h = ag.concat([slot, self.token_embedding(ids)], axis=1)
        h = ag.add(h, sinusoidal_positions(length + 1, h.shape[-1]))
        outputs = []
        for layer in self.layers:
            h = layer(h)
            outputs.append(h)
        return outputs

    def forward(self, text, ids):
        """Logits (B, N, K) of the text branch's own head."""
        outputs = self.features(text, ids)
        return self.head(self.norm(outputs[-1][:, 1:]))


class MotionGenerator(Module):
    """
    Audio-to-motion transformer with a plug-in text branch.

    After audio layer s the text branch's layer-s output (token positions) is
    added before audio layer s+1; the last fused feature feeds the code head.
    ``fusion`` selects where text enters: every layer (``per_layer``), only
    after the last audio layer (``last_layer``) or nowhere (``none``).
    """

    def __init__(self, config, rng=None):
        super().__init__()
        gen, aud = config.generator, config.audio
        rng = rng if rng is not None else make_rng(config.seed)
        self.codebook_size = config.tokenizer.codebook_size
        self.audio_block = AudioTemporalBlock(aud.n_mels, aud.token_width, rng)
        self.audio_proj = Linear(aud.token_width, gen.width, rng)
        self.audio_layers = [TransformerLayer(gen.width, gen.heads, rng) for _ in range(gen.layers)]
        self.audio_norm = LayerNorm(gen.width)
        self.head = Linear(gen.width, self.codebook_size, rng)
        self.text_branch = TextBranch(self.codebook_size, gen.text_width, gen.width, gen.layers,
                                      gen.heads, rng)
        self.audio_normalizer = Normalizer.identity(aud.n_mels)
        self.config = config
        self.fusion = gen.fusion
        self.last_activations = BranchActivations()

    @property
    def mask_id(self):
        return self.codebook_size

    def audio_tokens(self, frames, target_len):
        """Normalized (B, F, n_mels) frames -> (B, target_len, D_a) token Tensor."""
        frames = ag.as_tensor(frames)
        if frames.ndim == 2:
            frames = ag.reshape(frames, (1,) + frames.shape)
        return self.audio_block(frames, target_len)

    def _audio_input(self, audio):
        if isinstance(audio, AudioTokenSeq):
            audio = audio.tokens
        audio = ag.as_tensor(audio)
        return ag.reshape(audio, (1,) + audio.shape) if audio.ndim == 2 else audio

    def _masked_ids(self, masked, batch, length):
        if masked is None:
            return np.full((batch, length), self.mask_id, dtype=np.int64)
        ids = masked.ids if isinstance(masked, MaskedTokenSeq) else masked
        ids = np.asarray(ids, dtype=np.int64)
        ids = ids[None] if ids.ndim == 1 else ids
        if ids.shape != (batch, length):
            raise ShapeError(f"{self.name}: token ids {ids.shape} do not match audio tokens ({batch}, {length})")
        return ids

    def text_outputs(self, text, masked, batch, length):
        """Text-branch layer outputs restricted to token positions."""
        if isinstance(text, TextEmbedding):
            text = text.vector
        text = np.asarray(text.data if isinstance(text, ag.Tensor) else text, dtype=np.float32)
        if text.ndim == 1:
            text = np.broadcast_to(text, (batch, text.shape[0]))
        ids = self._masked_ids(masked, batch, length)
        return [out[:, 1:] for out in self.text_branch.features(text, ids)]

    def _fused_layers(self, fusion):
        fusion = self.fusion if fusion is None else fusion
        n = len(self.audio_layers)
        if fusion == "per_layer":
            return set(range(n))
        if fusion == "last_layer":
            return {n - 1}
        if fusion == "none":
            return set()
        raise InvalidInputError(f"{self.name}: unknown fusion mode {fusion!r}")

    def _run_audio(self, audio, text_outputs, fusion=None):
        h = self.audio_proj(audio)
        h = ag.add(h, sinusoidal_positions(h.shape[1], h.shape[2]))
        activations = BranchActivations()
        fused = self._fused_layers(fusion) if text_outputs is not None else set()
        for s, layer in enumerate(self.audio_layers):
            h = layer(h)
            if text_outputs is not None and s in fused:
                if text_outputs[s].shape != h.shape:
                    raise ShapeError(f"{self.name}: text layer {s + 1} output {text_outputs[s].shape} "
                                     f"does not match audio layer output {h.shape}")
                activations.text.append(ag.as_tensor(text_outputs[s]).data)
                h = ag.add(h, text_outputs[s])
            activations.audio.append(h.data)
        self.last_activations = activations
        return self.head(self.audio_norm(h))

    def forward_audio(self, audio):
        """Audio-only logits (B, N, K), no text fusion."""
        return self._run_audio(self._audio_input(audio), None)

    def forward_fused(self, audio, text, masked=None, text_outputs=None, fusion=None):
        """
        Fused logits (B, N, K).

        Args:
            audio: AudioTokenSeq, (N, D_a) array or (B, N, D_a) Tensor
            text: TextEmbedding or (B, 512) embeddings
            masked: MaskedTokenSeq or ids; None means all MASK
            text_outputs (list): Precomputed per-layer text outputs (B, N, D),
                used instead of running the text branch
            fusion (str): Override of the model's fusion mode

        Raises:
            ShapeError: If the token ids and audio tokens disagree in length
        """
        audio = self._audio_input(audio)
        batch, length = audio.shape[0], audio.shape[1]
        if not self._fused_layers(fusion):
            return self._run_audio(audio, None)
        if text_outputs is None:
            text_outputs = self.text_outputs(text, masked, batch, length)
        if len(text_outputs) != len(self.audio_layers):
            raise ShapeError(f"{self.name}: {len(text_outputs)} text layers for {len(self.audio_layers)} audio layers")
        return self._run_audio(audio, text_outputs, fusion)

    def predict(self, audio, text, masked=None, fusion=None):
        """Inference-mode fused logits for one sequence."""
        with ag.no_grad():
            logits = self.forward_fused(audio, text, masked, fusion=fusion)
        return CodeLogits(logits.data[0])

    def to_checkpoint(self, stage, meta=None, optim=None):
        tensors = {f"model/{k}": v for k, v in self.state_dict().items()}
        tensors.update(self.audio_normalizer.state("audio_normalizer/"))
        meta = dict(meta or {}, stage=stage)
        if optim is not None:
            add_optimizer_state(tensors, meta, optim)
        return Checkpoint("generator", self.config.to_dict(), tensors, meta)

    @classmethod
    def from_checkpoint(cls, checkpoint, config=None):
        """
        Raises:
            CompatibilityError: If ``config`` disagrees with the stored model signature
        """
        if config is not None:
            check_signature(config, checkpoint.config, "generator checkpoint")
        generator = cls(RunConfig.from_dict(checkpoint.config), make_rng(0))
        generator.load_state_dict(checkpoint.tensors, prefix="model/")
        generator.audio_normalizer = Normalizer.from_state(checkpoint.tensors, "audio_normalizer/")
        if config is not None:
            generator.fusion = config.generator.fusion
        return generator


def audio_branch_loss(generator, audio, targets, text_outputs=None):
    """
    Mean negative log-likelihood of the targets at every position, with the
    speech prompt and an all-MASK token input on the text branch.

    Args:
        generator (MotionGenerator): Model
        audio: Audio tokens (Tensor carrying the temporal-block graph)
        targets (np.ndarray): (B, N) token ids
        text_outputs (list): Precomputed frozen text-branch outputs
    """
    audio = generator._audio_input(audio)
    if text_outputs is None:
        text_outputs = generator.text_outputs(embed_text(SPEECH_PROMPT), None, audio.shape[0], audio.shape[1])
    logits = generator.forward_fused(audio, None, text_outputs=text_outputs)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"audio_branch_loss: targets {targets.shape} for logits {logits.shape}")
    return ag.softmax_cross_entropy(logits, targets)


def window_starts(n_tokens, window, overlap):
    """Start token of each generation window; consecutive windows share ``overlap`` tokens."""
    starts, s = [], 0
    while True:
        starts.append(s)
        if s + window >= n_tokens:
            return starts
        s += window - overlap


@dataclass
class GenerationResult:
    ids: np.ndarray
    motion: MotionSequence
    windows: list


def check_pair(tokenizer, generator):
    """
    Raises:
        CompatibilityError: If the two models were built under different signatures
    """
    a, b = tokenizer.config.model_signature(), generator.config.model_signature()
    for key in sorted(a):
        if a[key] != b[key]:
            raise CompatibilityError(f"tokenizer has {key}={a[key]} but generator has {key}={b[key]}")


def generate_motion(waveform, tokenizer, generator, prompt=None, sampling="greedy",
                    temperature=1.0, seed=0, fusion=None):
    """
    Audio (and optional prompt) to motion tokens and decoded motion.

    Long inputs are tiled into windows that overlap by
    ``config.generator.overlap_tokens``; decoded features are cross-faded
    linearly over the overlap. Ids in an overlap keep the earlier window's
    codes, so decoding ``ids`` alone reproduces ``motion`` everywhere except
    inside the cross-faded frames.

    Args:
        waveform (np.ndarray): Mono 16 kHz samples
        tokenizer (MotionTokenizer): Trained tokenizer
        generator (MotionGenerator): Trained generator
        prompt (str): Text prompt, defaults to the speech prompt
        sampling (str): "greedy" or "categorical"
        temperature (float): Categorical temperature
        seed (int): Sampling seed
        fusion (str): Fusion mode override, defaults to the generator's own

    Returns:
        GenerationResult: ids (N,), motion with N * l frames, window starts

    Raises:
        CompatibilityError: If tokenizer and generator signatures differ
    """
    check_pair(tokenizer, generator)
    gen_cfg = generator.config.generator
    l = tokenizer.downsample
    text = embed_text(prompt if prompt else SPEECH_PROMPT)
    mel = generator.audio_normalizer.normalize(extract_audio_features(waveform))
    n_tokens = token_count(len(waveform), l)
    per_token = MEL_FRAMES_PER_MOTION_FRAME * l
    rng = make_rng(seed)

    ids = np.zeros(n_tokens, dtype=np.int64)
    frames = np.zeros((n_tokens * l, tokenizer.normalizer.mean.shape[0]), dtype=np.float64)
    starts = window_starts(n_tokens, gen_cfg.window_tokens, gen_cfg.overlap_tokens)
    for k, s in enumerate(starts):
        n = min(gen_cfg.window_tokens, n_tokens - s)
        with ag.no_grad():
            tokens = generator.audio_tokens(mel[s * per_token:(s + n) * per_token], n)
        logits = generator.predict(tokens.data[0], text, fusion=fusion)
        window_ids = sample_codes(logits, sampling, temperature, rng)
        decoded = tokenizer.decode(window_ids).frames.astype(np.float64)
        if k == 0:
            ids[:n] = window_ids
            frames[:n * l] = decoded
            continue
        overlap = gen_cfg.overlap_tokens * l
        weights = (np.arange(1, overlap + 1) / (overlap + 1))[:, None]
        lo = s * l
        frames[lo:lo + overlap] = (1.0 - weights) * frames[lo:lo + overlap] + weights * decoded[:overlap]
        frames[lo + overlap:(s + n) * l] = decoded[overlap:]
        ids[s + gen_cfg.overlap_tokens:s + n] = window_ids[gen_cfg.overlap_tokens:]
    logger.debug(f"generated {n_tokens} tokens in {len(starts)} window(s)")
    return GenerationResult(ids, MotionSequence(frames.astype(np.float32)), starts)
