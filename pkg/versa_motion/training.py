"""Two-stage generator training: text branch first, then the audio branch."""
from dataclasses import dataclass

import numpy as np
from loguru import logger

from . import autograd as ag
from .audio import extract_audio_features
from .errors import DivergenceError, InvalidInputError, OrderingError
from .generator import (MotionGenerator, audio_branch_loss, mask_tokens, sample_codes,
                        text_branch_loss)
from .optim import AdamState, ParamStore, adam_step
from .text import SPEECH_PROMPT, embed_text
from .tokenizer import Normalizer
from .utils import derive_seed, make_rng

TEXT_STREAM = 2
AUDIO_STREAM = 3
HELD_OUT_STREAM = 4
TEXT_PREFIX = "text_branch."


@dataclass
class PairedExample:
    """One training pair: motion tokens, prompt embedding and raw log-mel frames."""

    ids: np.ndarray
    text: np.ndarray
    mel: np.ndarray
    label: str


def prepare_pairs(samples, tokenizer):
    """
    Tokenize motions and extract audio features for corpus samples.

    Args:
        samples (list): Objects with ``motion``, ``label`` and ``waveform``
        tokenizer (MotionTokenizer): Trained tokenizer
    """
    pairs = []
    for sample in samples:
        ids = tokenizer.tokenize(sample.motion).indices
        pairs.append(PairedExample(ids, embed_text(sample.label).vector,
                                   extract_audio_features(sample.waveform), sample.label))
    return pairs


def _stack(pairs, picks, attribute):
    values = [getattr(pairs[i], attribute) for i in picks]
    length = min(v.shape[0] for v in values)
    return np.stack([v[:length] for v in values])


def _check_finite(loss, stage, step):
    if not np.isfinite(loss.data):
        raise DivergenceError(f"{stage} loss became {float(loss.data)} at step {step}")


def train_text_stage(pairs, config, steps=None):
    """
    Train the text branch with masked-token prediction.

    Args:
        pairs (list): Training PairedExample objects
        config (RunConfig): Run configuration
        steps (int): Overrides ``config.training.text_steps``

    Returns:
        tuple: (generator Checkpoint with stage "text", history list)
    """
    if not pairs:
        raise InvalidInputError("text stage needs at least one training pair")
    train, gen = config.training, config.generator
    steps = train.text_steps if steps is None else steps
    rng = make_rng(derive_seed(config.seed, TEXT_STREAM))
    generator = MotionGenerator(config, rng)
    params = ParamStore.from_module(generator)
    params.freeze()
    params.unfreeze(TEXT_PREFIX)
    state = AdamState.from_training(train)
    history = []
    logger.info(f"training text branch: {len(pairs)} pairs, {steps} steps, "
                f"{len(params.trainable_names())} trainable tensors")

    for step in range(1, steps + 1):
        picks = rng.integers(0, len(pairs), size=train.batch_size)
        ids = _stack(pairs, picks, "ids")
        text = _stack(pairs, picks, "text")
        ratio = rng.uniform(gen.mask_ratio_min, gen.mask_ratio_max)
        masked = mask_tokens(ids, ratio, rng, generator.mask_id)
        logits = generator.text_branch(text, masked.ids)
        loss = text_branch_loss(logits, ids, masked.flags)
        _check_finite(loss, "text stage", step)

        generator.zero_grad()
        loss.backward()
        adam_step(params, generator.gradients(), state, clip_norm=train.clip_norm)
        history.append({"step": step, "loss": float(loss.data), "mask_ratio": float(ratio)})
        if step % train.log_every == 0 or step == steps:
            logger.info(f"text step {step}/{steps}: loss {float(loss.data):.4f}")

    params.unfreeze()
    return generator.to_checkpoint("text", {"steps": steps}, state), history


def speech_prompt_outputs(generator, batch, length):
    """Frozen text-branch outputs for the speech prompt over an all-MASK input."""
    with ag.no_grad():
        return generator.text_outputs(embed_text(SPEECH_PROMPT), None, batch, length)


def train_audio_stage(pairs, text_checkpoint, config, steps=None):
    """
    Train the audio branch with the text branch frozen.

    Args:
        pairs (list): Training PairedExample objects
        text_checkpoint (Checkpoint): Output of :func:`train_text_stage`
        config (RunConfig): Run configuration
        steps (int): Overrides ``config.training.audio_steps``

    Returns:
        tuple: (generator Checkpoint with stage "audio", history list)

    Raises:
        OrderingError: If the checkpoint did not come from the text stage
    """
    if text_checkpoint.kind != "generator" or text_checkpoint.meta.get("stage") not in ("text", "audio"):
        raise OrderingError("the audio stage needs a text-stage generator checkpoint")
    if not pairs:
        raise InvalidInputError("audio stage needs at least one training pair")
    train = config.training
    steps = train.audio_steps if steps is None else steps
    rng = make_rng(derive_seed(config.seed, AUDIO_STREAM))
    generator = MotionGenerator.from_checkpoint(text_checkpoint, config)
    generator.audio_normalizer = Normalizer.fit(np.concatenate([p.mel for p in pairs]))
    params = ParamStore.from_module(generator)
    params.freeze(TEXT_PREFIX)
    state = AdamState.from_training(train)
    history = []
    frozen_outputs = {}
    logger.info(f"training audio branch: {len(pairs)} pairs, {steps} steps, "
                f"{len(params.trainable_names())} trainable tensors")

    for step in range(1, steps + 1):
        picks = rng.integers(0, len(pairs), size=train.batch_size)
        targets = _stack(pairs, picks, "ids")
        mel = generator.audio_normalizer.normalize(_stack(pairs, picks, "mel"))
        key = targets.shape
        if key not in frozen_outputs:
            frozen_outputs[key] = speech_prompt_outputs(generator, *key)
        tokens = generator.audio_tokens(mel, targets.shape[1])
        loss = audio_branch_loss(generator, tokens, targets, frozen_outputs[key])
        _check_finite(loss, "audio stage", step)

        generator.zero_grad()
        loss.backward()
        adam_step(params, generator.gradients(), state, clip_norm=train.clip_norm)
        history.append({"step": step, "loss": float(loss.data)})
        if step % train.log_every == 0 or step == steps:
            logger.info(f"audio step {step}/{steps}: loss {float(loss.data):.4f}")

    params.unfreeze()
    return generator.to_checkpoint("audio", {"steps": steps}, state), history


def masked_token_accuracy(generator, pairs, ratio=0.5, seed=0):
    """Top-1 accuracy of the text branch at masked positions."""
    rng = make_rng(derive_seed(seed, HELD_OUT_STREAM))
    hits = total = 0
    with ag.no_grad():
        for pair in pairs:
            masked = mask_tokens(pair.ids, ratio, rng, generator.mask_id)
            logits = generator.text_branch(pair.text, masked.ids).data[0]
            scored = masked.flags == 0
            hits += int(np.sum(sample_codes(logits)[scored] == pair.ids[scored]))
            total += int(scored.sum())
    return hits / max(total, 1)


def audio_token_accuracy(generator, pairs):
    """Greedy accuracy of the fused model with the speech prompt and all-MASK input."""
    text = embed_text(SPEECH_PROMPT)
    hits = total = 0
    for pair in pairs:
        mel = generator.audio_normalizer.normalize(pair.mel)
        with ag.no_grad():
            tokens = generator.audio_tokens(mel, len(pair.ids))
        predicted = sample_codes(generator.predict(tokens.data[0], text))
        hits += int(np.sum(predicted == pair.ids))
        total += len(pair.ids)
    return hits / max(total, 1)


def prompt_only_accuracy(generator, pairs):
    """Baseline: the text branch alone, speech prompt, all-MASK input."""
    text = embed_text(SPEECH_PROMPT).vector
    hits = total = 0
    with ag.no_grad():
        for pair in pairs:
            ids = np.full(len(pair.ids), generator.mask_id)
            predicted = sample_codes(generator.text_branch(text, ids).data[0])
            hits += int(np.sum(predicted == pair.ids))
            total += len(pair.ids)
    return hits / max(total, 1)
