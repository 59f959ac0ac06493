import numpy as np
import pytest

from versa_motion import autograd as ag
from versa_motion.audio import AudioTokenSeq
from versa_motion.config import apply_overrides
from versa_motion.errors import CompatibilityError, InvalidInputError, ShapeError, UndefinedMeanError
from versa_motion.generator import (
    CodeLogits,
    MotionGenerator,
    audio_branch_loss,
    generate_motion,
    mask_tokens,
    sample_codes,
    text_branch_loss,
    window_starts,
)
from versa_motion.text import embed_text
from versa_motion.tokenizer import MotionTokenizer
from versa_motion.utils import make_rng


def audio_seq(rng, config, n=6):
    return AudioTokenSeq(rng.standard_normal((n, config.audio.token_width)).astype(np.float32))


def test_mask_tokens_is_seeded_and_consistent():
    tokens = np.arange(40) % 7
    a = mask_tokens(tokens, 0.5, seed=3, mask_id=32)
    b = mask_tokens(tokens, 0.5, seed=3, mask_id=32)
    np.testing.assert_array_equal(a.ids, b.ids)
    masked = a.flags == 0
    assert masked.any()
    np.testing.assert_array_equal(a.ids[masked], 32)
    np.testing.assert_array_equal(a.ids[~masked], tokens[~masked])


def test_mask_ratio_is_respected_on_average():
    masked = mask_tokens(np.zeros((50, 200), dtype=int), 0.3, seed=0, mask_id=9)
    assert np.mean(masked.flags == 0) == pytest.approx(0.3, abs=0.02)


def test_tiny_ratio_still_masks_one_position():
    for seed in range(10):
        assert (mask_tokens(np.zeros(3, dtype=int), 0.01, seed, 5).flags == 0).sum() >= 1


@pytest.mark.parametrize("tokens,ratio", [([], 0.5), ([1, 2], 0.0), ([1, 2], 1.0)])
def test_mask_tokens_validation(tokens, ratio):
    with pytest.raises(InvalidInputError):
        mask_tokens(tokens, ratio, 0, 10)


def test_text_loss_on_uniform_logits_is_log_k():
    tokens = np.arange(10)
    masked = mask_tokens(tokens, 0.5, seed=1, mask_id=512)
    loss = text_branch_loss(np.zeros((10, 512)), tokens, masked.flags)
    assert float(loss.data) == pytest.approx(np.log(512), abs=1e-3)
    with pytest.raises(UndefinedMeanError):
        text_branch_loss(np.zeros((10, 512)), tokens, np.ones(10))


def test_audio_loss_on_uniform_logits_is_log_k(tiny_config, rng):
    config = apply_overrides(tiny_config, {"tokenizer.codebook_size": 512})
    generator = MotionGenerator(config, rng)
    generator.head.weight.data[:] = 0.0
    generator.head.bias.data[:] = 0.0
    audio = ag.Tensor(rng.standard_normal((2, 5, config.audio.token_width)))
    loss = audio_branch_loss(generator, audio, rng.integers(0, 512, size=(2, 5)))
    assert float(loss.data) == pytest.approx(np.log(512), abs=1e-3)
    with pytest.raises(ShapeError):
        audio_branch_loss(generator, audio, np.zeros((2, 4), dtype=int))


def test_greedy_sampling_breaks_ties_low():
    logits = np.array([[0.0, 2.0, 2.0], [5.0, 1.0, 5.0]])
    np.testing.assert_array_equal(sample_codes(logits), [1, 0])


def test_categorical_sampling_is_seeded(rng):
    logits = CodeLogits(rng.standard_normal((50, 8)))
    a = sample_codes(logits, "categorical", 1.0, seed=4)
    np.testing.assert_array_equal(a, sample_codes(logits, "categorical", 1.0, seed=4))
    assert np.all((a >= 0) & (a < 8))
    assert not np.array_equal(a, sample_codes(logits, "categorical", 1.0, seed=5))


def test_low_temperature_matches_greedy(rng):
    logits = rng.standard_normal((64, 16))
    top2 = np.sort(logits, axis=1)[:, -2:]
    clear = top2[:, 1] - top2[:, 0] > 1e-2
    sampled = sample_codes(logits, "categorical", 1e-4, seed=0)
    np.testing.assert_array_equal(sampled[clear], sample_codes(logits)[clear])
    assert clear.sum() > 50


def test_categorical_frequencies_follow_probabilities():
    logits = np.log(np.tile([0.2, 0.5, 0.3], (20000, 1)))
    ids = sample_codes(logits, "categorical", 1.0, seed=0)
    np.testing.assert_allclose(np.bincount(ids, minlength=3) / ids.size, [0.2, 0.5, 0.3], atol=0.015)


def test_sampling_validation():
    with pytest.raises(InvalidInputError):
        sample_codes(np.zeros((2, 3)), "beam")
    with pytest.raises(InvalidInputError):
        sample_codes(np.zeros((2, 3)), "categorical", 0.0, seed=0)


def test_fused_logits_shape(tiny_generator, tiny_config, rng):
    logits = tiny_generator.predict(audio_seq(rng, tiny_config), embed_text("a person jumps"))
    assert logits.logits.shape == (6, tiny_config.tokenizer.codebook_size)
    np.testing.assert_allclose(logits.probabilities().sum(axis=-1), 1.0)
    assert len(tiny_generator.last_activations.audio) == tiny_config.generator.layers
    assert len(tiny_generator.last_activations.text) == tiny_config.generator.layers


def test_zero_text_branch_reduces_to_audio_only(tiny_generator, tiny_config, rng):
    audio = audio_seq(rng, tiny_config)
    zeros = [np.zeros((1, 6, tiny_config.generator.width), dtype=np.float32)] * tiny_config.generator.layers
    fused = tiny_generator.forward_fused(audio, None, text_outputs=zeros)
    np.testing.assert_array_equal(fused.data, tiny_generator.forward_audio(audio).data)


def test_prompt_changes_fused_logits(tiny_generator, tiny_config, rng):
    audio = audio_seq(rng, tiny_config)
    walk = tiny_generator.predict(audio, embed_text("a person walks forward")).logits
    jump = tiny_generator.predict(audio, embed_text("a person jumps up and down")).logits
    assert not np.allclose(walk, jump)


def test_masked_ids_must_match_audio_length(tiny_generator, tiny_config, rng):
    with pytest.raises(ShapeError):
        tiny_generator.predict(audio_seq(rng, tiny_config), embed_text("a person jumps"), masked=np.zeros(5, dtype=int))


@pytest.mark.parametrize("n,expected", [(5, [0]), (16, [0]), (30, [0, 14]), (31, [0, 14, 28])])
def test_window_starts(n, expected):
    assert window_starts(n, 16, 2) == expected


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(2))
def test_fused_gradient(tiny_config, seed):
    config = apply_overrides(tiny_config, {
        "tokenizer.codebook_size": 6, "generator.layers": 2, "generator.heads": 1, "generator.width": 4,
        "generator.text_width": 8, "audio.token_width": 4, "audio.n_mels": 4})
    rng = np.random.default_rng(seed)
    generator = MotionGenerator(config, rng)
    text = rng.standard_normal(8)
    ids = np.array([[2, 6, 6]])
    weights = rng.standard_normal((1, 3, 6))

    def graph(audio):
        return ag.sum(ag.mul(generator.forward_fused(audio, text, masked=ids), weights))

    error = ag.finite_diff_check(graph, {"audio": rng.standard_normal((1, 3, 4))}, module=generator)
    assert error < 5e-3


def test_generation_lengths(tiny_tokenizer, tiny_generator, rng):
    waveform = rng.uniform(-0.3, 0.3, 16000).astype(np.float32)
    result = generate_motion(waveform, tiny_tokenizer, tiny_generator)
    assert result.ids.shape == (5,)
    assert result.motion.T == 20
    assert result.windows == [0]

    long = generate_motion(np.tile(waveform, 4), tiny_tokenizer, tiny_generator)
    assert long.ids.shape == (20,)
    assert long.motion.T == 80
    assert long.windows == [0, 6, 12]
    assert np.all((long.ids >= 0) & (long.ids < tiny_tokenizer.codebook.size))
    assert np.all(np.isfinite(long.motion.frames))


def test_generation_is_deterministic(tiny_tokenizer, tiny_generator, rng):
    waveform = rng.uniform(-0.3, 0.3, 24000).astype(np.float32)
    a = generate_motion(waveform, tiny_tokenizer, tiny_generator, "a person squats down", "categorical", seed=9)
    b = generate_motion(waveform, tiny_tokenizer, tiny_generator, "a person squats down", "categorical", seed=9)
    np.testing.assert_array_equal(a.ids, b.ids)
    np.testing.assert_array_equal(a.motion.frames, b.motion.frames)


def test_generation_checks_model_pair(tiny_config, tiny_generator, rng):
    other = MotionTokenizer(apply_overrides(tiny_config, {"tokenizer.codebook_size": 64}), make_rng(0))
    with pytest.raises(CompatibilityError):
        generate_motion(rng.uniform(-0.1, 0.1, 8000), other, tiny_generator)


def test_generator_checkpoint_round_trip(tiny_generator, tiny_config, rng):
    restored = MotionGenerator.from_checkpoint(tiny_generator.to_checkpoint("audio"), tiny_config)
    audio = audio_seq(rng, tiny_config)
    prompt = embed_text("a person raises both arms")
    np.testing.assert_array_equal(restored.predict(audio, prompt).logits, tiny_generator.predict(audio, prompt).logits)
    assert tiny_generator.to_checkpoint("text").meta["stage"] == "text"


def test_fusion_modes(tiny_generator, tiny_config, rng):
    audio = audio_seq(rng, tiny_config)
    prompt = embed_text("a person walks forward")
    logits = {mode: tiny_generator.predict(audio, prompt, fusion=mode).logits
              for mode in ("per_layer", "last_layer", "none")}
    assert not np.allclose(logits["per_layer"], logits["last_layer"])
    assert not np.allclose(logits["per_layer"], logits["none"])
    assert not np.allclose(logits["last_layer"], logits["none"])

    noise = [rng.standard_normal((1, 6, tiny_config.generator.width)).astype(np.float32)
             for _ in range(tiny_config.generator.layers)]
    ignored = tiny_generator.forward_fused(audio, None, text_outputs=noise, fusion="none")
    np.testing.assert_array_equal(ignored.data, tiny_generator.forward_audio(audio).data)
    np.testing.assert_array_equal(logits["none"], tiny_generator.forward_audio(audio).data[0])
    assert tiny_generator.last_activations.text == []

    tiny_generator.forward_fused(audio, None, text_outputs=noise, fusion="last_layer")
    assert len(tiny_generator.last_activations.text) == 1
    with pytest.raises(InvalidInputError):
        tiny_generator.predict(audio, prompt, fusion="every_other")


def test_checkpoint_takes_fusion_from_config(tiny_generator, tiny_config, rng):
    config = apply_overrides(tiny_config, {"generator.fusion": "last_layer"})
    restored = MotionGenerator.from_checkpoint(tiny_generator.to_checkpoint("audio"), config)
    assert restored.fusion == "last_layer"
    audio = audio_seq(rng, tiny_config)
    prompt = embed_text("a person squats down")
    np.testing.assert_array_equal(restored.predict(audio, prompt).logits,
                                  tiny_generator.predict(audio, prompt, fusion="last_layer").logits)


def test_overlap_ids_come_from_the_earlier_window(monkeypatch, tiny_tokenizer, tiny_generator, rng):
    from versa_motion import generator as generator_module

    chosen = []

    def recording_sample_codes(*args, **kwargs):
        chosen.append(sample_codes(*args, **kwargs))
        return chosen[-1]

    monkeypatch.setattr(generator_module, "sample_codes", recording_sample_codes)
    waveform = rng.uniform(-0.3, 0.3, 32000).astype(np.float32)
    result = generate_motion(waveform, tiny_tokenizer, tiny_generator)
    assert result.windows == [0, 6]
    first, second = chosen
    np.testing.assert_array_equal(result.ids[:8], first)
    np.testing.assert_array_equal(result.ids[8:], second[2:])

    early, late = tiny_tokenizer.decode(first).frames, tiny_tokenizer.decode(second).frames
    np.testing.assert_allclose(result.motion.frames[:24], early[:24], atol=1e-5)
    np.testing.assert_allclose(result.motion.frames[32:], late[8:], atol=1e-5)
    weights = (np.arange(1, 9) / 9.0)[:, None]
    np.testing.assert_allclose(result.motion.frames[24:32], (1 - weights) * early[24:] + weights * late[:8],
                               atol=1e-5)
