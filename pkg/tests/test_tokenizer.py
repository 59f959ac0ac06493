import numpy as np
import pytest

from versa_motion import autograd as ag
from versa_motion.config import apply_overrides
from versa_motion.errors import CompatibilityError, InsufficientLengthError, InvalidInputError, ShapeError
from versa_motion.motion import FEATURE_DIM, MotionSequence
from versa_motion.tokenizer import (
    Codebook,
    Decoder,
    Encoder,
    MotionTokenizer,
    Normalizer,
    VqLossConfig,
    codebook_usage,
    ema_update_and_reset,
    nearest_codes,
    quantize,
    reconstruction_error,
    train_vqvae,
    vq_loss,
)
from versa_motion.utils import make_rng


def brute_force_nearest(latents, codes, chunk=25):
    z = np.asarray(latents, dtype=np.float64)
    c = np.asarray(codes, dtype=np.float64)
    out = []
    for start in range(0, len(z), chunk):
        block = z[start:start + chunk]
        out.append(np.argmin(np.sum((block[:, None, :] - c[None]) ** 2, axis=-1), axis=1))
    return np.concatenate(out)


@pytest.mark.parametrize("seed", range(5))
def test_quantize_matches_exhaustive_search_small(seed):
    rng = np.random.default_rng(seed)
    codebook = Codebook.create(16, 4, rng)
    latents = rng.standard_normal((200, 4)).astype(np.float32)
    quantized = quantize(latents, codebook)
    np.testing.assert_array_equal(quantized.indices, brute_force_nearest(latents, codebook.codes))
    np.testing.assert_array_equal(quantized.vectors, codebook.codes[quantized.indices])


@pytest.mark.slow
def test_quantize_matches_exhaustive_search_reference_size(rng):
    codebook = Codebook.create(512, 512, rng)
    latents = (rng.standard_normal((1000, 512)) / np.sqrt(512)).astype(np.float32)
    np.testing.assert_array_equal(quantize(latents, codebook).indices,
                                  brute_force_nearest(latents, codebook.codes))


def test_ties_resolve_to_lowest_index():
    codes = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(nearest_codes([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]], codes), [0, 0, 1])
    with pytest.raises(ShapeError):
        nearest_codes(np.zeros((2, 3)), codes)


def test_vq_loss_zero_on_perfect_reconstruction(rng):
    motion = rng.standard_normal((1, 8, 5))
    z = rng.standard_normal((1, 2, 3))
    cfg = VqLossConfig(beta=0.25)
    assert float(vq_loss(motion, motion, z, z, cfg).data) == 0.0
    loss = vq_loss(np.zeros((1, 8, 5)), np.ones((1, 8, 5)), z, np.zeros_like(z), cfg)
    assert float(loss.data) == pytest.approx(1.0 + 0.25 * np.mean(z ** 2), rel=1e-5)


def test_vq_loss_gives_quantized_codes_no_gradient(rng):
    z = ag.Tensor(rng.standard_normal((1, 2, 3)), requires_grad=True)
    z_hat = ag.Tensor(rng.standard_normal((1, 2, 3)), requires_grad=True)
    vq_loss(np.zeros((1, 4, 2)), np.ones((1, 4, 2)), z, z_hat, VqLossConfig()).backward()
    assert z_hat.grad is None
    np.testing.assert_allclose(z.grad, 0.25 * 2.0 * (z.data - z_hat.data) / 6.0, rtol=1e-5, atol=1e-7)


def test_vq_loss_validation():
    with pytest.raises(InvalidInputError):
        VqLossConfig(beta=0.0)
    with pytest.raises(ShapeError):
        vq_loss(np.zeros((1, 4, 2)), np.zeros((1, 5, 2)), np.zeros(3), np.zeros(3), VqLossConfig())


def test_ema_update_moves_codes_to_assigned_means():
    codebook = Codebook.from_codes(np.zeros((3, 2)), gamma=0.0, reset_threshold=0.5, eps=1e-12)
    latents = np.array([[1.0, 1.0], [3.0, 1.0], [0.0, -2.0]])
    updated = ema_update_and_reset(codebook, latents, np.array([0, 0, 1]), make_rng(0))
    np.testing.assert_allclose(updated.codes[0], [2.0, 1.0])
    np.testing.assert_allclose(updated.codes[1], [0.0, -2.0])
    # code 2 received nothing and is reassigned to a batch latent
    assert updated.last_reset.tolist() == [False, False, True]
    assert any(np.allclose(updated.codes[2], row) for row in latents)
    np.testing.assert_array_equal(codebook.codes, 0.0)


def test_ema_update_keeps_counts_non_negative(rng):
    codebook = Codebook.create(8, 4, rng)
    latents = rng.standard_normal((64, 4))
    for _ in range(5):
        codebook = ema_update_and_reset(codebook, latents, nearest_codes(latents, codebook.codes), rng)
        assert np.all(codebook.ema_count >= 0.0)
        assert np.all(np.isfinite(codebook.codes))


def test_ema_update_rejects_bad_indices(rng):
    codebook = Codebook.create(4, 2, rng)
    with pytest.raises(InvalidInputError):
        ema_update_and_reset(codebook, np.zeros((2, 2)), np.array([0, 4]), rng)
    with pytest.raises(ShapeError):
        ema_update_and_reset(codebook, np.zeros((2, 2)), np.array([0]), rng)


def test_codebook_usage():
    utilization, perplexity = codebook_usage([0, 0, 1, 1], 4)
    assert utilization == 0.5
    assert perplexity == pytest.approx(2.0, rel=1e-5)


def test_codebook_initialized_from_few_latents(rng):
    codebook = Codebook.create(10, 3, rng).initialize_from(rng.standard_normal((4, 3)), rng)
    assert codebook.codes.shape == (10, 3)
    assert len(np.unique(codebook.codes, axis=0)) == 10


def test_normalizer_fit(rng):
    frames = rng.normal(loc=3.0, scale=2.0, size=(500, 4))
    frames[:, 3] = 1.0
    norm = Normalizer.fit(frames)
    out = norm.normalize(frames)
    np.testing.assert_allclose(out[:, :3].mean(axis=0), 0.0, atol=1e-4)
    assert norm.std[3] == pytest.approx(1e-2)
    np.testing.assert_allclose(norm.denormalize(out), frames, rtol=1e-5, atol=1e-5)


def test_encode_and_decode_lengths(tiny_tokenizer, rng):
    motion = MotionSequence(rng.standard_normal((30, FEATURE_DIM)) * 0.1)
    latents = tiny_tokenizer.encode(motion)
    assert latents.latents.shape == (8, 16)
    decoded = tiny_tokenizer.decode(tiny_tokenizer.tokenize(motion))
    assert decoded.T == 32
    assert tiny_tokenizer.reconstruct(motion).T == 30


def test_encode_needs_one_downsampling_window(tiny_tokenizer):
    with pytest.raises(InsufficientLengthError):
        tiny_tokenizer.encode(MotionSequence(np.zeros((3, FEATURE_DIM))))


def test_every_code_decodes_to_finite_motion(tiny_tokenizer):
    decoded = tiny_tokenizer.decode(np.arange(tiny_tokenizer.codebook.size))
    assert decoded.T == 4 * tiny_tokenizer.codebook.size
    assert np.all(np.isfinite(decoded.frames))
    with pytest.raises(InvalidInputError):
        tiny_tokenizer.decode([tiny_tokenizer.codebook.size])


def test_encoder_gradient(rng):
    encoder = Encoder(4, 3, rng, in_channels=5)
    weights = rng.standard_normal((1, 2, 3))
    error = ag.finite_diff_check(lambda x: ag.sum(ag.mul(encoder(x), weights)),
                                 {"x": rng.standard_normal((1, 8, 5))}, module=encoder)
    assert error < 1e-3


def test_decoder_gradient(rng):
    decoder = Decoder(4, 3, rng, out_channels=5)
    weights = rng.standard_normal((1, 8, 5))
    error = ag.finite_diff_check(lambda q: ag.sum(ag.mul(decoder(q), weights)),
                                 {"q": rng.standard_normal((1, 2, 3))}, module=decoder)
    assert error < 1e-3


def test_checkpoint_round_trip(tiny_tokenizer, tiny_config, rng):
    ids = rng.integers(0, tiny_tokenizer.codebook.size, size=5)
    restored = MotionTokenizer.from_checkpoint(tiny_tokenizer.to_checkpoint(), tiny_config)
    np.testing.assert_array_equal(restored.decode(ids).frames, tiny_tokenizer.decode(ids).frames)
    other = apply_overrides(tiny_config, {"tokenizer.code_dim": 8})
    with pytest.raises(CompatibilityError):
        MotionTokenizer.from_checkpoint(tiny_tokenizer.to_checkpoint(), other)


def test_train_vqvae_smoke(small_corpus, tiny_config):
    motions = [s.motion for s in small_corpus]
    ckpt, history = train_vqvae(motions, tiny_config, steps=3)
    assert ckpt.kind == "tokenizer"
    assert ckpt.meta["optimizer"]["step"] == 3
    assert [h["step"] for h in history] == [1, 2, 3]
    for entry in history:
        assert np.isfinite(entry["loss"]) and 0.0 < entry["utilization"] <= 1.0
    tokenizer = MotionTokenizer.from_checkpoint(ckpt, tiny_config)
    assert np.isfinite(reconstruction_error(tokenizer, motions[:3]))


def test_train_vqvae_is_deterministic(small_corpus, tiny_config):
    motions = [s.motion for s in small_corpus]
    _, first = train_vqvae(motions, tiny_config, steps=2)
    _, second = train_vqvae(motions, tiny_config, steps=2)
    assert first == second


def test_train_vqvae_needs_long_enough_motions(tiny_config):
    with pytest.raises(InvalidInputError):
        train_vqvae([MotionSequence(np.zeros((8, FEATURE_DIM)))], tiny_config, steps=1)
