import numpy as np
import pytest

from versa_motion import skeleton
from versa_motion.datagen import (
    AUDIO_FLOOR,
    FAMILIES,
    CorpusSpec,
    build_corpus,
    forward_kinematics,
    gen_sample,
    load_corpus,
    motion_energy,
    save_corpus,
    split_corpus,
    synth_audio,
)
from versa_motion.errors import CompatibilityError, InvalidInputError, StratificationError
from versa_motion.motion import JOINT_VELOCITIES


def test_families_have_unique_labels():
    labels = [label for label, _ in FAMILIES.values()]
    assert len(FAMILIES) >= 4
    assert len(set(labels)) == len(labels)


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_sample_shapes(family):
    sample = gen_sample(family, {"frames": 24}, seed=5, index=3)
    assert sample.motion.T == 24
    assert sample.waveform.shape == (24 * 800,)
    assert sample.label == FAMILIES[family][0]
    assert sample.id == f"{family}-0003"
    assert np.abs(sample.waveform).max() <= 0.9001
    assert np.all(np.isfinite(sample.motion.frames))


def test_samples_are_seeded():
    a = gen_sample("jump", {"frames": 16}, seed=9)
    b = gen_sample("jump", {"frames": 16}, seed=9)
    c = gen_sample("jump", {"frames": 16}, seed=10)
    np.testing.assert_array_equal(a.motion.frames, b.motion.frames)
    np.testing.assert_array_equal(a.waveform, b.waveform)
    assert not np.array_equal(a.waveform, c.waveform)


def test_still_motion_is_quiet():
    sample = gen_sample("still", {"frames": 20}, seed=1)
    np.testing.assert_allclose(np.abs(sample.waveform), AUDIO_FLOOR, rtol=1e-5)


def test_audio_amplitude_follows_motion():
    jump = gen_sample("jump", {"frames": 40}, seed=2)
    still = gen_sample("still", {"frames": 40}, seed=2)
    assert np.sqrt(np.mean(jump.waveform ** 2)) > 10 * np.sqrt(np.mean(still.waveform ** 2))


def test_synth_audio_frame_rms(rng):
    energy = np.array([0.0, 10.0, 100.0, 1000.0])
    waveform = synth_audio(energy, 0.02, rng)
    rms = np.sqrt(np.mean(waveform.reshape(4, 800).astype(np.float64) ** 2, axis=1))
    np.testing.assert_allclose(rms, 0.9 * np.tanh(0.02 * energy) + 1e-4, rtol=1e-5)


def test_forward_kinematics_at_rest():
    rest = skeleton.rest_joints()
    positions = forward_kinematics(np.zeros((2, skeleton.NUM_JOINTS, 3)), np.tile(rest[0], (2, 1)))
    np.testing.assert_allclose(positions, np.stack([rest, rest]), atol=1e-12)
    np.testing.assert_array_equal(motion_energy(positions), [0.0])


def test_unknown_family():
    with pytest.raises(InvalidInputError):
        gen_sample("backflip")
    with pytest.raises(InvalidInputError):
        CorpusSpec(families=["jump", "squat", "backflip", "still"])
    with pytest.raises(InvalidInputError):
        CorpusSpec(families=["jump", "squat", "still"])


def test_split_is_stratified():
    samples = build_corpus(CorpusSpec(samples_per_family=20, frames=8, seed=4))
    train, val, test = split_corpus(samples, seed=1)
    assert len(train) + len(val) + len(test) == len(samples)
    assert not {s.id for s in train} & {s.id for s in test}
    for family in FAMILIES:
        assert sum(s.family == family for s in train) == 16
        assert sum(s.family == family for s in val) == 1
        assert sum(s.family == family for s in test) == 3
    again = split_corpus(samples, seed=1)
    assert [s.id for s in again[2]] == [s.id for s in test]


def test_split_keeps_every_family_in_every_part(small_corpus):
    for part in split_corpus(small_corpus, seed=0):
        assert {s.family for s in part} == set(FAMILIES)


def test_split_rejects_small_families(small_corpus):
    with pytest.raises(StratificationError):
        split_corpus([s for s in small_corpus if s.index < 2])
    with pytest.raises(InvalidInputError):
        split_corpus(small_corpus, ratios=(0.5, 0.5, 0.5))


def test_corpus_round_trip(tmp_path, small_corpus):
    splits = split_corpus(small_corpus, seed=2)
    root = str(tmp_path / "corpus")
    save_corpus(root, small_corpus, splits, config_hash="0123abcd")
    assert (tmp_path / "corpus" / "jump" / "jump-0000.wav").exists()
    samples, loaded = load_corpus(root)
    assert [s.id for s in samples] == [s.id for s in small_corpus]
    assert [s.id for s in loaded["test"]] == [s.id for s in splits[2]]
    for original, restored in zip(small_corpus, samples):
        np.testing.assert_array_equal(restored.motion.frames, original.motion.frames)
        np.testing.assert_allclose(restored.waveform, original.waveform, atol=1.0 / 16384)
        assert restored.label == original.label and restored.seed == original.seed
    with pytest.raises(CompatibilityError):
        load_corpus(root, expected_hash="ffffffff")


def test_corpus_is_reproducible():
    spec = CorpusSpec(samples_per_family=2, frames=8, seed=21)
    first, second = build_corpus(spec), build_corpus(spec)
    for a, b in zip(first, second):
        assert a.seed == b.seed
        np.testing.assert_array_equal(a.waveform, b.waveform)
    assert len({s.seed for s in first}) == len(first)


@pytest.mark.parametrize("family", sorted(set(FAMILIES) - {"still"}))
def test_audio_envelope_tracks_joint_speed(family):
    for seed in range(3):
        sample = gen_sample(family, {"frames": 64}, seed=seed)
        envelope = np.sqrt(np.mean(sample.waveform.reshape(64, 800).astype(np.float64) ** 2, axis=1))
        velocities = sample.motion.frames[:, JOINT_VELOCITIES].reshape(64, -1, 3)
        speed = np.linalg.norm(velocities, axis=-1).sum(axis=-1)
        assert np.corrcoef(envelope, speed)[0, 1] > 0.9


def test_family_feature_means_are_separated():
    samples = build_corpus(CorpusSpec(samples_per_family=6, frames=64, seed=5))
    centroids = {family: np.mean([s.motion.frames.mean(axis=0) for s in samples if s.family == family], axis=0)
                 for family in FAMILIES}
    names = sorted(centroids)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            assert np.linalg.norm(centroids[a] - centroids[b]) > 0.5, (a, b)
