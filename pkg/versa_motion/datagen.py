"""Synthetic paired corpus: parametric motion families, text labels and audio envelopes."""
import json
import os
from dataclasses import dataclass, field

import numpy as np
from loguru import logger
from scipy.ndimage import uniform_filter1d
from scipy.spatial.transform import Rotation

from . import skeleton
from .audio import SAMPLE_RATE, read_wav, write_wav
from .errors import InvalidInputError, ParseError, StratificationError
from .formats import read_motion, write_motion
from .motion import features_from_joints
from .utils import atomic_write_text, derive_seed, make_rng

AUDIO_PEAK = 0.9
AUDIO_FLOOR = 1e-4
SMOOTHING_FRAMES = 3
SPLIT_STREAM = 6
SPLIT_NAMES = ("train", "val", "test")

L_HIP, R_HIP, L_KNEE, R_KNEE = 1, 2, 4, 5
L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW = 16, 17, 18, 19
ARMS_DOWN = 1.2


def _still(t, p):
    rotvecs = np.zeros((t.size, skeleton.NUM_JOINTS, 3))
    # static arm pose, no motion
    rotvecs[:, L_SHOULDER, 2] = -ARMS_DOWN * p["amplitude"]
    rotvecs[:, R_SHOULDER, 2] = ARMS_DOWN * p["amplitude"]
    root = np.tile([0.0, skeleton.REST_ROOT_HEIGHT, 0.0], (t.size, 1))
    return rotvecs, root


def _wave_right_hand(t, p):
    rotvecs, root = _still(t, p)
    phase = 2.0 * np.pi * 1.5 * p["frequency"] * t + p["phase"]
    rotvecs[:, R_SHOULDER, 2] = -1.1
    rotvecs[:, R_ELBOW, 2] = -0.5 - 0.5 * p["amplitude"] * np.sin(phase)
    return rotvecs, root


def _walk_forward(t, p):
    rotvecs, root = _still(t, {"amplitude": 1.0})
    phase = 2.0 * np.pi * 1.0 * p["frequency"] * t + p["phase"]
    swing = 0.4 * p["amplitude"] * np.sin(phase)
    rotvecs[:, L_HIP, 0] = -swing
    rotvecs[:, R_HIP, 0] = swing
    rotvecs[:, L_KNEE, 0] = 0.6 * p["amplitude"] * np.maximum(0.0, np.sin(phase))
    rotvecs[:, R_KNEE, 0] = 0.6 * p["amplitude"] * np.maximum(0.0, -np.sin(phase))
    rotvecs[:, L_SHOULDER, 0] = swing
    rotvecs[:, R_SHOULDER, 0] = -swing
    root[:, 1] += 0.02 * np.sin(2.0 * phase)
    root[:, 2] = 1.2 * p["amplitude"] * t
    return rotvecs, root


def _jump(t, p):
    rotvecs, root = _still(t, {"amplitude": 1.0})
    phase = 2.0 * np.pi * 0.8 * p["frequency"] * t + p["phase"]
    lift = 0.25 * p["amplitude"] * np.maximum(0.0, np.sin(phase))
    crouch = 0.1 * p["amplitude"] * np.maximum(0.0, -np.sin(phase))
    root[:, 1] += lift - crouch
    bend = 4.0 * crouch
    rotvecs[:, L_HIP, 0] = rotvecs[:, R_HIP, 0] = -bend
    rotvecs[:, L_KNEE, 0] = rotvecs[:, R_KNEE, 0] = 2.0 * bend
    rotvecs[:, L_SHOULDER, 2] = -ARMS_DOWN + 5.0 * lift
    rotvecs[:, R_SHOULDER, 2] = ARMS_DOWN - 5.0 * lift
    return rotvecs, root


def _squat(t, p):
    rotvecs, root = _still(t, {"amplitude": 1.0})
    phase = 2.0 * np.pi * 0.5 * p["frequency"] * t + p["phase"]
    depth = p["amplitude"] * 0.5 * (1.0 - np.cos(phase))
    root[:, 1] -= 0.35 * depth
    rotvecs[:, L_HIP, 0] = rotvecs[:, R_HIP, 0] = -1.2 * depth
    rotvecs[:, L_KNEE, 0] = rotvecs[:, R_KNEE, 0] = 2.0 * depth
    rotvecs[:, L_SHOULDER, 0] = rotvecs[:, R_SHOULDER, 0] = -1.0 * depth
    return rotvecs, root


def _raise_both_arms(t, p):
    rotvecs, root = _still(t, {"amplitude": 1.0})
    phase = 2.0 * np.pi * 0.4 * p["frequency"] * t + p["phase"]
    angle = -ARMS_DOWN + 2.6 * p["amplitude"] * 0.5 * (1.0 - np.cos(phase))
    rotvecs[:, L_SHOULDER, 2] = angle
    rotvecs[:, R_SHOULDER, 2] = -angle
    return rotvecs, root


FAMILIES = {
    "still": ("a person stands still", _still),
    "wave_right_hand": ("a person waves the right hand", _wave_right_hand),
    "walk_forward": ("a person walks forward", _walk_forward),
    "jump": ("a person jumps up and down", _jump),
    "squat": ("a person squats down", _squat),
    "raise_both_arms": ("a person raises both arms", _raise_both_arms),
}


@dataclass
class Sample:
    """One corpus item. ``waveform`` is mono 16 kHz audio spanning the motion."""

    family: str
    index: int
    seed: int
    motion: object
    label: str
    waveform: np.ndarray

    @property
    def id(self):
        return f"{self.family}-{self.index:04d}"


@dataclass
class CorpusSpec:
    """Families, counts, sequence length and seed of a synthetic corpus."""

    families: list = field(default_factory=lambda: list(FAMILIES))
    samples_per_family: int = 100
    frames: int = 64
    seed: int = 1234
    audio_gain: float = 0.02

    def __post_init__(self):
        if len(set(self.families)) < 4:
            raise InvalidInputError("a corpus needs at least four distinct families")
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise InvalidInputError(f"unknown motion families: {', '.join(unknown)}")
        labels = [FAMILIES[f][0] for f in self.families]
        if len(set(labels)) != len(labels):
            raise InvalidInputError("family labels must be unique")

    @classmethod
    def from_config(cls, config):
        data = config.data
        return cls(list(data.families), data.samples_per_family, data.frames, config.seed, data.audio_gain)


def forward_kinematics(rotvecs, root):
    """
    Global joint positions from per-joint local rotations.

    Args:
        rotvecs (np.ndarray): (T, 22, 3) rotation vectors; joint j's rotation
            turns the bones of its children
        root (np.ndarray): (T, 3) root positions

    Returns:
        np.ndarray: (T, 22, 3) global positions
    """
    n = root.shape[0]
    positions = np.zeros((n, skeleton.NUM_JOINTS, 3))
    positions[:, 0] = root
    world = [Rotation.from_rotvec(rotvecs[:, 0])]
    for j in range(1, skeleton.NUM_JOINTS):
        parent = skeleton.PARENTS[j]
        positions[:, j] = positions[:, parent] + world[parent].apply(skeleton.REST_OFFSETS[j])
        world.append(world[parent] * Rotation.from_rotvec(rotvecs[:, j]))
    return positions


def motion_energy(positions, fps=skeleton.FPS):
    """Smoothed total joint speed per feature frame, (T-1,)."""
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=-1).sum(axis=-1) * fps
    return uniform_filter1d(steps, size=SMOOTHING_FRAMES, mode="nearest")


def synth_audio(energy, gain, rng, fps=skeleton.FPS, sample_rate=SAMPLE_RATE):
    """
    Random-sign noise whose per-frame amplitude follows the motion energy.

    Each motion frame spans ``sample_rate / fps`` samples with RMS equal to
    ``0.9 * tanh(gain * energy) + 1e-4``.
    """
    envelope = AUDIO_PEAK * np.tanh(gain * np.asarray(energy)) + AUDIO_FLOOR
    per_frame = sample_rate // fps
    noise = rng.choice([-1.0, 1.0], size=(envelope.size, per_frame))
    return (envelope[:, None] * noise).reshape(-1).astype(np.float32)


def jitter_params(rng):
    return {
        "amplitude": rng.uniform(0.8, 1.2),
        "frequency": rng.uniform(0.85, 1.15),
        "phase": rng.uniform(0.0, 2.0 * np.pi),
    }


def gen_sample(family, params=None, seed=0, index=0):
    """
    Generate one (motion, label, waveform) triple.

    Args:
        family (str): Family name, see ``FAMILIES``
        params (dict): ``frames`` (feature frames), ``audio_gain`` and any
            jitter override (``amplitude``, ``frequency``, ``phase``)
        seed (int): Sample seed
        index (int): Index within the family, used for the sample id

    Returns:
        Sample: Motion with ``frames`` feature rows and matching audio

    Raises:
        InvalidInputError: If the family is unknown
    """
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown motion family {family!r}")
    params = dict(params or {})
    frames = params.pop("frames", 64)
    gain = params.pop("audio_gain", 0.02)
    rng = make_rng(seed)
    jitter = jitter_params(rng)
    jitter.update(params)

    label, trajectory = FAMILIES[family]
    t = np.arange(frames + 1) / skeleton.FPS
    rotvecs, root = trajectory(t, jitter)
    positions = forward_kinematics(rotvecs, root)
    motion = features_from_joints(skeleton.to_root_relative(positions))
    waveform = synth_audio(motion_energy(positions), gain, rng)
    return Sample(family, index, seed, motion, label, waveform)


def build_corpus(spec):
    """All samples of a corpus spec, family by family."""
    samples = []
    for f, family in enumerate(spec.families):
        for i in range(spec.samples_per_family):
            seed = derive_seed(spec.seed, f, i)
            samples.append(gen_sample(family, {"frames": spec.frames, "audio_gain": spec.audio_gain}, seed, i))
    logger.info(f"generated {len(samples)} samples over {len(spec.families)} families")
    return samples


def split_corpus(samples, ratios=(0.8, 0.05, 0.15), seed=0):
    """
    Seeded split stratified by family.

    Args:
        samples (list): Corpus samples
        ratios (tuple): Train, validation and test fractions
        seed (int): Split seed

    Returns:
        tuple: (train, val, test) lists in corpus order

    Raises:
        StratificationError: If a family has fewer than 3 samples
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise InvalidInputError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    families = {}
    for n, sample in enumerate(samples):
        families.setdefault(sample.family, []).append(n)
    rng = make_rng(derive_seed(seed, SPLIT_STREAM))
    assignment = {}
    for family in sorted(families):
        members = families[family]
        if len(members) < 3:
            raise StratificationError(f"family {family!r} has {len(members)} samples, need at least 3")
        order = rng.permutation(len(members))
        n_test = max(1, int(round(len(members) * ratios[2]))) if ratios[2] > 0 else 0
        n_val = max(1, int(round(len(members) * ratios[1]))) if ratios[1] > 0 else 0
        n_train = len(members) - n_val - n_test
        for rank, k in enumerate(order):
            assignment[members[k]] = 0 if rank < n_train else 1 if rank < n_train + n_val else 2
    splits = ([], [], [])
    for n, sample in enumerate(samples):
        splits[assignment[n]].append(sample)
    return splits


def save_corpus(root, samples, splits, config_hash=None):
    """
    Write ``<root>/<family>/<id>.{vmot,wav,txt}`` and ``manifest.json``.

    Args:
        root (str): Corpus directory
        samples (list): Corpus samples
        splits (tuple): (train, val, test) as returned by :func:`split_corpus`
        config_hash (str): Embedded in every motion file and the manifest
    """
    split_of = {s.id: name for name, part in zip(SPLIT_NAMES, splits) for s in part}
    entries = []
    for sample in samples:
        stem = os.path.join(root, sample.family, sample.id)
        write_motion(stem + ".vmot", sample.motion, config_hash=config_hash)
        write_wav(stem + ".wav", sample.waveform)
        atomic_write_text(stem + ".txt", sample.label + "\n")
        entries.append({"id": sample.id, "family": sample.family, "index": sample.index,
                        "seed": sample.seed, "split": split_of.get(sample.id, "unused")})
    manifest = {"config_hash": config_hash, "samples": entries}
    atomic_write_text(os.path.join(root, "manifest.json"), json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    logger.info(f"wrote {len(samples)} samples to {root}")


def load_corpus(root, expected_hash=None):
    """
    Read a corpus written by :func:`save_corpus`.

    Motion files are checked against ``expected_hash``, by default the hash
    recorded in the manifest.

    Returns:
        tuple: (samples, {"train": [...], "val": [...], "test": [...]})

    Raises:
        ParseError: If the manifest is malformed
    """
    path = os.path.join(root, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}", line=exc.lineno)
    if expected_hash is None:
        expected_hash = manifest.get("config_hash")
    samples, splits = [], {name: [] for name in SPLIT_NAMES}
    for entry in manifest.get("samples", []):
        stem = os.path.join(root, entry["family"], entry["id"])
        with open(stem + ".txt", "r", encoding="utf-8") as fh:
            label = fh.read().strip()
        sample = Sample(entry["family"], entry["index"], entry["seed"],
                        read_motion(stem + ".vmot", expected_hash), label, read_wav(stem + ".wav"))
        samples.append(sample)
        if entry["split"] in splits:
            splits[entry["split"]].append(sample)
    return samples, splits
