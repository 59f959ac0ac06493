"""Token-to-pose relation bank, token translation and 2D retargeting."""
import json
import os
from dataclasses import dataclass

import numpy as np
from loguru import logger

from . import skeleton
from .errors import AlignmentError, DegeneracyError, InvalidInputError, ParseError
from .motion import PoseSequence2D, joints_from_features, project_joints
from .utils import atomic_write_bytes, atomic_write_text, make_rng

FALLBACK = "fallback"
BANK_TAG = "bank:"


class RelationBank:
    """
    Token id to recorded 2D pose snippets of exactly ``l`` frames.

    Snippets are stored as float32; byte-identical snippets under the same
    id are kept once.
    """

    def __init__(self, codebook_size, downsample, config_hash=None):
        self.codebook_size = codebook_size
        self.downsample = downsample
        self.config_hash = config_hash
        self.entries = {}

    def __contains__(self, token_id):
        return int(token_id) in self.entries

    def __len__(self):
        return sum(len(v) for v in self.entries.values())

    def ids(self):
        return sorted(self.entries)

    def snippets(self, token_id):
        """List of ``(frames, template)`` pairs for a token id."""
        return self.entries.get(int(token_id), [])

    def add(self, token_id, frames, template):
        """
        Store a snippet unless an identical one is already present.

        Returns:
            bool: True if the snippet was added
        """
        token_id = int(token_id)
        if not 0 <= token_id < self.codebook_size:
            raise InvalidInputError(f"token id {token_id} outside [0, {self.codebook_size})")
        frames = np.asarray(frames, dtype=np.float32)
        if frames.shape != (self.downsample, skeleton.NUM_JOINTS_2D, 2):
            raise AlignmentError(f"snippet shape {frames.shape}, expected "
                                 f"({self.downsample}, {skeleton.NUM_JOINTS_2D}, 2)")
        stored = self.entries.setdefault(token_id, [])
        key = frames.tobytes()
        if any(existing.tobytes() == key for existing, _ in stored):
            return False
        stored.append((frames, template))
        return True

    def save(self, path):
        """Write ``<name>.json`` (index) and ``<name>.bin`` (float32 snippets)."""
        blob, index, offset = [], {}, 0
        for token_id in self.ids():
            items = []
            for frames, template in self.entries[token_id]:
                items.append({"offset": offset, "template": template})
                blob.append(frames.astype("<f4").tobytes())
                offset += frames.nbytes
            index[str(token_id)] = items
        manifest = {"K": self.codebook_size, "l": self.downsample, "joints": skeleton.NUM_JOINTS_2D,
                    "config_hash": self.config_hash, "entries": index}
        atomic_write_bytes(_blob_path(path), b"".join(blob))
        atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path):
        """
        Raises:
            ParseError: If the index or blob is malformed
        """
        try:
            with open(path, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
            with open(_blob_path(path), "rb") as fh:
                blob = fh.read()
        except json.JSONDecodeError as exc:
            raise ParseError(f"bank index {path} is not valid JSON: {exc}", line=exc.lineno)
        if manifest.get("joints") != skeleton.NUM_JOINTS_2D:
            raise ParseError(f"bank {path} stores {manifest.get('joints')} joints per pose")
        bank = cls(manifest["K"], manifest["l"], manifest.get("config_hash"))
        size = bank.downsample * skeleton.NUM_JOINTS_2D * 2 * 4
        for token_id, items in manifest["entries"].items():
            for item in items:
                start = item["offset"]
                if start + size > len(blob):
                    raise ParseError(f"snippet for token {token_id} extends past the end of the blob")
                frames = np.frombuffer(blob[start:start + size], dtype="<f4")
                bank.entries.setdefault(int(token_id), []).append(
                    (frames.reshape(bank.downsample, skeleton.NUM_JOINTS_2D, 2).astype(np.float32),
                     item["template"]))
        return bank

    def __repr__(self):
        return f"RelationBank(ids={len(self.entries)}, snippets={len(self)}, l={self.downsample})"


def _blob_path(path):
    return os.path.splitext(os.fspath(path))[0] + ".bin"


def template_poses(motion):
    """2D template poses for a motion: projected reconstructed joints, one per feature frame."""
    return project_joints(joints_from_features(motion)[:motion.T])


def build_bank(templates, tokenizer, bank=None, config_hash=None):
    """
    Link token ids to the 2D pose windows they were quantized from.

    Args:
        templates (list): ``(motion, poses)`` or ``(template_id, motion, poses)`` tuples
        tokenizer (MotionTokenizer): Trained tokenizer
        bank (RelationBank): Existing bank to extend
        config_hash (str): Hash recorded in a new bank

    Returns:
        RelationBank: The (extended) bank

    Raises:
        AlignmentError: If a template's pose and motion lengths differ
    """
    l = tokenizer.downsample
    if bank is None:
        bank = RelationBank(tokenizer.codebook.size, l, config_hash)
    added = 0
    for n, item in enumerate(templates):
        template_id, motion, poses = item if len(item) == 3 else (f"template-{n}",) + tuple(item)
        if poses.T != motion.T:
            raise AlignmentError(f"{template_id}: {poses.T} pose frames for {motion.T} motion frames")
        if np.any(poses.frames < 0.0) or np.any(poses.frames > 1.0):
            raise InvalidInputError(f"{template_id}: poses are not normalized to [0, 1]")
        indices = tokenizer.tokenize(motion).indices
        for i, token_id in enumerate(indices):
            if (i + 1) * l > poses.T:
                break
            added += bank.add(token_id, poses.frames[i * l:(i + 1) * l], template_id)
    logger.info(f"relation bank: {added} new snippets, {len(bank)} total over {len(bank.entries)} ids")
    return bank


def fallback_project(token_id, tokenizer):
    """
    Decode a single code and project the joints orthographically.

    Returns:
        PoseSequence2D: ``l`` frames in [0, 1], provenance ``fallback``
    """
    l = tokenizer.downsample
    motion = tokenizer.decode([int(token_id)])
    poses = project_joints(joints_from_features(motion)[:l])
    return PoseSequence2D(poses.frames, [FALLBACK])


def _cross_fade(snippet, previous):
    """Replace the first two frames by points between ``previous`` and frame 2."""
    faded = snippet.copy()
    target = snippet[2]
    for j in range(2):
        faded[j] = previous + (target - previous) * (j + 1) / 3.0
    return faded


def translate_tokens(ids, bank, seed=0, tokenizer=None, direct=False):
    """
    Realize a token sequence as 2D poses.

    The first snippet is a seeded uniform choice; each later one is the
    snippet whose first frame is nearest to the last emitted frame, its first
    two frames cross-faded from that frame.

    Args:
        ids (np.ndarray): Token ids
        bank (RelationBank): Snippet store
        seed (int): Seed for the first choice
        tokenizer (MotionTokenizer): Needed for ids absent from the bank
        direct (bool): Bypass the bank and project every token

    Returns:
        PoseSequence2D: ``len(ids) * l`` frames; provenance has one tag per token

    Raises:
        InvalidInputError: On an empty id sequence, or an unseen id without a tokenizer
    """
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise InvalidInputError("no token ids to translate")
    rng = make_rng(seed)
    pieces, provenance, fallbacks = [], [], 0
    for token_id in ids:
        candidates = [] if direct else bank.snippets(token_id)
        if candidates:
            if not pieces:
                frames, template = candidates[int(rng.integers(len(candidates)))]
            else:
                starts = np.stack([c[0][0] for c in candidates]).astype(np.float64)
                distance = np.linalg.norm((starts - pieces[-1][-1]).reshape(len(candidates), -1), axis=1)
                frames, template = candidates[int(np.argmin(distance))]
            frames = frames.astype(np.float64)
            provenance.append(BANK_TAG + template)
        else:
            if tokenizer is None:
                raise InvalidInputError(f"token {token_id} is not in the bank and no tokenizer was given")
            frames = fallback_project(token_id, tokenizer).frames
            provenance.append(FALLBACK)
            fallbacks += 1
        if pieces and frames.shape[0] >= 3:
            frames = _cross_fade(frames, pieces[-1][-1])
        pieces.append(frames)
    if fallbacks and not direct:
        logger.warning(f"{fallbacks} of {ids.size} tokens were not in the bank; used direct projection")
    return PoseSequence2D(np.clip(np.concatenate(pieces), 0.0, 1.0), provenance)


@dataclass
class TargetSkeleton:
    """2D bone-length table (root entry 0) and root anchor."""

    bone_lengths: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        self.bone_lengths = np.asarray(self.bone_lengths, dtype=np.float64)
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        if self.bone_lengths.shape != (skeleton.NUM_JOINTS_2D,) or self.anchor.shape != (2,):
            raise InvalidInputError("target skeleton needs 18 bone lengths and a 2D anchor")
        bones = np.arange(skeleton.NUM_JOINTS_2D) != skeleton.ROOT_2D
        if np.any(self.bone_lengths[bones] <= 0):
            raise InvalidInputError("target bone lengths must be positive")

    @classmethod
    def from_frame(cls, frame):
        """Measure a skeleton from one (18, 2) pose."""
        frame = np.asarray(frame, dtype=np.float64)
        return cls(skeleton.bone_lengths_2d(frame), frame[skeleton.ROOT_2D])

    def scaled(self, factor, anchor=None):
        return TargetSkeleton(self.bone_lengths * factor, self.anchor if anchor is None else anchor)

    def to_json(self):
        return json.dumps({"bone_lengths": self.bone_lengths.tolist(), "anchor": self.anchor.tolist(),
                           "joints": skeleton.JOINT_NAMES_2D}, indent=1)

    @classmethod
    def from_json(cls, text):
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"target skeleton is not valid JSON: {exc}", line=exc.lineno)
        return cls(values["bone_lengths"], values["anchor"])

    def save(self, path):
        atomic_write_text(path, self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def retarget(seq, target):
    """
    Rescale every bone to the target length, root outward, keeping bone
    directions; the sequence is then translated so the first root lands on
    the anchor.

    Raises:
        DegeneracyError: If a source bone has zero length
    """
    frames = np.asarray(seq.frames, dtype=np.float64)
    out = np.empty_like(frames)
    out[:, skeleton.ROOT_2D] = frames[:, skeleton.ROOT_2D]
    for j in skeleton.topological_order_2d()[1:]:
        parent = skeleton.PARENTS_2D[j]
        bone = frames[:, j] - frames[:, parent]
        length = np.linalg.norm(bone, axis=-1, keepdims=True)
        if np.any(length <= 1e-12):
            raise DegeneracyError(f"bone {skeleton.JOINT_NAMES_2D[j]} has zero length")
        out[:, j] = out[:, parent] + bone / length * target.bone_lengths[j]
    out += target.anchor - out[0, skeleton.ROOT_2D]
    return PoseSequence2D(out, list(seq.provenance))
