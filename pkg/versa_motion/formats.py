"""Readers and writers for motion, token and 2D pose files."""
import struct

import numpy as np

from . import skeleton
from .errors import CompatibilityError, ParseError
from .motion import FEATURE_DIM, MotionSequence, PoseSequence2D
from .utils import atomic_write_bytes, atomic_write_text

MOTION_MAGIC = "VMOT1"
MOTION_BINARY_MAGIC = b"VMOTB"
TOKEN_MAGIC = "VTOK1"
POSE2D_MAGIC = "VP2D1"
HASH_FIELD = 64


def _fmt(value):
    return "%.9g" % value


def _header(magic, fields, config_hash=None):
    parts = [magic] + [f"{k}={v}" for k, v in fields]
    if config_hash:
        parts.append(f"CFG={config_hash}")
    return " ".join(parts)


def _parse_header(line, magic, required):
    tokens = line.split()
    if not tokens or tokens[0] != magic:
        raise ParseError(f"expected {magic} header", line=1)
    fields = {}
    for token in tokens[1:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise ParseError(f"malformed header field {token!r}", line=1)
        fields[key] = value
    for key in required:
        if key not in fields:
            raise ParseError(f"header lacks {key}=", line=1)
        try:
            fields[key] = int(fields[key])
        except ValueError:
            raise ParseError(f"header field {key} is not an integer", line=1)
    return fields


def _check_hash(fields, expected_hash):
    if expected_hash is not None and fields.get("CFG") not in (None, expected_hash):
        raise CompatibilityError(
            f"file config hash {fields.get('CFG')} does not match {expected_hash}")


def _parse_rows(lines, n_rows, width, start_line=2):
    rows = np.empty((n_rows, width), dtype=np.float64)
    body = list(lines)
    if len(body) < n_rows:
        raise ParseError(f"expected {n_rows} rows, found {len(body)}", line=start_line + len(body))
    for i in range(n_rows):
        values = body[i].split()
        if len(values) != width:
            raise ParseError(f"expected {width} values, found {len(values)}", line=start_line + i)
        try:
            rows[i] = [float(v) for v in values]
        except ValueError:
            raise ParseError("non-numeric value", line=start_line + i)
    for j in range(n_rows, len(body)):
        if body[j].strip():
            raise ParseError("unexpected trailing data", line=start_line + j)
    return rows


def motion_to_text(motion, config_hash=None):
    header = _header(MOTION_MAGIC, [("T", motion.T), ("D", FEATURE_DIM), ("FPS", motion.fps)],
                     config_hash)
    lines = [header] + [" ".join(_fmt(v) for v in row) for row in motion.frames]
    return "\n".join(lines) + "\n"


def motion_to_binary(motion, config_hash=None):
    hash_field = (config_hash or "").encode("ascii")[:HASH_FIELD].ljust(HASH_FIELD, b"\0")
    head = MOTION_BINARY_MAGIC + struct.pack("<III", motion.T, FEATURE_DIM, motion.fps) + hash_field
    return head + motion.frames.astype("<f4").tobytes()


def write_motion(path, motion, binary=False, config_hash=None):
    """
    Write a motion file.

    Args:
        path (str): Destination
        motion (MotionSequence): Features to write
        binary (bool): Use the VMOTB variant
        config_hash (str): Optional config hash embedded in the header
    """
    if binary:
        atomic_write_bytes(path, motion_to_binary(motion, config_hash))
    else:
        atomic_write_text(path, motion_to_text(motion, config_hash))


def parse_motion(data, expected_hash=None):
    """
    Parse either motion format from raw bytes.

    Raises:
        ParseError: On any malformed content
        CompatibilityError: If ``expected_hash`` is given and differs
    """
    if data.startswith(MOTION_BINARY_MAGIC):
        offset = len(MOTION_BINARY_MAGIC)
        if len(data) < offset + 12 + HASH_FIELD:
            raise ParseError("truncated VMOTB header")
        t, d, fps = struct.unpack_from("<III", data, offset)
        offset += 12
        stored_hash = data[offset:offset + HASH_FIELD].rstrip(b"\0").decode("ascii")
        offset += HASH_FIELD
        if d != FEATURE_DIM:
            raise ParseError(f"VMOTB width {d} != {FEATURE_DIM}")
        payload = data[offset:]
        if len(payload) != t * d * 4:
            raise ParseError(f"VMOTB payload has {len(payload)} bytes, expected {t * d * 4}")
        _check_hash({"CFG": stored_hash or None}, expected_hash)
        frames = np.frombuffer(payload, dtype="<f4").reshape(t, d)
        return MotionSequence(frames.astype(np.float32), fps=fps)

    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ParseError("motion file is neither VMOTB nor UTF-8 text")
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty motion file", line=1)
    fields = _parse_header(lines[0], MOTION_MAGIC, ("T", "D", "FPS"))
    if fields["D"] != FEATURE_DIM:
        raise ParseError(f"D={fields['D']} but features are {FEATURE_DIM} wide", line=1)
    if fields["FPS"] <= 0:
        raise ParseError("FPS must be positive", line=1)
    _check_hash(fields, expected_hash)
    rows = _parse_rows(lines[1:], fields["T"], FEATURE_DIM)
    return MotionSequence(rows.astype(np.float32), fps=fields["FPS"])


def read_motion(path, expected_hash=None):
    with open(path, "rb") as fh:
        return parse_motion(fh.read(), expected_hash)


def tokens_to_text(ids, codebook_size, config_hash=None):
    ids = np.asarray(ids, dtype=np.int64)
    header = _header(TOKEN_MAGIC, [("N", len(ids)), ("K", codebook_size)], config_hash)
    return header + "\n" + " ".join(str(int(i)) for i in ids) + "\n"


def write_tokens(path, ids, codebook_size, config_hash=None):
    atomic_write_text(path, tokens_to_text(ids, codebook_size, config_hash))


def parse_tokens(text, expected_hash=None):
    """
    Parse a VTOK1 token file.

    Returns:
        tuple: (np.ndarray of ids, codebook size K)
    """
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty token file", line=1)
    fields = _parse_header(lines[0], TOKEN_MAGIC, ("N", "K"))
    _check_hash(fields, expected_hash)
    values = " ".join(lines[1:]).split()
    if len(values) != fields["N"]:
        raise ParseError(f"expected {fields['N']} ids, found {len(values)}", line=2)
    try:
        ids = np.array([int(v) for v in values], dtype=np.int64)
    except ValueError:
        raise ParseError("non-integer token id", line=2)
    if ids.size and (ids.min() < 0 or ids.max() >= fields["K"]):
        raise ParseError(f"token id outside [0, {fields['K']})", line=2)
    return ids, fields["K"]


def read_tokens(path, expected_hash=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_tokens(fh.read(), expected_hash)


def pose2d_to_text(poses, config_hash=None):
    header = _header(POSE2D_MAGIC, [("T", poses.T), ("J", skeleton.NUM_JOINTS_2D)], config_hash)
    flat = poses.frames.reshape(poses.T, -1)
    return "\n".join([header] + [" ".join(_fmt(v) for v in row) for row in flat]) + "\n"


def write_pose2d(path, poses, config_hash=None):
    atomic_write_text(path, pose2d_to_text(poses, config_hash))


def parse_pose2d(text, expected_hash=None):
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty pose file", line=1)
    fields = _parse_header(lines[0], POSE2D_MAGIC, ("T", "J"))
    if fields["J"] != skeleton.NUM_JOINTS_2D:
        raise ParseError(f"J={fields['J']} but the pose graph has {skeleton.NUM_JOINTS_2D} joints",
                         line=1)
    _check_hash(fields, expected_hash)
    rows = _parse_rows(lines[1:], fields["T"], 2 * skeleton.NUM_JOINTS_2D)
    return PoseSequence2D(rows.reshape(fields["T"], skeleton.NUM_JOINTS_2D, 2))


def read_pose2d(path, expected_hash=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_pose2d(fh.read(), expected_hash)
