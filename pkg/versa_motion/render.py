"""Stick-figure rendering of 2D pose sequences to per-frame SVG (optional PNG)."""
import os

import numpy as np
from loguru import logger

from . import skeleton
from .errors import InvalidInputError
from .formats import MOTION_BINARY_MAGIC, MOTION_MAGIC, POSE2D_MAGIC, parse_motion, parse_pose2d
from .token2pose import template_poses
from .utils import atomic_write_text

STROKE = 0.006
JOINT_RADIUS = 0.008


def _coord(value):
    return "%.6f" % value


def frame_svg(frame):
    """
    One stick figure in the unit square.

    Args:
        frame (np.ndarray): (18, 2) normalized coordinates

    Returns:
        str: SVG document with ``viewBox="0 0 1 1"``
    """
    lines = ['<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1 1" width="512" height="512">',
             '<rect x="0" y="0" width="1" height="1" fill="white"/>']
    for j, parent in enumerate(skeleton.PARENTS_2D):
        if parent < 0:
            continue
        a, b = frame[parent], frame[j]
        lines.append(f'<line x1="{_coord(a[0])}" y1="{_coord(a[1])}" x2="{_coord(b[0])}" '
                     f'y2="{_coord(b[1])}" stroke="black" stroke-width="{STROKE}"/>')
    for x, y in frame:
        lines.append(f'<circle cx="{_coord(x)}" cy="{_coord(y)}" r="{JOINT_RADIUS}" fill="red"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def load_render_input(path):
    """
    2D poses from a pose file, or the projected joints of a motion file.

    Raises:
        ParseError: If the file is malformed
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(POSE2D_MAGIC.encode("ascii")):
        return parse_pose2d(data.decode("utf-8"))
    if data.startswith(MOTION_BINARY_MAGIC) or data.startswith(MOTION_MAGIC.encode("ascii")):
        return template_poses(parse_motion(data))
    raise InvalidInputError(f"{path} is neither a pose file nor a motion file")


def rasterize(frame, path, size=512):
    """Write one frame as PNG with matplotlib (optional dependency)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise InvalidInputError("PNG output needs matplotlib; install versa_motion[render]")
    fig = plt.figure(figsize=(size / 100, size / 100), dpi=100)
    ax = fig.add_axes([0, 0, 1, 1])
    for j, parent in enumerate(skeleton.PARENTS_2D):
        if parent >= 0:
            ax.plot([frame[parent, 0], frame[j, 0]], [frame[parent, 1], frame[j, 1]], color="black")
    ax.scatter(frame[:, 0], frame[:, 1], s=8, color="red")
    ax.set_xlim(0, 1)
    ax.set_ylim(1, 0)
    ax.axis("off")
    fig.savefig(path)
    plt.close(fig)


def render_sequence(poses, out_dir, png=False):
    """
    Write ``frame_00000.svg`` ... one file per frame.

    Returns:
        list: Written SVG paths
    """
    frames = np.asarray(poses.frames, dtype=np.float64)
    paths = []
    for t, frame in enumerate(frames):
        path = os.path.join(out_dir, f"frame_{t:05d}.svg")
        atomic_write_text(path, frame_svg(frame))
        if png:
            rasterize(frame, os.path.splitext(path)[0] + ".png")
        paths.append(path)
    logger.info(f"rendered {len(paths)} frames to {out_dir}")
    return paths
