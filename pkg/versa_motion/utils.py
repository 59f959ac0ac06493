"""Utility functions shared across versa_motion."""
import hashlib
import os
import tempfile

import numpy as np

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a_64(data):
    """
    64-bit FNV-1a hash.

    Args:
        data (bytes or str): Input; strings are UTF-8 encoded

    Returns:
        int: Hash value in [0, 2**64)
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def make_rng(seed):
    """Seeded numpy generator (PCG64)."""
    return np.random.default_rng(seed)


def derive_seed(*parts):
    """
    Derive a 32-bit child seed from integer parts.

    Args:
        *parts (int): Parent seed followed by any stream identifiers

    Returns:
        int: Child seed
    """
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    """Hex SHA-256 of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path, data):
    """
    Write bytes to ``path`` via a temporary file and rename.

    Args:
        path (str): Destination path
        data (bytes): File contents
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def linear_resample_matrix(n_in, n_out):
    """
    Matrix mapping ``n_in`` samples onto ``n_out`` by linear interpolation.

    Endpoints are aligned (sample 0 -> 0, sample n_in-1 -> n_out-1).

    Args:
        n_in (int): Input length
        n_out (int): Output length

    Returns:
        np.ndarray: (n_out, n_in) interpolation weights, rows sum to 1
    """
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == 1 or n_out == 1:
        if n_out == 1:
            weights[0, :] = 1.0 / n_in
        else:
            weights[:, 0] = 1.0
        return weights
    positions = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lower = np.floor(positions).astype(int)
    lower = np.minimum(lower, n_in - 2)
    frac = positions - lower
    rows = np.arange(n_out)
    weights[rows, lower] = 1.0 - frac
    weights[rows, lower + 1] += frac
    return weights
