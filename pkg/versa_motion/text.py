"""Deterministic hashed bag-of-words text embedding."""
import re
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .utils import fnv1a_64, make_rng

TEXT_WIDTH = 512
SPEECH_PROMPT = "A person is giving a speech."

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class TextEmbedding:
    """Unit-norm text vector; ``text`` is kept for provenance."""

    text: str
    vector: np.ndarray

    def __len__(self):
        return self.vector.shape[0]


def tokenize_text(s):
    return [w for w in _TOKEN_SPLIT.split(s.lower()) if w]


def word_vector(word, width=TEXT_WIDTH):
    """Fixed pseudo-random vector seeded by the word's FNV-1a hash."""
    return make_rng(fnv1a_64(word)).standard_normal(width)


def embed_text(s, width=TEXT_WIDTH):
    """
    Embed a prompt: lowercase, split on non-alphanumerics, average the word
    vectors and L2-normalize.

    Raises:
        InvalidInputError: If the prompt has no alphanumeric word
    """
    if not isinstance(s, str) or not s.strip():
        raise InvalidInputError("text prompt is empty")
    words = tokenize_text(s)
    if not words:
        raise InvalidInputError(f"text prompt {s!r} has no alphanumeric word")
    mean = np.mean([word_vector(w, width) for w in words], axis=0)
    vector = mean / np.linalg.norm(mean)
    return TextEmbedding(s, vector.astype(np.float32))
