import os

import pytest

from versa_motion.config import load_config
from versa_motion.datagen import CorpusSpec, build_corpus
from versa_motion.generator import MotionGenerator
from versa_motion.tokenizer import MotionTokenizer
from versa_motion.utils import make_rng

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture(scope="session")
def tiny_config():
    return load_config(os.path.join(CONFIG_DIR, "tiny.json"), environ={})


@pytest.fixture
def tiny_tokenizer(tiny_config):
    return MotionTokenizer(tiny_config, make_rng(0))


@pytest.fixture
def tiny_generator(tiny_config):
    return MotionGenerator(tiny_config, make_rng(1))


@pytest.fixture(scope="session")
def small_corpus():
    spec = CorpusSpec(samples_per_family=3, frames=32, seed=3)
    return build_corpus(spec)
