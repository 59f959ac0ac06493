"""Text-to-motion evaluation: feature extraction and retrieval/distribution metrics."""
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy import linalg
from sklearn.linear_model import LinearRegression
from sklearn.metrics.pairwise import euclidean_distances, paired_euclidean_distances

from .errors import InsufficientDataError, InvalidInputError, ProtocolError
from .motion import FEATURE_DIM, MotionSequence
from .text import TEXT_WIDTH, TextEmbedding, embed_text
from .utils import derive_seed, make_rng

R_PRECISION_BATCH = 32
TOP_K = 3
FID_EPS = 1e-6
EVAL_STREAM = 5

REPORT_SCHEMA = {
    "type": "object",
    "required": ["metrics", "seed", "protocol_version", "fusion", "set_sizes", "config_hash"],
    "properties": {
        "metrics": {
            "type": "object",
            "required": ["r_precision_top1", "r_precision_top2", "r_precision_top3", "fid",
                         "mm_dist", "mmodality", "diversity"],
            "additionalProperties": {"type": "number"},
        },
        "ground_truth": {"type": "object", "additionalProperties": {"type": "number"}},
        "seed": {"type": "integer"},
        "protocol_version": {"type": "string"},
        "fusion": {"type": "string"},
        "set_sizes": {"type": "object", "additionalProperties": {"type": "integer"}},
        "config_hash": {"type": "string"},
    },
}


@dataclass
class EvalFeature:
    """64-dim evaluation embedding tagged ``motion`` or ``text``."""

    vector: np.ndarray
    modality: str


def _unit(x):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norm, 1e-12)


def motion_statistics(motion):
    """Temporal mean and standard deviation of every channel, (526,)."""
    frames = np.asarray(motion.frames if isinstance(motion, MotionSequence) else motion, dtype=np.float64)
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0)])


class EvalFeatureExtractor:
    """
    Seeded random-projection evaluator.

    Motion statistics and text vectors are projected to a shared width by
    fixed random matrices drawn from ``seed``. The text head can instead be
    fitted by linear regression onto motion features of paired training data.
    """

    def __init__(self, seed=0, feature_dim=64, motion_width=2 * FEATURE_DIM, text_width=TEXT_WIDTH):
        rng = make_rng(derive_seed(seed, EVAL_STREAM))
        self.seed = seed
        self.feature_dim = feature_dim
        self.motion_projection = rng.standard_normal((motion_width, feature_dim)) / np.sqrt(motion_width)
        self.text_projection = rng.standard_normal((text_width, feature_dim)) / np.sqrt(text_width)
        self.text_head = None

    def motion_features(self, motions):
        """(N, feature_dim) unit vectors for a list of motions."""
        stats = np.stack([motion_statistics(m) for m in motions])
        return _unit(stats @ self.motion_projection)

    def text_features(self, texts):
        """(N, feature_dim) unit vectors for prompts or TextEmbedding objects."""
        vectors = np.stack([_text_vector(t) for t in texts]).astype(np.float64)
        if self.text_head is not None:
            return _unit(self.text_head.predict(vectors))
        return _unit(vectors @ self.text_projection)

    def fit_text_head(self, texts, motions):
        """
        Regress text vectors onto the motion features of their paired motions.

        Args:
            texts (list): Prompts or embeddings
            motions (list): Paired MotionSequence objects
        """
        if len(texts) != len(motions) or len(texts) < 2:
            raise InsufficientDataError("text head needs at least two paired examples")
        vectors = np.stack([_text_vector(t) for t in texts]).astype(np.float64)
        self.text_head = LinearRegression().fit(vectors, self.motion_features(motions))
        logger.info(f"fitted evaluator text head on {len(texts)} pairs")
        return self

    def extract(self, item):
        if isinstance(item, MotionSequence) or (isinstance(item, np.ndarray) and item.ndim == 2):
            return EvalFeature(self.motion_features([item])[0], "motion")
        return EvalFeature(self.text_features([item])[0], "text")


def _text_vector(text):
    if isinstance(text, TextEmbedding):
        return text.vector
    if isinstance(text, np.ndarray):
        return text
    return embed_text(text).vector


def extract_eval_features(item, seed=0, extractor=None):
    """
    Evaluation feature for one motion or text item.

    Args:
        item (MotionSequence or TextEmbedding or str): Item to embed
        seed (int): Projection seed, ignored when ``extractor`` is given
        extractor (EvalFeatureExtractor): Reusable extractor

    Returns:
        EvalFeature: Unit-norm feature
    """
    extractor = extractor if extractor is not None else EvalFeatureExtractor(seed)
    return extractor.extract(item)


def _matrix(features):
    if len(features) and isinstance(features[0], EvalFeature):
        features = [f.vector for f in features]
    return np.atleast_2d(np.asarray(features, dtype=np.float64))


class MotionMetrics:
    """Retrieval and distribution metrics over evaluation features."""

    @staticmethod
    def r_precision(motion_features, text_features, top_k=TOP_K):
        """
        Top-k retrieval hit rates within one batch of 32 matched pairs.

        Args:
            motion_features: 32 motion features, row i matches text row i
            text_features: 32 text features

        Returns:
            tuple: Hit rates for k = 1..top_k

        Raises:
            ProtocolError: If the batch does not hold exactly 32 pairs
        """
        motion, text = _matrix(motion_features), _matrix(text_features)
        if motion.shape[0] != R_PRECISION_BATCH or text.shape[0] != R_PRECISION_BATCH:
            raise ProtocolError(f"R-Precision needs exactly {R_PRECISION_BATCH} pairs, "
                                f"got {motion.shape[0]} motions and {text.shape[0]} texts")
        order = np.argsort(euclidean_distances(motion, text), axis=1, kind="stable")
        rank = np.argmax(order == np.arange(R_PRECISION_BATCH)[:, None], axis=1)
        return tuple(float(np.mean(rank < k)) for k in range(1, top_k + 1))

    @staticmethod
    def r_precision_batches(motion_features, text_features, seed=0, top_k=TOP_K):
        """
        Mean R-Precision over disjoint batches of 32 after a seeded shuffle.

        Raises:
            ProtocolError: If fewer than 32 pairs are given
        """
        motion, text = _matrix(motion_features), _matrix(text_features)
        n = motion.shape[0]
        if n < R_PRECISION_BATCH:
            raise ProtocolError(f"R-Precision needs at least {R_PRECISION_BATCH} pairs, got {n}")
        order = make_rng(seed).permutation(n)
        scores = []
        for b in range(n // R_PRECISION_BATCH):
            picks = order[b * R_PRECISION_BATCH:(b + 1) * R_PRECISION_BATCH]
            scores.append(MotionMetrics.r_precision(motion[picks], text[picks], top_k))
        return tuple(float(v) for v in np.mean(scores, axis=0))

    @staticmethod
    def fid(set_a, set_b, eps=FID_EPS):
        """
        Frechet distance between Gaussian fits of two feature sets.

        Covariances are regularized by ``eps * I``; the square root of the
        covariance product is taken as sqrt(A) B sqrt(A) through symmetric
        eigendecompositions with negative eigenvalues clamped to zero.

        Raises:
            InsufficientDataError: If either set has fewer than two samples
        """
        a, b = _matrix(set_a), _matrix(set_b)
        if a.shape[0] < 2 or b.shape[0] < 2:
            raise InsufficientDataError(f"FID needs at least 2 samples per set, got {a.shape[0]} and {b.shape[0]}")
        mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
        identity = np.eye(a.shape[1])
        sigma_a = np.cov(a, rowvar=False) + eps * identity
        sigma_b = np.cov(b, rowvar=False) + eps * identity

        values, vectors = linalg.eigh(sigma_a)
        root_a = (vectors * np.sqrt(np.maximum(values, 0.0))) @ vectors.T
        product = root_a @ sigma_b @ root_a
        values = linalg.eigh(0.5 * (product + product.T), eigvals_only=True)
        tr_covmean = np.sum(np.sqrt(np.maximum(values, 0.0)))

        diff = mu_a - mu_b
        return float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * tr_covmean)

    @staticmethod
    def mm_dist(motion_features, text_features):
        """Mean Euclidean distance between matched motion and text features."""
        motion, text = _matrix(motion_features), _matrix(text_features)
        if motion.shape[0] == 0 or motion.shape != text.shape:
            raise InvalidInputError(f"MM-Dist needs matched nonempty sets, got {motion.shape} and {text.shape}")
        return float(np.mean(paired_euclidean_distances(motion, text)))

    @staticmethod
    def mmodality_from_features(groups, n_pairs=10, seed=0):
        """
        Mean distance within seeded disjoint pairs, averaged over prompts.

        Each group holds the features of repeated generations for one prompt;
        ``2 * n_pairs`` of them are drawn by a seeded shuffle and split into
        first and second halves.

        Raises:
            ProtocolError: If a group has fewer than ``2 * n_pairs`` samples
        """
        if not groups:
            raise InsufficientDataError("MModality needs at least one prompt")
        rng = make_rng(seed)
        values = []
        for group in groups:
            group = _matrix(group)
            if group.shape[0] < 2 * n_pairs:
                raise ProtocolError(f"MModality needs {2 * n_pairs} generations per prompt, got {group.shape[0]}")
            order = rng.permutation(group.shape[0])[:2 * n_pairs]
            first, second = group[order[:n_pairs]], group[order[n_pairs:]]
            values.append(np.mean(paired_euclidean_distances(first, second)))
        return float(np.mean(values))

    @staticmethod
    def diversity(features, n_pairs=300, seed=0):
        """
        Mean distance between two seeded disjoint random subsets.

        The subset size shrinks to half the set when fewer than ``2 * n_pairs``
        features are available.

        Raises:
            InsufficientDataError: If fewer than two features are given
        """
        features = _matrix(features)
        n = features.shape[0]
        if n < 2:
            raise InsufficientDataError(f"diversity needs at least 2 features, got {n}")
        if n < 2 * n_pairs:
            logger.debug(f"diversity: {n} features, using {n // 2} pairs instead of {n_pairs}")
            n_pairs = n // 2
        order = make_rng(seed).permutation(n)
        first, second = features[order[:n_pairs]], features[order[n_pairs:2 * n_pairs]]
        return float(np.mean(paired_euclidean_distances(first, second)))


def mmodality(generate, prompts, extractor, n_samples=30, n_pairs=10, sampling="categorical", seed=0):
    """
    Generate ``n_samples`` motions per prompt with distinct seeds and measure
    their spread.

    Args:
        generate (callable): ``generate(prompt, seed) -> MotionSequence``
        prompts (list): Prompts to evaluate
        extractor (EvalFeatureExtractor): Feature extractor
        n_samples (int): Generations per prompt
        n_pairs (int): Disjoint pairs per prompt
        sampling (str): Must be "categorical"
        seed (int): Base seed

    Raises:
        ProtocolError: If greedy sampling is requested
    """
    if sampling != "categorical":
        raise ProtocolError("MModality needs categorical sampling; greedy generation has zero variance")
    groups = []
    for p, prompt in enumerate(prompts):
        motions = [generate(prompt, derive_seed(seed, p, i)) for i in range(n_samples)]
        groups.append(extractor.motion_features(motions))
    value = MotionMetrics.mmodality_from_features(groups, n_pairs, seed)
    if value < 1e-12:
        logger.warning("MModality is zero: every generation per prompt was identical")
    return value


def evaluate_split(test_samples, tokenizer, generator, config, train_samples=None):
    """
    Run the evaluation protocol on a test split.

    Generated motions are conditioned on each sample's audio and label;
    R-Precision runs on batches of 32, FID compares generated to ground-truth
    motions, MModality generates repeatedly per distinct label. Every
    generation uses ``config.generator.fusion``.

    Returns:
        dict: JSON-ready report matching ``REPORT_SCHEMA``

    Raises:
        ProtocolError: If the test split has fewer than 32 samples
    """
    from .generator import generate_motion

    ev = config.eval
    fusion = config.generator.fusion
    if len(test_samples) < R_PRECISION_BATCH:
        raise ProtocolError(f"test split has {len(test_samples)} samples, R-Precision needs {R_PRECISION_BATCH}")
    extractor = EvalFeatureExtractor(config.seed, ev.feature_dim)
    if ev.fit_text_head and train_samples:
        extractor.fit_text_head([s.label for s in train_samples], [s.motion for s in train_samples])

    logger.info(f"evaluating {len(test_samples)} test samples, fusion {fusion}")
    generated = [generate_motion(s.waveform, tokenizer, generator, prompt=s.label, fusion=fusion).motion
                 for s in test_samples]
    truth = [s.motion for s in test_samples]
    text = extractor.text_features([s.label for s in test_samples])
    gen_features = extractor.motion_features(generated)
    truth_features = extractor.motion_features(truth)

    by_label = {}
    for s in test_samples:
        by_label.setdefault(s.label, s)

    def generate(prompt, seed):
        return generate_motion(by_label[prompt].waveform, tokenizer, generator, prompt=prompt,
                               sampling="categorical", temperature=ev.temperature, seed=seed,
                               fusion=fusion).motion

    top = MotionMetrics.r_precision_batches(gen_features, text, config.seed)
    truth_top = MotionMetrics.r_precision_batches(truth_features, text, config.seed)
    metrics = {
        "r_precision_top1": top[0], "r_precision_top2": top[1], "r_precision_top3": top[2],
        "fid": MotionMetrics.fid(gen_features, truth_features),
        "mm_dist": MotionMetrics.mm_dist(gen_features, text),
        "mmodality": mmodality(generate, sorted(by_label), extractor, ev.mmodality_samples,
                               ev.mmodality_pairs, seed=config.seed),
        "diversity": MotionMetrics.diversity(gen_features, ev.diversity_pairs, config.seed),
    }
    ground_truth = {
        "r_precision_top1": truth_top[0], "r_precision_top2": truth_top[1], "r_precision_top3": truth_top[2],
        "mm_dist": MotionMetrics.mm_dist(truth_features, text),
        "diversity": MotionMetrics.diversity(truth_features, ev.diversity_pairs, config.seed),
    }
    for name, value in metrics.items():
        logger.info(f"{name}: {value:.4f}")
    return {
        "metrics": metrics,
        "ground_truth": ground_truth,
        "seed": int(config.seed),
        "protocol_version": ev.protocol_version,
        "fusion": fusion,
        "set_sizes": {"test": len(test_samples), "train": len(train_samples or []),
                      "prompts": len(by_label), "r_precision_batches": len(test_samples) // R_PRECISION_BATCH},
        "config_hash": config.config_hash(),
    }


_JSON_TYPES = {"object": dict, "string": str, "number": (int, float), "integer": int}


def validate_report(report, schema=REPORT_SCHEMA, where="report"):
    """
    Check a report against the required keys and value types of ``REPORT_SCHEMA``.

    Raises:
        ProtocolError: Naming the first violation
    """
    expected = _JSON_TYPES[schema["type"]]
    if not isinstance(report, expected) or isinstance(report, bool):
        raise ProtocolError(f"{where} must be of type {schema['type']}")
    if schema["type"] != "object":
        return
    for key in schema.get("required", []):
        if key not in report:
            raise ProtocolError(f"{where} is missing {key!r}")
    properties = schema.get("properties", {})
    for key, value in report.items():
        sub = properties.get(key, schema.get("additionalProperties"))
        if sub is not None:
            validate_report(value, sub, f"{where}.{key}")
