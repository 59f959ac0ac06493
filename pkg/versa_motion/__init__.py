"""versa_motion - Audio and text driven motion generation with a token-to-pose relation bank."""

from .motion import MotionSequence, PoseSequence2D, features_from_joints, joints_from_features
from .rotations import rot6d_from_matrix, matrix_from_rot6d
from .autograd import Tensor, autodiff_eval, finite_diff_check, softmax_cross_entropy
from .optim import ParamStore, AdamState, adam_step
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from .config import RunConfig, load_config
from .tokenizer import (
    Codebook, LatentSequence, QuantizedSequence, VqLossConfig, MotionTokenizer,
    quantize, vq_loss, ema_update_and_reset, train_vqvae
)
from .audio import AudioTokenSeq, extract_audio_features, temporal_block
from .text import TextEmbedding, SPEECH_PROMPT, embed_text
from .generator import (
    BranchActivations, CodeLogits, MaskedTokenSeq, MotionGenerator,
    mask_tokens, text_branch_loss, audio_branch_loss, sample_codes, generate_motion
)
from .training import train_text_stage, train_audio_stage
from .token2pose import RelationBank, TargetSkeleton, build_bank, translate_tokens, fallback_project, retarget
from .metrics import EvalFeature, EvalFeatureExtractor, MotionMetrics, extract_eval_features, mmodality
from .datagen import CorpusSpec, gen_sample, split_corpus
from .errors import VersaError

__version__ = "0.1.0"
__all__ = [
    'MotionSequence', 'PoseSequence2D', 'features_from_joints', 'joints_from_features',
    'rot6d_from_matrix', 'matrix_from_rot6d',
    'Tensor', 'autodiff_eval', 'finite_diff_check', 'softmax_cross_entropy',
    'ParamStore', 'AdamState', 'adam_step',
    'Checkpoint', 'save_checkpoint', 'load_checkpoint',
    'RunConfig', 'load_config',
    'Codebook', 'LatentSequence', 'QuantizedSequence', 'VqLossConfig', 'MotionTokenizer',
    'quantize', 'vq_loss', 'ema_update_and_reset', 'train_vqvae',
    'AudioTokenSeq', 'extract_audio_features', 'temporal_block',
    'TextEmbedding', 'SPEECH_PROMPT', 'embed_text',
    'BranchActivations', 'CodeLogits', 'MaskedTokenSeq', 'MotionGenerator',
    'mask_tokens', 'text_branch_loss', 'audio_branch_loss', 'sample_codes', 'generate_motion',
    'train_text_stage', 'train_audio_stage',
    'RelationBank', 'TargetSkeleton', 'build_bank', 'translate_tokens', 'fallback_project', 'retarget',
    'EvalFeature', 'EvalFeatureExtractor', 'MotionMetrics', 'extract_eval_features', 'mmodality',
    'CorpusSpec', 'gen_sample', 'split_corpus',
    'VersaError'
]
