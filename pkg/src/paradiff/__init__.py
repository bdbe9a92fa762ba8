"""Paraphrase generation via diffusion in the latent space of a frozen
sequence autoencoder, with a zero-initialized keyword-control adaptor."""

__version__ = "0.1.0"

from .schedule import (
    NoiseSchedule,
    build_cosine_schedule,
    build_linear_schedule,
    forward_noise,
)
from .codec import (
    CodecConfig,
    CodecModel,
    NormStats,
    Vocab,
    denormalize,
    fit_norm_stats,
    normalize,
    train_codec,
)
from .denoiser import DenoiserConfig, DenoiserModel, train_diffusion
from .sampler import SamplerConfig, generate, trace
from .controller import ControllerModel, extract_keyword_segment, finetune_controller
from .metrics import bleu, distinct_n, semantic_similarity, src_bleu
from .evaluate import MetricsReport, evaluate
from .data import ParaphraseRecord, load_corpus, make_toy_corpus, save_corpus
