"""Builders for the trained artifacts the acceptance suite depends on.

Plain functions (no pytest machinery) so both the session fixtures in
conftest.py and a standalone warm-up script can share the same on-disk cache
under ``tests/_artifacts``. Every cache key hashes the corpus fingerprint,
the config, and the seed, so stale artifacts are never reused.
"""

import hashlib
import json
from pathlib import Path

ARTIFACTS = Path(__file__).parent / "_artifacts"

CODEC_SEED = 0
CODEC_STEPS = 1500
DIFFUSION_SEED = 0
DIFFUSION_STEPS = 30_000
CONTROLLER_SEED = 0
CONTROLLER_STEPS = 6000
CONTROLLER_LR = 1e-5


def cache_path(tag: str, payload) -> Path:
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]
    return ARTIFACTS / f"{tag}-{digest}"


def corpus_fingerprint(records) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(f"{r.source}\t{r.target}\t{r.domain}\n".encode())
    return h.hexdigest()


def build_corpora():
    from paradiff.data import make_toy_corpus

    return {
        "trainA": make_toy_corpus(0, 3000, "A"),
        "testA": make_toy_corpus(101, 100, "A"),
        "trainB": make_toy_corpus(1, 800, "B"),
        "testB": make_toy_corpus(202, 100, "B"),
    }


def all_sentences(corpora):
    sents = set()
    for records in corpora.values():
        sents |= {r.source for r in records} | {r.target for r in records}
    return sorted(sents)


def build_codec(corpora):
    from paradiff.codec import CodecConfig, fit_norm_stats, load_codec, save_codec, train_codec

    sentences = all_sentences(corpora)
    config = CodecConfig(steps=CODEC_STEPS)
    path = cache_path(
        "codec",
        {
            "sentences": hashlib.sha256("\n".join(sentences).encode()).hexdigest(),
            "config": config.to_dict(),
            "seed": CODEC_SEED,
        },
    )
    if path.exists():
        return load_codec(path)
    codec, _ = train_codec(sentences, config, seed=CODEC_SEED)
    stats = fit_norm_stats(sentences, codec)
    save_codec(path, codec, stats)
    return codec, stats


def build_schedule():
    from paradiff.schedule import build_cosine_schedule

    return build_cosine_schedule(1000)


def build_denoiser(corpora, codec, stats, schedule):
    from paradiff.checkpoint import params_hash
    from paradiff.denoiser import (
        DenoiserConfig,
        DiffusionTrainConfig,
        load_denoiser,
        save_denoiser,
    )
    from paradiff.pipeline import train_diffusion_from_corpus

    model_config = DenoiserConfig(d=codec.config.d, L=codec.config.L)
    train_config = DiffusionTrainConfig(steps=DIFFUSION_STEPS)
    path = cache_path(
        "denoiser",
        {
            "corpus": corpus_fingerprint(corpora["trainA"]),
            "codec": params_hash(dict(codec.state_dict())),
            "model": model_config.to_dict(),
            "train": train_config.to_dict(),
            "seed": DIFFUSION_SEED,
        },
    )
    if path.exists():
        model, _, manifest = load_denoiser(path)
        return model, manifest.get("loss_log", [])
    model, log = train_diffusion_from_corpus(
        corpora["trainA"], codec, stats, model_config, train_config,
        schedule, seed=DIFFUSION_SEED,
    )
    save_denoiser(path, model, schedule, extra={"loss_log": log})
    return model, log


def build_controller(records, codec, stats, base, schedule, tag):
    from paradiff.checkpoint import params_hash
    from paradiff.controller import (
        ControllerTrainConfig,
        finetune_controller,
        load_controller,
        save_controller,
    )

    config = ControllerTrainConfig(steps=CONTROLLER_STEPS, lr=CONTROLLER_LR)
    path = cache_path(
        tag,
        {
            "corpus": corpus_fingerprint(records),
            "base": params_hash(dict(base.state_dict())),
            "train": config.to_dict(),
            "seed": CONTROLLER_SEED,
        },
    )
    if path.exists():
        return load_controller(path, base)
    controller, _ = finetune_controller(
        records, base, codec, stats, schedule, config, seed=CONTROLLER_SEED
    )
    save_controller(path, controller)
    return controller


def warm_all(verbose: bool = True):
    """Build (or load) every artifact in dependency order."""
    import time

    t0 = time.time()

    def log(msg):
        if verbose:
            print(f"[{time.time() - t0:8.1f}s] {msg}", flush=True)

    corpora = build_corpora()
    log("corpora ready")
    codec, stats = build_codec(corpora)
    log("codec ready")
    schedule = build_schedule()
    base, loss_log = build_denoiser(corpora, codec, stats, schedule)
    log(f"denoiser ready ({len(loss_log)} log rows)")
    build_controller(corpora["trainA"], codec, stats, base, schedule, "ctrl-A")
    log("controller A ready")
    build_controller(corpora["trainB"], codec, stats, base, schedule, "ctrl-B")
    log("controller B ready")
    return corpora, codec, stats, base, schedule


if __name__ == "__main__":
    warm_all()
