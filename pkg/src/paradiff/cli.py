"""Command-line surface.

Subcommands: make-toy-corpus, train-codec, train-diffusion, train-controller,
generate, evaluate, trace. Exit codes: 0 ok, 2 validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from . import __version__
from .checkpoint import load_manifest, params_hash
from .codec import (
    CodecConfig,
    NormStats,
    fit_norm_stats,
    load_codec,
    roundtrip_accuracy,
    save_codec,
    train_codec,
)
from .controller import (
    ControllerTrainConfig,
    finetune_controller,
    keyword_encoding,
    load_controller,
    make_fused_predict,
    save_controller,
)
from .data import CorpusError, load_corpus, make_toy_corpus, save_corpus
from .denoiser import DenoiserConfig, DiffusionTrainConfig, load_denoiser, save_denoiser
from .errors import NumericalError, ValidationError
from .evaluate import evaluate
from .pipeline import train_diffusion_from_corpus
from .sampler import SamplerConfig, generate, trace
from .schedule import build_cosine_schedule, build_linear_schedule

_SAMPLER_NAMES = {"ancestral": "ancestral", "ddim": "ddim", "dpm++": "dpm_solver_pp"}


def read_kv_config(path: str | Path) -> dict[str, str]:
    """Flat key=value file; blank lines and '#' comments ignored."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _apply_kv(config, kv: dict[str, str]):
    for key, value in kv.items():
        if not hasattr(config, key):
            raise ValidationError(f"unknown config key {key!r} for {type(config).__name__}")
        current = getattr(config, key)
        if isinstance(current, bool):
            setattr(config, key, value.lower() in ("1", "true", "yes"))
        else:
            setattr(config, key, type(current)(value))
    return config


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(
        kind=_SAMPLER_NAMES[args.sampler],
        steps=args.steps,
        eta=args.eta,
        guidance_scale=args.guidance,
        seed=args.seed,
    )


def _load_components(args):
    codec, stats = load_codec(args.codec)
    if stats is None:
        raise ValidationError("codec checkpoint carries no normalization stats")
    model, schedule, manifest = load_denoiser(args.model)
    if manifest.get("codec_params_sha256") not in (
        None,
        params_hash(dict(codec.state_dict())),
    ):
        raise ValidationError("denoiser was trained against a different codec")
    return codec, stats, model, schedule


def cmd_make_toy_corpus(args) -> int:
    records = make_toy_corpus(args.seed, args.n, args.family)
    save_corpus(records, args.out)
    print(f"wrote {len(records)} pairs to {args.out}")
    return 0


def cmd_train_codec(args) -> int:
    records = load_corpus(args.data)
    sentences = sorted({r.source for r in records} | {r.target for r in records})
    config = CodecConfig(d=args.d, L=args.L, n_layers=args.layers, steps=args.train_steps, lr=args.lr)
    if args.config:
        _apply_kv(config, read_kv_config(args.config))
    model, history = train_codec(sentences, config, seed=args.seed)
    stats = fit_norm_stats(sentences, model)
    save_codec(args.out, model, stats)
    acc = roundtrip_accuracy(model, sentences)
    manifest = load_manifest(args.out)
    manifest.update({"seed": args.seed, "version": __version__, "roundtrip_accuracy": acc})
    (Path(args.out) / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"codec saved to {args.out}; round-trip accuracy {acc:.4f}")
    return 0


def _build_schedule(args):
    if args.schedule == "cosine":
        return build_cosine_schedule(args.T)
    return build_linear_schedule(args.T, args.beta_start, args.beta_end)


def cmd_train_diffusion(args) -> int:
    records = load_corpus(args.data)
    codec, stats = load_codec(args.codec)
    if stats is None:
        raise ValidationError("codec checkpoint carries no normalization stats")
    model_config = DenoiserConfig(
        n_layers=args.layers, n_heads=args.heads, d=codec.config.d, L=codec.config.L
    )
    train_config = DiffusionTrainConfig(
        steps=args.train_steps, batch_size=args.batch, lr=args.lr
    )
    if args.config:
        _apply_kv(train_config, read_kv_config(args.config))
    schedule = _build_schedule(args)
    loss_log = Path(args.out) / "loss_log.csv"
    Path(args.out).mkdir(parents=True, exist_ok=True)
    model, log = train_diffusion_from_corpus(
        records, codec, stats, model_config, train_config, schedule,
        seed=args.seed, loss_log_path=loss_log,
    )
    save_denoiser(
        args.out, model, schedule,
        extra={
            "seed": args.seed,
            "version": __version__,
            "train_config": train_config.to_dict(),
            "codec_params_sha256": params_hash(dict(codec.state_dict())),
        },
    )
    print(f"denoiser saved to {args.out}; final loss {log[-1][1]:.4f}")
    return 0


def cmd_train_controller(args) -> int:
    records = load_corpus(args.data)
    codec, stats = load_codec(args.codec)
    if stats is None:
        raise ValidationError("codec checkpoint carries no normalization stats")
    base, schedule, _ = load_denoiser(args.base_ckpt)
    config = ControllerTrainConfig(
        steps=args.train_steps, lr=args.lr, keyword_mode=args.keyword_mode
    )
    if args.config:
        _apply_kv(config, read_kv_config(args.config))
    controller, log = finetune_controller(
        records, base, codec, stats, schedule, config, seed=args.seed
    )
    save_controller(
        args.out, controller,
        extra={"seed": args.seed, "version": __version__, "train_config": config.to_dict()},
    )
    print(f"controller saved to {args.out}; final loss {log[-1][1]:.4f}")
    return 0


def cmd_generate(args) -> int:
    codec, stats, model, schedule = _load_components(args)
    config = _sampler_config(args)
    fused = None
    controller = None
    if args.controller:
        controller = load_controller(args.controller, model)
    if args.text:
        sources = [args.text]
    elif args.source_file:
        sources = [ln for ln in Path(args.source_file).read_text().splitlines() if ln.strip()]
    else:
        raise ValidationError("need --text or --source-file")
    out_fh = Path(args.out).open("w") if args.out else sys.stdout
    try:
        for src in sources:
            if controller is not None:
                c_kw = keyword_encoding(src, codec, stats)
                fused = make_fused_predict(controller, c_kw)
            samples = generate(
                src, codec, stats, model, schedule, config,
                n_samples=args.n_samples, fused_predict=fused,
            )
            out_fh.write(json.dumps({"source": src, "samples": samples}) + "\n")
    finally:
        if args.out:
            out_fh.close()
    return 0


def cmd_evaluate(args) -> int:
    codec, stats, model, schedule = _load_components(args)
    records = load_corpus(args.data)
    before = params_hash(dict(model.state_dict()))
    report = evaluate(
        records, codec, stats, model, schedule, _sampler_config(args),
        n_samples=args.n_samples, similarity_backend=args.similarity_backend,
        distinct_scope=args.distinct_scope,
    )
    assert params_hash(dict(model.state_dict())) == before, "evaluate mutated the model"
    report.save(args.report, args.csv)
    print(json.dumps({k: v for k, v in report.to_dict().items() if k != "per_sample"}, indent=2))
    return 0


def cmd_trace(args) -> int:
    codec, stats, model, schedule = _load_components(args)
    traj = trace(
        args.text, codec, stats, model, schedule, _sampler_config(args),
        reference=args.reference,
    )
    import csv as _csv

    with Path(args.out_csv).open("w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["step", "t", "bleu", "length", "decoded"])
        for i, step in enumerate(traj.steps):
            writer.writerow([i, step.t, step.bleu, step.length, step.decoded])
    print(f"trace with {len(traj.steps)} steps written to {args.out_csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paradiff")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-corpus", help="generate the templated toy corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--family", choices=["A", "B"], default="A")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_make_toy_corpus)

    p = sub.add_parser("train-codec", help="train and freeze the sequence autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--L", type=int, default=24)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--train-steps", type=int, default=4000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value overrides")
    p.set_defaults(fn=cmd_train_codec)

    p = sub.add_parser("train-diffusion", help="train the latent denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--train-steps", type=int, default=30000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--schedule", choices=["cosine", "linear"], default="cosine")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value overrides")
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("train-controller", help="fine-tune the keyword control adaptor")
    p.add_argument("--base-ckpt", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--train-steps", type=int, default=8000)
    p.add_argument("--keyword-mode", choices=["deterministic", "sampled"], default="sampled")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value overrides")
    p.set_defaults(fn=cmd_train_controller)

    def add_sampling_args(p):
        p.add_argument("--codec", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--sampler", choices=sorted(_SAMPLER_NAMES), default="dpm++")
        p.add_argument("--steps", type=int, default=25)
        p.add_argument("--eta", type=float, default=0.0)
        p.add_argument("--guidance", type=float, default=1.0)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="sample paraphrases for source sentences")
    add_sampling_args(p)
    p.add_argument("--text")
    p.add_argument("--source-file")
    p.add_argument("--n-samples", type=int, default=5)
    p.add_argument("--controller")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="generate for a test corpus and score")
    add_sampling_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--n-samples", type=int, default=5)
    p.add_argument("--similarity-backend", default="token_f1")
    p.add_argument("--distinct-scope", choices=["per_source", "corpus"], default="per_source")
    p.add_argument("--report", required=True)
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("trace", help="force-decode intermediate latents along sampling")
    add_sampling_args(p)
    p.add_argument("--text", required=True)
    p.add_argument("--reference")
    p.add_argument("--out-csv", required=True)
    p.set_defaults(fn=cmd_trace)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
