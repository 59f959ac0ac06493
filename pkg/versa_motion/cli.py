"""Command-line interface: ``versa-motion <command> ...``."""
import argparse
import io
import json
import os
import sys

import numpy as np
from loguru import logger

from . import __version__
from .audio import read_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .datagen import CorpusSpec, build_corpus, load_corpus, save_corpus, split_corpus
from .errors import CompatibilityError, InvalidInputError, OrderingError, ProtocolError, VersaError
from .formats import read_tokens, write_motion, write_pose2d, write_tokens
from .generator import MotionGenerator, generate_motion
from .metrics import REPORT_SCHEMA, evaluate_split, validate_report
from .render import load_render_input, render_sequence
from .token2pose import RelationBank, TargetSkeleton, build_bank, retarget, template_poses, translate_tokens
from .tokenizer import MotionTokenizer, codebook_usage, reconstruction_error, train_vqvae
from .training import (audio_token_accuracy, masked_token_accuracy, prepare_pairs, prompt_only_accuracy,
                       train_audio_stage, train_text_stage)
from .utils import atomic_write_text, sha256_file

TOKENIZER_CKPT = "tokenizer.ckpt"
TEXT_CKPT = "generator_text.ckpt"
GENERATOR_CKPT = "generator.ckpt"
BANK_INDEX = "bank.json"
LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <7} | {message}"


def configure_logging(verbose=False, quiet=False):
    logger.remove()
    level = "DEBUG" if verbose else "WARNING" if quiet else "INFO"
    logger.add(sys.stderr, level=level, format=LOG_FORMAT)


def _parse_override(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _config(args):
    return load_config(args.config, dict(args.set or []))


def _runs(args, config):
    return args.runs or config.paths.runs


def _corpus_dir(args, config):
    return args.corpus or config.paths.corpus


def write_json(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")
    logger.info(f"wrote {path}")


def write_history(path, history, config_hash):
    """Loss curve as CSV, one column per history field, under a ``# config_hash`` line."""
    columns = list(history[0]) if history else ["step", "loss"]
    values = np.array([[row[c] for c in columns] for row in history], dtype=np.float64).reshape(-1, len(columns))
    buffer = io.StringIO()
    np.savetxt(buffer, values, delimiter=",", header=f"# config_hash {config_hash}\n" + ",".join(columns),
               comments="", fmt="%.8g")
    atomic_write_text(path, buffer.getvalue())


def _sampling(args, config):
    """Sampling strategy and temperature; flags win over the config when given."""
    sampling = config.generator.sampling if args.sampling is None else args.sampling
    temperature = config.generator.temperature if args.temperature is None else args.temperature
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    return sampling, temperature


def _require(path, stage, prerequisite):
    if not os.path.exists(path):
        raise OrderingError(f"{stage} needs {prerequisite} ({path} not found)")
    return path


def _load_tokenizer(runs, config, stage="this command"):
    path = _require(os.path.join(runs, TOKENIZER_CKPT), stage, "a trained tokenizer (train vqvae)")
    checkpoint = load_checkpoint(path, "tokenizer")
    return MotionTokenizer.from_checkpoint(checkpoint, config), checkpoint


def _load_generator(runs, config, stage="this command"):
    path = _require(os.path.join(runs, GENERATOR_CKPT), stage, "a trained generator (train audio)")
    return MotionGenerator.from_checkpoint(load_checkpoint(path, "generator"), config)


def _load_bank(runs, tokenizer_checkpoint):
    bank = RelationBank.load(_require(os.path.join(runs, BANK_INDEX), "translation", "a relation bank (bank-build)"))
    if bank.config_hash not in (None, tokenizer_checkpoint.config_hash):
        raise CompatibilityError("relation bank was built with a different tokenizer")
    return bank


def _manifest(config, **fields):
    return dict(fields, config_hash=config.config_hash(), version=__version__)


def cmd_data_synth(args):
    config = _config(args)
    root = _corpus_dir(args, config)
    samples = build_corpus(CorpusSpec.from_config(config))
    splits = split_corpus(samples, tuple(config.data.split), config.seed)
    save_corpus(root, samples, splits, config.config_hash())


def cmd_train(args):
    """Run one training stage; stages must run in the order vqvae, text, audio."""
    config = _config(args)
    runs = _runs(args, config)
    _, splits = load_corpus(_corpus_dir(args, config))
    train, val = splits["train"], splits["val"]

    if args.stage == "vqvae":
        checkpoint, history = train_vqvae([s.motion for s in train], config, args.steps)
        path = os.path.join(runs, TOKENIZER_CKPT)
        digest = save_checkpoint(path, checkpoint)
        tokenizer = MotionTokenizer.from_checkpoint(checkpoint)
        ids = np.concatenate([tokenizer.tokenize(s.motion).indices for s in train])
        utilization, perplexity = codebook_usage(ids, tokenizer.codebook.size)
        held_out = {"val_recon_l1": reconstruction_error(tokenizer, [s.motion for s in val]) if val else None,
                  "utilization": utilization, "perplexity": perplexity}
    elif args.stage == "text":
        tokenizer, _ = _load_tokenizer(runs, config, "train text")
        checkpoint, history = train_text_stage(prepare_pairs(train, tokenizer), config, args.steps)
        path = os.path.join(runs, TEXT_CKPT)
        digest = save_checkpoint(path, checkpoint)
        generator = MotionGenerator.from_checkpoint(checkpoint)
        held_out = {"val_masked_accuracy": masked_token_accuracy(generator, prepare_pairs(val, tokenizer),
                                                               seed=config.seed) if val else None}
    else:
        tokenizer, _ = _load_tokenizer(runs, config, "train audio")
        text_path = _require(os.path.join(runs, TEXT_CKPT), "train audio", "a text-stage checkpoint (train text)")
        text_checkpoint = load_checkpoint(text_path, "generator")
        checkpoint, history = train_audio_stage(prepare_pairs(train, tokenizer), text_checkpoint, config, args.steps)
        path = os.path.join(runs, GENERATOR_CKPT)
        digest = save_checkpoint(path, checkpoint)
        generator = MotionGenerator.from_checkpoint(checkpoint)
        val_pairs = prepare_pairs(val, tokenizer) if val else []
        held_out = {"val_audio_accuracy": audio_token_accuracy(generator, val_pairs) if val else None,
                  "val_prompt_only_accuracy": prompt_only_accuracy(generator, val_pairs) if val else None}

    write_history(os.path.join(runs, f"{args.stage}_loss.csv"), history, config.config_hash())
    write_json(os.path.join(runs, f"{args.stage}_manifest.json"),
               _manifest(config, stage=args.stage, checkpoint=path, checkpoint_sha256=digest,
                         steps=len(history), final_loss=history[-1]["loss"] if history else None,
                         held_out=held_out))
    logger.info(f"{args.stage} checkpoint {path} sha256 {digest}")


def cmd_bank_build(args):
    config = _config(args)
    runs = _runs(args, config)
    tokenizer, checkpoint = _load_tokenizer(runs, config, "bank-build")
    _, splits = load_corpus(_corpus_dir(args, config))
    templates = [(s.id, s.motion, template_poses(s.motion)) for s in splits["train"]]
    bank = build_bank(templates, tokenizer, config_hash=checkpoint.config_hash)
    bank.save(os.path.join(runs, BANK_INDEX))


def _realize(ids, args, runs, tokenizer, tokenizer_checkpoint):
    bank = None if args.direct_projection else _load_bank(runs, tokenizer_checkpoint)
    poses = translate_tokens(ids, bank, args.seed, tokenizer, direct=args.direct_projection)
    if args.target_skeleton:
        poses = retarget(poses, TargetSkeleton.load(args.target_skeleton)).clamped()
    return poses


def cmd_generate(args):
    config = _config(args)
    runs = _runs(args, config)
    sampling, temperature = _sampling(args, config)
    waveform = read_wav(args.audio)
    tokenizer, tokenizer_checkpoint = _load_tokenizer(runs, config, "generate")
    generator = _load_generator(runs, config, "generate")
    result = generate_motion(waveform, tokenizer, generator, args.text, sampling, temperature, args.seed)
    poses = _realize(result.ids, args, runs, tokenizer, tokenizer_checkpoint)

    h = config.config_hash()
    paths = {name: os.path.join(args.out, name) for name in ("motion.vmot", "tokens.vtok", "poses.vp2d")}
    write_motion(paths["motion.vmot"], result.motion, config_hash=h)
    write_tokens(paths["tokens.vtok"], result.ids, tokenizer.codebook.size, config_hash=h)
    write_pose2d(paths["poses.vp2d"], poses, config_hash=h)
    checkpoints = {name: sha256_file(os.path.join(runs, name)) for name in (TOKENIZER_CKPT, GENERATOR_CKPT)}
    write_json(os.path.join(args.out, "manifest.json"),
               _manifest(config, audio=args.audio, prompt=args.text, seed=args.seed,
                         sampling=sampling, temperature=temperature, checkpoints=checkpoints,
                         windows=result.windows, provenance=poses.provenance,
                         direct_projection=bool(args.direct_projection),
                         outputs={"motion": paths["motion.vmot"], "tokens": paths["tokens.vtok"],
                                  "poses": paths["poses.vp2d"]}))


def cmd_translate(args):
    config = _config(args)
    runs = _runs(args, config)
    ids, _ = read_tokens(args.tokens, config.config_hash())
    tokenizer, tokenizer_checkpoint = _load_tokenizer(runs, config, "translate")
    poses = _realize(ids, args, runs, tokenizer, tokenizer_checkpoint)
    write_pose2d(args.out, poses, config_hash=config.config_hash())
    logger.info(f"wrote {poses.T} frames to {args.out}")


def cmd_evaluate(args):
    config = _config(args)
    if args.protocol is not None and args.protocol != config.eval.protocol_version:
        raise ProtocolError(f"protocol {args.protocol} requested, this build implements "
                            f"{config.eval.protocol_version}")
    runs = _runs(args, config)
    tokenizer, _ = _load_tokenizer(runs, config, "evaluate")
    generator = _load_generator(runs, config, "evaluate")
    _, splits = load_corpus(_corpus_dir(args, config))
    report = evaluate_split(splits[args.split], tokenizer, generator, config, splits["train"])
    validate_report(report)
    out = args.out or os.path.join(runs, "eval_report.json")
    write_json(out, report)
    write_json(os.path.splitext(out)[0] + ".schema.json", REPORT_SCHEMA)


def cmd_render(args):
    render_sequence(load_render_input(args.input), args.out, png=args.png)


def build_parser():
    parser = argparse.ArgumentParser(prog="versa-motion", description="Audio and text driven motion generation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="JSON config file")
    common.add_argument("--set", action="append", type=_parse_override, metavar="KEY=VALUE",
                        help="override a config field, e.g. training.lr=1e-3")
    common.add_argument("--corpus", help="corpus directory (default: paths.corpus)")
    common.add_argument("--runs", help="run directory (default: paths.runs)")

    realize = argparse.ArgumentParser(add_help=False)
    realize.add_argument("--seed", type=int, default=0, help="sampling and snippet-choice seed")
    realize.add_argument("--direct-projection", action="store_true", help="bypass the relation bank")
    realize.add_argument("--target-skeleton", help="TargetSkeleton JSON to retarget onto")

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("data-synth", parents=[common], help="generate the synthetic corpus")
    p.set_defaults(func=cmd_data_synth)

    p = sub.add_parser("train", parents=[common], help="train one stage")
    p.add_argument("stage", choices=["vqvae", "text", "audio"])
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bank-build", parents=[common], help="build the token-to-pose relation bank")
    p.set_defaults(func=cmd_bank_build)

    p = sub.add_parser("generate", parents=[common, realize], help="audio (and prompt) to motion and poses")
    p.add_argument("audio", help="PCM16 mono 16 kHz WAV")
    p.add_argument("--text", help="text prompt (default: the speech prompt)")
    p.add_argument("--sampling", choices=["greedy", "categorical"])
    p.add_argument("--temperature", type=float)
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("translate", parents=[common, realize], help="token file to 2D pose file")
    p.add_argument("tokens", help="VTOK1 token file")
    p.add_argument("--out", default="poses.vp2d")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", parents=[common], help="run the evaluation protocol")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--protocol", help="expected protocol version")
    p.add_argument("--out", help="report path (default: <runs>/eval_report.json)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="per-frame SVG stick figures")
    p.add_argument("input", help="VP2D1 pose file or motion file")
    p.add_argument("--out", default="frames")
    p.add_argument("--png", action="store_true", help="also rasterize with matplotlib")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    """
    Entry point.

    Returns:
        int: 0 on success, 2 on a domain error, 1 on an unexpected failure
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        args.func(args)
    except VersaError as exc:
        print(f"error[{exc.code}]: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[IO]: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.exception("unexpected failure")
        print(f"error[INTERNAL]: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0
