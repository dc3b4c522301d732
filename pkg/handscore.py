"""
================================================================================
HANDSCORE - HANDWRITTEN SCORE SYNTHESIS PIPELINE
================================================================================

Purpose: Single command-line entry point. One TOML config drives five stages
that together turn handwritten symbol datasets into synthetic handwritten
staff lines and measure how close they come to real ones.

STAGES:
-------
1. prepare-data  ingest every source, balance classes, write data/
2. train         train the symbol GAN, write checkpoints/ and logs/
3. generate      render a symbol bank from a checkpoint into bank/
4. engrave       engrave every MusicXML score into lines/
5. evaluate      FID / KID / HWD of lines/ against a reference set

Usage:
    python handscore.py --config config/pipeline.toml prepare-data
    python handscore.py --config config/pipeline.toml train [--resume PATH]
    python handscore.py --config config/pipeline.toml generate [--checkpoint PATH]
    python handscore.py --config config/pipeline.toml engrave [--bank DIR]
    python handscore.py --config config/pipeline.toml evaluate [--candidate DIR]

Exit status: 0 on success, 1 on a pipeline error, 2 on bad arguments.
================================================================================
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ml.train import train_and_save_model
from utils import storage
from utils.analytics import class_count_figure, metric_figure, write_figure
from utils.config import load_config
from utils.dataset import balance, ingest, load_dataset, normalize, save_dataset, stack_images
from utils.engraver import SymbolBank, engrave, load_background, parse_musicxml
from utils.errors import ConfigError, EmptyDatasetError, EmptyDirectoryError, HandscoreError
from utils.formatting import format_manifest_table, format_metric_table
from utils.metrics import build_extractor, evaluate
from utils.ml_utils import derive_seed, generate_symbol_bank, load_trained_bundle
from utils.vocab import load_vocabulary

logger = logging.getLogger("handscore")

SCORE_SUFFIXES = (".musicxml", ".xml")
MAX_STYLE_EXEMPLARS = 256


def _banner(title):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60 + "\n")


# =============================================================================
# STAGES
# =============================================================================

def cmd_prepare_data(config):
    """Ingest all sources, balance the classes and write the dataset.

    Writes data/dataset.joblib, data/manifest.json, data/class_counts.csv
    and data/class_counts.html.
    """
    _banner("PREPARE DATA")
    config.require_paths("prepare-data")
    vocab = load_vocabulary(config.vocabulary)
    samples = []
    for descriptor in config.data.sources:
        found = ingest(descriptor, vocab, canvas=config.data.canvas, on_unknown=config.data.on_unknown,
                       n_jobs=config.data.n_jobs)
        print(f"{descriptor.adapter:>8} {descriptor.path}: {len(found)} samples")
        samples.extend(found)
    if not samples:
        raise EmptyDatasetError("No samples were read from any source")

    balanced, manifest = balance(samples, vocab, config.data.threshold, derive_seed(config.seed, "balance"),
                                 config.data.max_multiplier)
    save_dataset(config.dataset_path, balanced, manifest)
    manifest.save(config.data_dir)
    write_figure(class_count_figure(manifest), config.data_dir / "class_counts.html", div_id="class-counts")
    print("\n" + format_manifest_table(manifest))
    print(f"✅ Dataset written to {config.dataset_path}")
    return manifest


def cmd_train(config, resume_from=None):
    """Train the GAN on the prepared dataset (see ml.train.train_and_save_model).

    Args:
        config (PipelineConfig): Loaded pipeline config.
        resume_from (Path, optional): Checkpoint to continue from.

    Returns:
        ModelBundle: The bundle after the last step.
    """
    config.require_paths("train")
    return train_and_save_model(config, resume_from=resume_from)


def _style_exemplars(config, vocab):
    """Style images from generate.style_dir, or un-augmented dataset samples."""
    canvas = config.data.canvas
    if config.generate.style_dir is not None:
        paths = storage.require_image_files(config.generate.style_dir, recursive=True)
        return np.stack([normalize(storage.read_raw_image(p), canvas) for p in paths[:MAX_STYLE_EXEMPLARS]])
    if not config.dataset_path.exists():
        raise ConfigError("Set generate.style_dir or run prepare-data to provide style exemplars")
    samples, _ = load_dataset(config.dataset_path)
    originals = [s for s in samples if s.augmentation_tag is None and vocab.is_generation_target(s.class_name)]
    if not originals:
        raise EmptyDatasetError("The prepared dataset holds no original generation-class samples")
    picks = np.random.default_rng(derive_seed(config.seed, "style-exemplars")).permutation(len(originals))
    return stack_images([originals[i] for i in sorted(picks[:MAX_STYLE_EXEMPLARS])])


def cmd_generate(config, checkpoint=None):
    """Render `generate.count` images per class into the symbol bank directory."""
    _banner("GENERATE SYMBOL BANK")
    config.require_paths("generate")
    vocab = load_vocabulary(config.vocabulary)
    bundle = load_trained_bundle(checkpoint or config.generate.checkpoint or config.checkpoint_dir, vocab)
    classes = list(config.generate.classes) or list(vocab.generation_classes)
    styles = _style_exemplars(config, vocab)
    bank = generate_symbol_bank(bundle, styles, classes, config.generate.count, derive_seed(config.seed, "generate"))
    out_dir = config.output_root / "bank"
    bank.save(out_dir)
    print(f"✅ {len(bank)} symbols in {len(bank.classes)} classes written to {out_dir}")
    return bank


def cmd_engrave(config, bank_dir=None):
    """Engrave every score of engrave.scores_dir into lines/<score>.png + .csv."""
    _banner("ENGRAVE STAFF LINES")
    config.require_paths("engrave")
    bank = SymbolBank.load(bank_dir or config.bank_dir)
    scores = sorted(p for p in Path(config.engrave.scores_dir).iterdir() if p.suffix.lower() in SCORE_SUFFIXES)
    if not scores:
        raise EmptyDirectoryError(f"No MusicXML files in {config.engrave.scores_dir}")
    backgrounds = storage.list_image_files(config.engrave.background_dir) if config.engrave.background_dir else []

    written = []
    for path in scores:
        score = parse_musicxml(path.read_bytes())
        background = None
        if backgrounds:
            pick = np.random.default_rng(derive_seed(config.seed, f"background:{path.stem}")).integers(len(backgrounds))
            background = load_background(backgrounds[int(pick)])
        line = engrave(score, bank, background, derive_seed(config.seed, f"engrave:{path.stem}"),
                       config.engrave.geometry)
        line.save(config.lines_dir / f"{path.stem}.png", config.lines_dir / f"{path.stem}.csv")
        note = f" ({len(score.warnings)} warnings)" if score.warnings else ""
        print(f"{path.name}: {len(line.annotations)} symbols, {line.width} px wide{note}")
        written.append(line)
    print(f"✅ {len(written)} lines written to {config.lines_dir}")
    return written


def cmd_evaluate(config, candidate_dir=None):
    """Compare candidate line images with the reference set and write reports/metrics.*."""
    _banner("EVALUATE LINE IMAGES")
    config.require_paths("evaluate")
    settings = config.evaluate
    extractor_seed = derive_seed(config.seed, "extractor")
    extractor = build_extractor(settings.extractor, settings.weights, settings.allow_stub, extractor_seed,
                                settings.input_size)
    style_extractor = None
    if settings.style_extractor is not None:
        style_extractor = build_extractor(settings.style_extractor, settings.style_weights, settings.allow_stub,
                                          derive_seed(config.seed, "style-extractor"), settings.input_size)
    candidates = candidate_dir or settings.candidate_dir or config.lines_dir
    report = evaluate(candidates, settings.reference_dir, extractor, settings.binarize, style_extractor,
                      kid_resamples=settings.kid_resamples, kid_subset=settings.kid_subset,
                      seed=derive_seed(config.seed, "kid"))
    report.save(config.reports_dir)
    write_figure(metric_figure([report], ["candidate"]), config.reports_dir / "metrics.html", div_id="metrics")
    print(format_metric_table(report))
    print(f"✅ Report written to {config.reports_dir}")
    return report


# =============================================================================
# ARGUMENT PARSING
# =============================================================================

def build_parser():
    """Top-level parser with one subcommand per pipeline stage."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="Pipeline TOML file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Override the config seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="Override the output root")
    common.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="handscore", parents=[common],
                                     description="Handwritten music score synthesis pipeline")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("prepare-data", parents=[common], help="Ingest and balance symbol datasets")
    train_parser = commands.add_parser("train", parents=[common], help="Train the symbol GAN")
    train_parser.add_argument("--resume", default=None, help="Checkpoint to continue from")
    generate_parser = commands.add_parser("generate", parents=[common], help="Render a symbol bank")
    generate_parser.add_argument("--checkpoint", default=None, help="Checkpoint file or directory")
    engrave_parser = commands.add_parser("engrave", parents=[common], help="Engrave MusicXML scores")
    engrave_parser.add_argument("--bank", default=None, help="Symbol bank directory")
    evaluate_parser = commands.add_parser("evaluate", parents=[common], help="Compute FID / KID / HWD")
    evaluate_parser.add_argument("--candidate", default=None, help="Candidate line image directory")
    return parser


def main(argv=None):
    """Run one pipeline stage.

    Returns:
        int: Exit status (0 success, 1 pipeline error).
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(args, "log_level", "INFO"),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    if not hasattr(args, "config"):
        logger.error("--config is required")
        return 2
    try:
        config = load_config(args.config, seed=getattr(args, "seed", None), output_root=getattr(args, "out", None))
        if args.command == "prepare-data":
            cmd_prepare_data(config)
        elif args.command == "train":
            cmd_train(config, resume_from=args.resume)
        elif args.command == "generate":
            cmd_generate(config, checkpoint=args.checkpoint)
        elif args.command == "engrave":
            cmd_engrave(config, bank_dir=args.bank)
        elif args.command == "evaluate":
            cmd_evaluate(config, candidate_dir=args.candidate)
    except HandscoreError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
