"""
================================================================================
PIPELINE CONFIGURATION
================================================================================

Purpose: Read the single TOML document that drives every pipeline stage and
turn it into typed dataclasses.

HOW IT WORKS:
1. load_dotenv() makes a local .env visible (extractor weight paths)
2. The TOML file is parsed with tomllib; unknown keys are rejected so typos
   surface immediately
3. Relative paths resolve against the directory of the config file
4. --seed / --out overrides replace the document values
5. Each stage checks that the paths it needs exist before it starts
   (require_paths), raising ConfigError that names the key

See config/pipeline.example.toml for every key with its default.
================================================================================
"""

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import load_dotenv

from ml.losses import LossWeights
from ml.models import ModelConfig
from ml.trainer import TrainConfig
from utils.dataset import ADAPTERS, DEFAULT_CANVAS, DEFAULT_MAX_MULTIPLIER, SourceDescriptor
from utils.engraver import StaffGeometry
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

INCEPTION_WEIGHTS_ENV = "HANDSCORE_INCEPTION_WEIGHTS"
STYLE_WEIGHTS_ENV = "HANDSCORE_STYLE_WEIGHTS"
STAGES = ("prepare-data", "train", "generate", "engrave", "evaluate")


# =============================================================================
# CONFIG TYPES
# =============================================================================

@dataclass
class DataConfig:
    """[data]: sources to ingest and how to balance them.

    Attributes:
        sources (list): SourceDescriptors, one per [[data.sources]] entry.
        canvas (tuple): Normalized (height, width) of every sample.
        threshold (int): Samples per class after balancing.
        max_multiplier (int): Largest allowed final / original ratio.
        on_unknown (str): "skip" or "fail" for labels without an alias.
        n_jobs (int): Parallel workers for decoding.
    """

    sources: list = field(default_factory=list)
    canvas: tuple = DEFAULT_CANVAS
    threshold: int = 500
    max_multiplier: int = DEFAULT_MAX_MULTIPLIER
    on_unknown: str = "skip"
    n_jobs: int = 1


@dataclass
class GenerateConfig:
    """[generate]: which classes to render into the symbol bank.

    Attributes:
        classes (list): Generation classes; empty means all of them.
        count (int): Images per class.
        style_dir (Path): Style exemplars; the prepared dataset when None.
        checkpoint (Path): Bundle file or directory; the run checkpoints when None.
    """

    classes: list = field(default_factory=list)
    count: int = 10
    style_dir: Path = None
    checkpoint: Path = None


@dataclass
class EngraveConfig:
    """[engrave]: scores, page backgrounds and the staff geometry."""

    scores_dir: Path = None
    background_dir: Path = None
    bank_dir: Path = None
    geometry: StaffGeometry = field(default_factory=StaffGeometry)


@dataclass
class EvaluateConfig:
    """[evaluate]: reference set and feature extractors for FID, KID and HWD."""

    reference_dir: Path = None
    candidate_dir: Path = None
    extractor: str = "stub"
    weights: Path = None
    style_extractor: str = None
    style_weights: Path = None
    allow_stub: bool = False
    binarize: bool = True
    kid_resamples: int = 0
    kid_subset: int = None
    input_size: tuple = (64, 256)


@dataclass
class PipelineConfig:
    """Everything one experiment needs.

    Attributes:
        path (Path): The config file.
        raw (dict): Parsed TOML mapping, echoed into checkpoints.
        seed (int): Root seed; every stage derives its own from it.
        output_root (Path): Where all stage outputs go.
        vocabulary (Path): Vocabulary definition file.
    """

    path: Path
    raw: dict
    seed: int
    output_root: Path
    vocabulary: Path
    data: DataConfig
    train: TrainConfig
    generate: GenerateConfig
    engrave: EngraveConfig
    evaluate: EvaluateConfig

    # -------------------------------------------------------------------------
    # Output layout
    # -------------------------------------------------------------------------

    @property
    def data_dir(self):
        return self.output_root / "data"

    @property
    def dataset_path(self):
        return self.data_dir / "dataset.joblib"

    @property
    def checkpoint_dir(self):
        return self.output_root / "checkpoints"

    @property
    def log_path(self):
        return self.output_root / "logs" / "train_log.csv"

    @property
    def reports_dir(self):
        return self.output_root / "reports"

    @property
    def bank_dir(self):
        return self.engrave.bank_dir or self.output_root / "bank"

    @property
    def lines_dir(self):
        return self.output_root / "lines"

    def require_paths(self, stage):
        """Check that every input path of a stage exists.

        Raises:
            ConfigError: Naming the first missing key and path.
        """
        if stage not in STAGES:
            raise ValueError(f"Unknown stage '{stage}'")
        checks = [("vocabulary", self.vocabulary)]
        if stage == "prepare-data":
            if not self.data.sources:
                raise ConfigError("data.sources is empty; prepare-data needs at least one source")
            checks += [(f"data.sources[{i}].path", s.path) for i, s in enumerate(self.data.sources)]
        elif stage == "generate":
            checks += [("generate.style_dir", self.generate.style_dir)] if self.generate.style_dir else []
        elif stage == "engrave":
            checks += [("engrave.scores_dir", self.engrave.scores_dir)]
            if self.engrave.background_dir is not None:
                checks.append(("engrave.background_dir", self.engrave.background_dir))
        elif stage == "evaluate":
            checks += [("evaluate.reference_dir", self.evaluate.reference_dir)]
        for key, path in checks:
            if path is None:
                raise ConfigError(f"'{key}' must be set for {stage}")
            if not Path(path).exists():
                raise ConfigError(f"'{key}' points to {path}, which does not exist")


# =============================================================================
# PARSING
# =============================================================================

def _section(raw, name):
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"'{name}' must be a table")
    return value


def _check_keys(table, allowed, where):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown key(s) {unknown} in [{where}]")


def _path(base, value, key):
    if value is None:
        return None
    if not isinstance(value, str):
        raise ConfigError(f"'{key}' must be a path string")
    path = Path(value).expanduser()
    return path if path.is_absolute() else (base / path).resolve()


def _build(cls, table, where, **overrides):
    """Instantiate a dataclass from a table, turning bad values into ConfigError."""
    allowed = [f.name for f in fields(cls)]
    _check_keys(table, allowed, where)
    kwargs = {**table, **overrides}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid [{where}]: {e}") from e


def _parse_sources(base, entries):
    sources = []
    for i, entry in enumerate(entries):
        key = f"data.sources[{i}]"
        _check_keys(entry, ("adapter", "path", "dataset_id", "stroke_width"), key)
        if entry.get("adapter") not in ADAPTERS:
            raise ConfigError(f"'{key}.adapter' must be one of {ADAPTERS}, got {entry.get('adapter')!r}")
        if "path" not in entry:
            raise ConfigError(f"'{key}.path' is required")
        sources.append(SourceDescriptor(
            adapter=entry["adapter"],
            path=_path(base, entry["path"], f"{key}.path"),
            dataset_id=str(entry.get("dataset_id", "")),
            stroke_width=float(entry.get("stroke_width", 3.0)),
        ))
    return sources


def parse_config(raw, base_dir, path=None, seed=None, output_root=None):
    """Turn a parsed TOML mapping into a PipelineConfig.

    Args:
        raw (dict): Parsed document.
        base_dir (Path): Directory relative paths resolve against.
        path (Path, optional): Source file, for messages.
        seed (int, optional): Overrides the document seed.
        output_root (Path, optional): Overrides the document output_root.

    Raises:
        ConfigError: On missing, unknown or invalid keys.
    """
    base = Path(base_dir)
    _check_keys(raw, ("seed", "output_root", "vocabulary", "data", "train", "generate", "engrave", "evaluate"),
                "root")
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("'seed' is required")
        seed = raw["seed"]
    if not isinstance(seed, int):
        raise ConfigError(f"'seed' must be an integer, got {seed!r}")
    if "vocabulary" not in raw:
        raise ConfigError("'vocabulary' is required")

    data_raw = dict(_section(raw, "data"))
    sources = _parse_sources(base, data_raw.pop("sources", []))
    if "canvas" in data_raw:
        data_raw["canvas"] = tuple(data_raw["canvas"])
    data = _build(DataConfig, data_raw, "data", sources=sources)
    if data.on_unknown not in ("skip", "fail"):
        raise ConfigError(f"'data.on_unknown' must be 'skip' or 'fail', got {data.on_unknown!r}")

    train_raw = dict(_section(raw, "train"))
    weights = _build(LossWeights, train_raw.pop("weights", {}), "train.weights")
    model_raw = dict(train_raw.pop("model", {}))
    model = _build(ModelConfig, model_raw, "train.model", canvas=data.canvas)
    for key in ("focus_classes", "checkpoint_weights"):
        if key in train_raw:
            train_raw[key] = tuple(train_raw[key])
    if "seed" in train_raw:
        raise ConfigError("'train.seed' is not allowed; use the root 'seed'")
    train = _build(TrainConfig, train_raw, "train", weights=weights, model=model, seed=seed)

    generate_raw = dict(_section(raw, "generate"))
    for key in ("style_dir", "checkpoint"):
        generate_raw[key] = _path(base, generate_raw.get(key), f"generate.{key}")
    generate = _build(GenerateConfig, generate_raw, "generate")

    engrave_raw = dict(_section(raw, "engrave"))
    geometry = _build(StaffGeometry, engrave_raw.pop("geometry", {}), "engrave.geometry")
    for key in ("scores_dir", "background_dir", "bank_dir"):
        engrave_raw[key] = _path(base, engrave_raw.get(key), f"engrave.{key}")
    engrave = _build(EngraveConfig, engrave_raw, "engrave", geometry=geometry)

    evaluate_raw = dict(_section(raw, "evaluate"))
    for key in ("reference_dir", "candidate_dir", "weights", "style_weights"):
        evaluate_raw[key] = _path(base, evaluate_raw.get(key), f"evaluate.{key}")
    if "input_size" in evaluate_raw:
        evaluate_raw["input_size"] = tuple(evaluate_raw["input_size"])
    evaluate = _build(EvaluateConfig, evaluate_raw, "evaluate")
    if evaluate.weights is None and os.getenv(INCEPTION_WEIGHTS_ENV):
        evaluate.weights = Path(os.environ[INCEPTION_WEIGHTS_ENV])
    if evaluate.style_weights is None and os.getenv(STYLE_WEIGHTS_ENV):
        evaluate.style_weights = Path(os.environ[STYLE_WEIGHTS_ENV])

    root = Path(output_root) if output_root is not None else _path(base, raw.get("output_root", "out"), "output_root")
    return PipelineConfig(
        path=Path(path) if path is not None else base / "<memory>",
        raw={**raw, "seed": seed},
        seed=seed,
        output_root=root,
        vocabulary=_path(base, raw["vocabulary"], "vocabulary"),
        data=data,
        train=train,
        generate=generate,
        engrave=engrave,
        evaluate=evaluate,
    )


def load_config(path, seed=None, output_root=None):
    """Read a pipeline config file.

    Raises:
        ConfigError: If the file is missing, not valid TOML, or has bad keys.
    """
    load_dotenv()
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file {path} does not exist") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid TOML: {e}") from e
    config = parse_config(raw, path.resolve().parent, path=path, seed=seed, output_root=output_root)
    logger.info(f"Loaded config {path} (seed {config.seed}, output {config.output_root})")
    return config
