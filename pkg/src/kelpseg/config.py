"""Experiment configuration: one YAML file drives every CLI stage.

Omitted sections take the recipe defaults: clip 6000/24000, ImageNet channel
statistics on SWIR1/NIR/Green, threshold 0.43, the seven-model MIT+ConvNeXt
line-up with the 5:3 group ensemble, and the 5e-5 -> 5e-7 (warmup 1e-6)
schedule. Relative paths resolve against the config file's directory.

Example::

    seed: 42
    output_dir: runs/demo
    dataset:
      train_dir: data/train
      test_dir: data/test
    models:
      - id: ref64
        architecture: {encoder_family: REFERENCE_TINY, decoder_family: REFERENCE, train_size: 64}
        train: {epochs: 20, lr_peak: 0.003, lr_floor: 0.00003, lr_warmup: 0.0003}
    ensemble:
      groups: [{name: all, members: [ref64], weight: 1}]
"""

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .exceptions import InvalidPairing, InvalidSize, ParseError, ValidationError
from .infer import EnsembleGroup, EnsembleSpec, paper_ensemble_spec
from .metrics import DEFAULT_SWEEP_GRID
from .model.spec import ArchitectureSpec, paper_architectures
from .postprocess import PostprocessConfig
from .preprocess import PreprocessConfig
from .train import TrainConfig, default_train_config

# Seeds come from the top-level ``seed``; train_size from each architecture.
_DERIVED = {"augment": {"rng_seed"}, "train": {"seed"}, "preprocess": {"train_size"}}


@dataclass(frozen=True)
class DatasetConfig:
    train_dir: str
    test_dir: str = None
    image_suffix: str = "_satellite"
    mask_suffix: str = "_kelp"
    # None, "paper" for the bundled nine-chip list, or a path to a text file.
    exclusions: str = None
    train_fraction: float = 0.8

    def __post_init__(self):
        if not self.train_dir:
            raise ValueError("train_dir is required")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ModelEntry:
    id: str
    architecture: ArchitectureSpec
    train: TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    models: tuple
    ensemble: EnsembleSpec
    preprocess: PreprocessConfig = PreprocessConfig()
    augment: AugmentConfig = AugmentConfig()
    postprocess: PostprocessConfig = PostprocessConfig()
    sweep_grid: tuple = DEFAULT_SWEEP_GRID
    output_dir: str = "runs/kelpseg"
    seed: int = 42
    workers: int = None
    base_dir: Path = field(default=Path("."), compare=False)

    def resolve(self, path):
        if path is None:
            return None
        path = Path(path)
        return path if path.is_absolute() else (self.base_dir / path)

    @property
    def out(self):
        return self.resolve(self.output_dir)

    def model(self, model_id):
        for entry in self.models:
            if entry.id == model_id:
                return entry
        raise KeyError(model_id)

    def preprocess_for(self, entry):
        return dataclasses.replace(self.preprocess, train_size=entry.architecture.train_size)

    def train_for(self, entry):
        return dataclasses.replace(entry.train, seed=self.seed)

    def augment_for(self, entry):
        return dataclasses.replace(self.augment, rng_seed=self.seed)


def _field_path(path, exc, keys):
    msg = str(exc)
    for key in sorted(keys, key=len, reverse=True):
        if msg.startswith(key):
            return f"{path}.{key}" if path else key
    return path


def _build(cls, data, path, section=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(path, f"expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)} - _DERIVED.get(section or path, set())
    unknown = sorted(set(map(str, data)) - allowed)
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    try:
        return cls(**data)
    except (ValueError, TypeError, InvalidPairing, InvalidSize) as exc:
        raise ValidationError(_field_path(path, exc, data), str(exc)) from None


def _default_models():
    mits, convnexts = paper_architectures()
    return tuple(
        ModelEntry(mid, spec, default_train_config(spec)) for mid, spec in mits + convnexts
    )


def _default_ensemble(models):
    ids = [m.id for m in models]
    mits = [m.id for m in models if m.architecture.encoder_family.value.startswith("MIT")]
    convnexts = [m.id for m in models if m.architecture.encoder_family.value.startswith("CONVNEXT")]
    if mits and convnexts and len(mits) + len(convnexts) == len(ids):
        return paper_ensemble_spec(mits, convnexts)
    return EnsembleSpec((EnsembleGroup("all", tuple(ids), 1.0),))


def _parse_models(raw):
    if not isinstance(raw, list) or not raw:
        raise ValidationError("models", "expected a non-empty list")
    models = []
    for i, item in enumerate(raw):
        path = f"models[{i}]"
        if not isinstance(item, dict):
            raise ValidationError(path, "expected a mapping")
        unknown = sorted(set(item) - {"id", "architecture", "train"})
        if unknown:
            raise ValidationError(f"{path}.{unknown[0]}", "unknown key")
        if "id" not in item or "architecture" not in item:
            raise ValidationError(path, "models need 'id' and 'architecture'")
        arch = _build(
            ArchitectureSpec, item["architecture"], f"{path}.architecture", "architecture"
        )
        train_raw = item.get("train") or {}
        base = default_train_config(arch)
        if not isinstance(train_raw, dict):
            raise ValidationError(f"{path}.train", "expected a mapping")
        merged = {**base.to_dict(), **train_raw}
        merged.pop("seed", None)
        unknown = sorted(set(train_raw) - ({f.name for f in fields(TrainConfig)} - {"seed"}))
        if unknown:
            raise ValidationError(f"{path}.train.{unknown[0]}", "unknown key")
        train = _build(TrainConfig, merged, f"{path}.train", "train")
        models.append(ModelEntry(str(item["id"]), arch, train))
    ids = [m.id for m in models]
    if len(set(ids)) != len(ids):
        raise ValidationError("models", f"duplicate model ids: {ids}")
    return tuple(models)


def _parse_ensemble(raw, models):
    if raw is None:
        return _default_ensemble(models)
    if not isinstance(raw, dict) or set(raw) - {"groups"}:
        raise ValidationError("ensemble", "expected a mapping with only 'groups'")
    groups = []
    for i, g in enumerate(raw.get("groups") or []):
        path = f"ensemble.groups[{i}]"
        if not isinstance(g, dict):
            raise ValidationError(path, "expected a mapping")
        unknown = sorted(set(g) - {"name", "members", "weight"})
        if unknown:
            raise ValidationError(f"{path}.{unknown[0]}", "unknown key")
        try:
            groups.append(
                EnsembleGroup(str(g["name"]), tuple(map(str, g["members"])), float(g["weight"]))
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(path, str(exc)) from None
    try:
        spec = EnsembleSpec(tuple(groups))
    except ValueError as exc:
        raise ValidationError("ensemble", str(exc)) from None
    known = {m.id for m in models}
    missing = [m for m in spec.members if m not in known]
    if missing:
        raise ValidationError("ensemble", f"members not among models: {missing}")
    return spec


TOP_LEVEL_KEYS = {
    "dataset",
    "models",
    "ensemble",
    "preprocess",
    "augment",
    "postprocess",
    "sweep_grid",
    "output_dir",
    "seed",
    "workers",
}


def config_from_dict(data, base_dir="."):
    if not isinstance(data, dict):
        raise ValidationError("", "config must be a mapping")
    unknown = sorted(set(data) - TOP_LEVEL_KEYS)
    if unknown:
        raise ValidationError(unknown[0], "unknown key")
    if "dataset" not in data:
        raise ValidationError("dataset", "required")
    dataset = _build(DatasetConfig, data["dataset"], "dataset")
    preprocess = _build(PreprocessConfig, data.get("preprocess"), "preprocess")
    augment_raw = data.get("augment") or {}
    augment = _build(AugmentConfig, augment_raw, "augment")
    postprocess = _build(PostprocessConfig, data.get("postprocess"), "postprocess")
    models = _parse_models(data["models"]) if data.get("models") is not None else _default_models()
    ensemble = _parse_ensemble(data.get("ensemble"), models)

    seed = data.get("seed", 42)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError("seed", "must be an integer")
    workers = data.get("workers")
    if workers is not None and (not isinstance(workers, int) or workers < 1):
        raise ValidationError("workers", "must be a positive integer or null")
    grid = data.get("sweep_grid", DEFAULT_SWEEP_GRID)
    try:
        grid = tuple(float(t) for t in grid)
    except (TypeError, ValueError):
        raise ValidationError("sweep_grid", "must be a list of numbers") from None
    if not grid or list(grid) != sorted(grid) or not all(0.0 < t < 1.0 for t in grid):
        raise ValidationError("sweep_grid", "must be a non-empty ascending list in (0, 1)")

    for i, m in enumerate(models):
        size = m.architecture.train_size
        if size < preprocess.chip_size:
            raise ValidationError(
                f"models[{i}].architecture.train_size",
                f"{size} is smaller than preprocess.chip_size {preprocess.chip_size}",
            )
        if m.architecture.is_reference and size % 16:
            raise ValidationError(f"models[{i}].architecture.train_size", "must be divisible by 16")

    return ExperimentConfig(
        dataset=dataset,
        models=models,
        ensemble=ensemble,
        preprocess=preprocess,
        augment=augment,
        postprocess=postprocess,
        sweep_grid=grid,
        output_dir=str(data.get("output_dir", "runs/kelpseg")),
        seed=seed,
        workers=workers,
        base_dir=Path(base_dir),
    )


def parse_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return config_from_dict(data, base_dir=path.parent.resolve())


def config_to_dict(config):
    pre = config.preprocess.to_dict()
    pre.pop("train_size")
    aug = config.augment.to_dict()
    aug.pop("rng_seed")
    models = []
    for m in config.models:
        train = m.train.to_dict()
        train.pop("seed")
        models.append({"id": m.id, "architecture": m.architecture.to_dict(), "train": train})
    return {
        "seed": config.seed,
        "output_dir": config.output_dir,
        "workers": config.workers,
        "dataset": dataclasses.asdict(config.dataset),
        "preprocess": pre,
        "augment": aug,
        "models": models,
        "ensemble": config.ensemble.to_dict(),
        "postprocess": config.postprocess.to_dict(),
        "sweep_grid": list(config.sweep_grid),
    }


def dump_config(config, path=None):
    text = yaml.safe_dump(config_to_dict(config), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
