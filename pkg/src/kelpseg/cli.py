"""``kelpseg`` command line: file-decoupled pipeline stages.

Artifact layout under ``output_dir``::

    manifest.csv                         chip_id,image_path,mask_path,split
    checkpoints/<model_id>/best.ckpt     plus last.ckpt, history.csv
    probabilities/<model_id>/<chip_id>.tif   float32 TTA maps at chip size
    probabilities/ensemble/<chip_id>.tif
    masks/<chip_id>_kelp.tif             uint8 binary masks
    masks/masks_rle.csv
    reports/counts.csv, pixel_report.csv, pixel_report.txt, dice.txt
    reports/threshold_curve.csv, best_threshold.txt

Errors print one JSON object to stderr and exit nonzero (2 for pipeline
errors, 1 for anything unexpected).
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import dataset as ds
from .config import parse_config
from .exceptions import (
    CheckpointNotFound,
    ConfigError,
    EmptyDataset,
    KelpSegError,
    MissingArtifact,
)
from .infer import (
    ensemble,
    predict_tta,
    read_probability,
    resize_prob_to_original,
    write_probability,
)
from .metrics import (
    ConfusionCounts,
    confusion_counts,
    pixel_report,
    read_counts_csv,
    threshold_sweep,
    write_counts_csv,
    write_curve_csv,
)
from .model import build_model, load_checkpoint
from .postprocess import binarize, land_from_chip, read_mask, write_mask, write_rle_csv
from .preprocess import preprocess_chip
from .train import fit

logger = logging.getLogger("kelpseg")

COMMANDS = ("prepare", "train", "predict", "ensemble", "postprocess", "evaluate", "sweep")


def log_event(event, **fields):
    logger.info(json.dumps({"event": event, **fields}, default=str))


class Pipeline:
    """Stage implementations sharing one :class:`ExperimentConfig`."""

    def __init__(self, config, workers=None, models=None):
        self.config = config
        self.out = config.out
        self.workers = workers or config.workers or os.cpu_count() or 1
        self.model_ids = list(models) if models else [m.id for m in config.models]
        unknown = [m for m in self.model_ids if m not in {e.id for e in config.models}]
        if unknown:
            raise ConfigError(f"--models names unknown model ids {unknown}")

    # paths
    @property
    def manifest_path(self):
        return self.out / "manifest.csv"

    def checkpoint_dir(self, model_id):
        return self.out / "checkpoints" / model_id

    def prob_dir(self, name):
        return self.out / "probabilities" / name

    @property
    def mask_dir(self):
        return self.out / "masks"

    @property
    def report_dir(self):
        return self.out / "reports"

    def _map(self, fn, items):
        items = list(items)
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def _manifest(self):
        if not self.manifest_path.is_file():
            raise MissingArtifact(f"{self.manifest_path} not found; run 'kelpseg prepare' first")
        return ds.read_manifest_csv(self.manifest_path)

    def _chips(self, split_names):
        manifest, splits = self._manifest()
        entries = [e for e in manifest if splits[e.chip_id] in split_names]
        return ds.load_entries(
            entries, expected_size=self.config.preprocess.chip_size, workers=self.workers
        )

    # stages
    def prepare(self):
        cfg = self.config.dataset
        kwargs = {"image_suffix": cfg.image_suffix, "mask_suffix": cfg.mask_suffix}
        manifest = ds.build_manifest(self.config.resolve(cfg.train_dir), **kwargs)
        if cfg.test_dir:
            test = ds.build_manifest(self.config.resolve(cfg.test_dir), **kwargs)
            unlabeled = tuple(ds.ManifestEntry(e.chip_id, e.image_path) for e in test)
            manifest = ds.Manifest(manifest.entries + unlabeled)
        split = ds.split_train_val(manifest, self.config.seed, cfg.train_fraction)
        if cfg.exclusions:
            ids = (
                ds.default_exclusions()
                if cfg.exclusions == "paper"
                else ds.read_exclusions(self.config.resolve(cfg.exclusions))
            )
            manifest = ds.apply_exclusions(manifest, ids)
        ds.write_manifest_csv(manifest, self.manifest_path, split)
        log_event(
            "prepare",
            chips=len(manifest),
            train=len(split.train_ids - manifest.excluded_ids),
            val=len(split.val_ids - manifest.excluded_ids),
            test=len(manifest) - len(manifest.labeled),
            excluded=sorted(manifest.excluded_ids),
        )
        return manifest, split

    def train(self):
        train_chips = self._chips({"train"})
        val_chips = self._chips({"val"})
        results = {}
        for mid in self.model_ids:
            entry = self.config.model(mid)
            model = build_model(entry.architecture, seed=self.config.seed)
            log_event(
                "train_start",
                model=mid,
                parameters=model.n_parameters(),
                train=len(train_chips),
                val=len(val_chips),
            )
            _, history = fit(
                model,
                train_chips,
                val_chips,
                self.config.train_for(entry),
                self.config.preprocess_for(entry),
                self.config.augment_for(entry),
                checkpoint_dir=self.checkpoint_dir(mid),
            )
            log_event(
                "train_done",
                model=mid,
                best_epoch=history.best_epoch,
                best_score=history.best_score,
            )
            results[mid] = history
        return results

    def _load_model(self, mid):
        path = self.checkpoint_dir(mid) / "best.ckpt"
        if not path.is_file():
            raise CheckpointNotFound(
                f"no checkpoint for model {mid!r} at {path}; run 'kelpseg train'"
            )
        model, _ = load_checkpoint(path)
        return model

    def predict(self):
        # load every checkpoint up front so a missing one fails before any work
        models = {mid: self._load_model(mid) for mid in self.model_ids}
        chips = self._chips({"val", "test"})
        for mid, model in models.items():
            pre = self.config.preprocess_for(self.config.model(mid))
            directory = self.prob_dir(mid)
            for chip in chips:
                prob = predict_proba_chip(model, chip, pre)
                write_probability(prob, directory / f"{chip.chip_id}.tif")
            log_event("predict", model=mid, chips=len(chips), directory=directory)

    def ensemble(self):
        spec = self.config.ensemble
        dirs = {m: self.prob_dir(m) for m in spec.members}
        missing = [m for m, d in dirs.items() if not d.is_dir()]
        if missing:
            raise MissingArtifact(f"no probabilities for members {missing}; run 'kelpseg predict'")
        ids = sorted(set.intersection(*({p.stem for p in d.glob("*.tif")} for d in dirs.values())))
        if not ids:
            raise EmptyDataset("no chip has probabilities from every ensemble member")

        def _one(chip_id):
            maps = {m: read_probability(d / f"{chip_id}.tif") for m, d in dirs.items()}
            write_probability(ensemble(maps, spec), self.prob_dir("ensemble") / f"{chip_id}.tif")

        self._map(_one, ids)
        log_event("ensemble", chips=len(ids), groups=[g.name for g in spec.groups])

    def _ensemble_ids(self):
        directory = self.prob_dir("ensemble")
        if not directory.is_dir():
            raise MissingArtifact(f"{directory} not found; run 'kelpseg ensemble'")
        return sorted(p.stem for p in directory.glob("*.tif"))

    def postprocess(self):
        ids = set(self._ensemble_ids())
        manifest, _ = self._manifest()
        entries = [e for e in manifest if e.chip_id in ids]
        cfg = self.config.postprocess

        def _one(entry):
            chip = ds.load_chip(
                entry.image_path,
                chip_id=entry.chip_id,
                expected_size=self.config.preprocess.chip_size,
            )
            prob = read_probability(self.prob_dir("ensemble") / f"{chip.chip_id}.tif")
            mask = postprocess_chip(prob, chip, cfg)
            write_mask(mask, self.mask_dir / f"{chip.chip_id}{ds.MASK_SUFFIX}.tif")
            return chip.chip_id, mask

        masks = dict(self._map(_one, entries))
        write_rle_csv(masks, self.mask_dir / "masks_rle.csv")
        log_event("postprocess", chips=len(masks), threshold=cfg.threshold)

    def evaluate(self, counts_path=None):
        if counts_path is not None:
            counts = read_counts_csv(counts_path)
        else:
            manifest, splits = self._manifest()
            entries = [e for e in manifest if splits[e.chip_id] == "val"]
            if not entries:
                raise EmptyDataset("no validation chips in manifest")

            def _one(entry):
                path = self.mask_dir / f"{entry.chip_id}{ds.MASK_SUFFIX}.tif"
                if not path.is_file():
                    raise MissingArtifact(f"{path} not found; run 'kelpseg postprocess'")
                truth = ds.load_chip(
                    entry.image_path, entry.mask_path, chip_id=entry.chip_id, expected_size=None
                ).mask
                return confusion_counts(read_mask(path), truth)

            counts = sum(self._map(_one, entries), ConfusionCounts())
        report = pixel_report(counts)
        self.report_dir.mkdir(parents=True, exist_ok=True)
        write_counts_csv(counts, self.report_dir / "counts.csv")
        report.write_csv(self.report_dir / "pixel_report.csv")
        (self.report_dir / "pixel_report.txt").write_text(report.to_table() + "\n")
        (self.report_dir / "dice.txt").write_text(f"{report.dice:.6f}\n")
        log_event("evaluate", **counts.to_dict(), dice=report.dice)
        print(report.to_table())
        print(f"dice={report.dice:.4f}")
        return report

    def sweep(self):
        ids = set(self._ensemble_ids())
        manifest, splits = self._manifest()
        entries = [e for e in manifest if splits[e.chip_id] == "val" and e.chip_id in ids]
        if not entries:
            raise EmptyDataset("no validation chips with ensemble probabilities")
        chips = ds.load_entries(
            entries, expected_size=self.config.preprocess.chip_size, workers=self.workers
        )
        cfg = self.config.postprocess
        probs = [read_probability(self.prob_dir("ensemble") / f"{c.chip_id}.tif") for c in chips]
        lands = [land_from_chip(c, cfg) if cfg.use_land_mask else None for c in chips]
        best, curve = threshold_sweep(probs, [c.mask for c in chips], lands, self.config.sweep_grid)
        write_curve_csv(curve, self.report_dir / "threshold_curve.csv")
        (self.report_dir / "best_threshold.txt").write_text(f"{best:.4f}\n")
        log_event("sweep", best_threshold=best, best_dice=dict(curve)[best], points=len(curve))
        print(f"best_threshold={best:.2f} dice={dict(curve)[best]:.4f}")
        return best, curve


def predict_proba_chip(model, chip, preprocess_config):
    sample = preprocess_chip(chip, preprocess_config)
    return resize_prob_to_original(predict_tta(model, sample.image), preprocess_config.chip_size)


def postprocess_chip(prob, chip, config):
    land = land_from_chip(chip, config) if config.use_land_mask else None
    return binarize(prob, config, land)


def build_parser():
    parser = argparse.ArgumentParser(prog="kelpseg", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--models", type=lambda s: [m for m in s.split(",") if m], default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument(
                "--counts", type=Path, default=None, help="score a tp,fp,fn,tn CSV instead of masks"
            )
    synth = sub.add_parser("synth", help="write a synthetic chip dataset")
    synth.add_argument("--out", required=True, type=Path)
    synth.add_argument("--n-train", type=int, default=8)
    synth.add_argument("--n-test", type=int, default=2)
    synth.add_argument("--size", type=int, default=64)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(command, config=None, *, workers=None, models=None, counts=None, args=None):
    if command == "synth":
        from .synthetic import write_synthetic_dataset

        root = write_synthetic_dataset(args.out, args.n_train, args.n_test, args.size, args.seed)
        log_event("synth", root=root, train=args.n_train, test=args.n_test, size=args.size)
        return 0
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    if not isinstance(config, (str, Path)):
        cfg = config
    else:
        cfg = parse_config(config)
    pipeline = Pipeline(cfg, workers=workers, models=models)
    if command == "evaluate":
        pipeline.evaluate(counts)
    else:
        getattr(pipeline, command)()
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command != "evaluate" else logging.WARNING,
        format="%(message)s",
        stream=sys.stderr,
    )
    try:
        return run(
            args.command,
            getattr(args, "config", None),
            workers=getattr(args, "workers", None),
            models=getattr(args, "models", None),
            counts=getattr(args, "counts", None),
            args=args,
        )
    except KelpSegError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
