"""scikit-learn style estimators over the functional API.

``X`` is always a sequence of :class:`~kelpseg.dataset.Chip`. Masks come from
the chips unless ``y`` (an ``(N, H, W)`` binary array) is given.
"""

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .augment import AugmentConfig
from .dataset import CHIP_SIZE, Chip
from .exceptions import EmptyDataset
from .infer import (
    EnsembleGroup,
    EnsembleSpec,
    ensemble,
    predict_single,
    predict_tta,
    resize_prob_to_original,
)
from .metrics import dataset_dice
from .model import ArchitectureSpec, build_model
from .postprocess import DEFAULT_THRESHOLD, PostprocessConfig, binarize, land_from_chip
from .preprocess import PreprocessConfig, preprocess_chip
from .train import TrainConfig, fit
from .utils import check_binary_mask


def check_chips(X, y=None, *, require_mask=False):
    """Validate a chip sequence, attaching masks from ``y`` when given."""
    chips = list(X)
    if not chips:
        raise EmptyDataset("X is empty")
    for chip in chips:
        if not isinstance(chip, Chip):
            raise TypeError(f"X must contain Chip objects, got {type(chip).__name__}")
    if y is not None:
        y = np.asarray(y)
        if len(y) != len(chips):
            raise ValueError(f"X has {len(chips)} chips but y has {len(y)} masks")
        chips = [replace(c, mask=check_binary_mask(m).astype(np.uint8)) for c, m in zip(chips, y)]
    if require_mask:
        unlabeled = [c.chip_id for c in chips if c.mask is None]
        if unlabeled:
            raise EmptyDataset(f"chips without masks: {unlabeled[:5]}")
    return chips


class KelpSegmenter(BaseEstimator):
    """One segmentation model: train with ``fit``, predict with flip TTA.

    Parameters
    ----------
    encoder, decoder : str
        Architecture families, e.g. ``"MIT_B2"``/``"UNET"`` or the native
        ``"REFERENCE_TINY"``/``"REFERENCE"``.
    train_size : int
        Side the chips are enlarged to before entering the model.
    chip_size : int
        Native chip side; probabilities and scores are reported at this size.
    epochs, warmup_epochs, lr_peak, lr_floor, lr_warmup, decoder_lr_multiplier,
    batch_size, accumulation_steps
        See :class:`~kelpseg.train.TrainConfig`.
    threshold : float
        Probability cut used by ``predict`` and ``score``.
    tta : bool
        Average the four flip states in ``predict_proba``.
    augment : bool
        Apply flips, rotations and holes during training.
    random_state : int
        Seeds initialization, batch order and augmentation.
    backend : str or None
        Model backend for non-reference architectures.
    """

    def __init__(
        self,
        encoder="REFERENCE_TINY",
        decoder="REFERENCE",
        train_size=64,
        chip_size=CHIP_SIZE,
        pretrained=False,
        epochs=30,
        warmup_epochs=1,
        lr_peak=5e-5,
        lr_floor=5e-7,
        lr_warmup=1e-6,
        decoder_lr_multiplier=10.0,
        batch_size=4,
        accumulation_steps=3,
        threshold=DEFAULT_THRESHOLD,
        tta=True,
        augment=True,
        use_land_mask=True,
        random_state=0,
        backend=None,
    ):
        self.encoder = encoder
        self.decoder = decoder
        self.train_size = train_size
        self.chip_size = chip_size
        self.pretrained = pretrained
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.lr_peak = lr_peak
        self.lr_floor = lr_floor
        self.lr_warmup = lr_warmup
        self.decoder_lr_multiplier = decoder_lr_multiplier
        self.batch_size = batch_size
        self.accumulation_steps = accumulation_steps
        self.threshold = threshold
        self.tta = tta
        self.augment = augment
        self.use_land_mask = use_land_mask
        self.random_state = random_state
        self.backend = backend

    def _configs(self):
        arch = ArchitectureSpec(self.encoder, self.decoder, self.train_size, self.pretrained)
        pre = PreprocessConfig(train_size=self.train_size, chip_size=self.chip_size)
        train = TrainConfig(
            epochs=self.epochs,
            warmup_epochs=self.warmup_epochs,
            lr_peak=self.lr_peak,
            lr_floor=self.lr_floor,
            lr_warmup=self.lr_warmup,
            decoder_lr_multiplier=self.decoder_lr_multiplier,
            batch_size=self.batch_size,
            accumulation_steps=self.accumulation_steps,
            augment=self.augment,
            seed=self.random_state,
        )
        return arch, pre, train

    def fit(self, X, y=None, *, eval_set=None, checkpoint_dir=None):
        chips = check_chips(X, y, require_mask=True)
        val = check_chips(eval_set, require_mask=True) if eval_set is not None else None
        arch, pre, train = self._configs()
        model = build_model(arch, backend=self.backend, seed=self.random_state)
        aug = AugmentConfig(
            rng_seed=self.random_state,
            hole_size_range=(max(1, self.train_size // 32), max(1, self.train_size // 8)),
        )
        self.model_, self.history_ = fit(
            model, chips, val, train, pre, aug, checkpoint_dir=checkpoint_dir
        )
        self.preprocess_config_ = pre
        return self

    @classmethod
    def from_model(cls, model, chip_size=CHIP_SIZE, **params):
        """Wrap an already trained :class:`SegmentationModel`."""
        spec = model.spec
        est = cls(
            encoder=spec.encoder_family.value,
            decoder=spec.decoder_family.value,
            train_size=spec.train_size,
            chip_size=chip_size,
            **params,
        )
        est.model_ = model
        est.preprocess_config_ = PreprocessConfig(train_size=spec.train_size, chip_size=chip_size)
        return est

    def predict_proba(self, X):
        """``(N, chip_size, chip_size)`` float32 kelp probabilities."""
        check_is_fitted(self, "model_")
        predict = predict_tta if self.tta else predict_single
        out = []
        for chip in check_chips(X):
            sample = preprocess_chip(chip, self.preprocess_config_)
            out.append(resize_prob_to_original(predict(self.model_, sample.image), self.chip_size))
        return np.stack(out)

    def _postprocess_config(self):
        return PostprocessConfig(threshold=self.threshold, use_land_mask=self.use_land_mask)

    def predict(self, X):
        chips = check_chips(X)
        return _binarize_all(self.predict_proba(chips), chips, self._postprocess_config())

    def score(self, X, y=None):
        """Pooled Dice over all chips."""
        chips = check_chips(X, y, require_mask=True)
        pred = self.predict(chips)
        return dataset_dice(zip(pred, (c.mask for c in chips)))


def _binarize_all(probs, chips, config):
    out = []
    for prob, chip in zip(probs, chips):
        land = land_from_chip(chip, config) if config.use_land_mask else None
        out.append(binarize(prob, config, land))
    return np.stack(out)


class KelpEnsemble(BaseEstimator):
    """Group-weighted average of member estimators.

    ``groups`` is a list of ``(name, [estimator, ...], weight)``. The default
    recipe weights the MIT U-Net group 5 and the ConvNeXt UperNet group 3.
    """

    def __init__(self, groups, threshold=DEFAULT_THRESHOLD, use_land_mask=True):
        self.groups = groups
        self.threshold = threshold
        self.use_land_mask = use_land_mask

    def _spec(self):
        return EnsembleSpec(
            tuple(
                EnsembleGroup(name, tuple(f"{name}/{i}" for i in range(len(members))), weight)
                for name, members, weight in self.groups
            )
        )

    def _members(self):
        return {
            f"{name}/{i}": est
            for name, members, weight in self.groups
            for i, est in enumerate(members)
        }

    def fit(self, X, y=None, **fit_params):
        for est in self._members().values():
            est.fit(X, y, **fit_params)
        self.spec_ = self._spec()
        return self

    def predict_proba(self, X):
        chips = check_chips(X)
        spec = getattr(self, "spec_", None) or self._spec()
        maps = {key: est.predict_proba(chips) for key, est in self._members().items()}
        return np.stack(
            [ensemble({k: v[i] for k, v in maps.items()}, spec) for i in range(len(chips))]
        )

    def predict(self, X):
        chips = check_chips(X)
        config = PostprocessConfig(threshold=self.threshold, use_land_mask=self.use_land_mask)
        return _binarize_all(self.predict_proba(chips), chips, config)

    def score(self, X, y=None):
        chips = check_chips(X, y, require_mask=True)
        return dataset_dice(zip(self.predict(chips), (c.mask for c in chips)))
