"""Model backends and the :class:`SegmentationModel` wrapper.

A backend turns an :class:`ArchitectureSpec` into a ``torch.nn.Module``
mapping ``(B, 3, S, S)`` images to ``(B, 1, S, S)`` logits. Parameters whose
qualified name starts with ``encoder.`` form the encoder group; everything
else (decoder, heads) forms the decoder group.

The ``reference`` backend is always available and builds only
``REFERENCE_TINY``. Paper architectures need an external backend, selected
with the ``backend=`` argument or the ``KELPSEG_BACKEND`` environment
variable; ``smp`` (segmentation_models_pytorch) ships here.
"""

import os

import torch

from ..exceptions import BackendUnavailable, ShapeMismatch
from .reference import ReferenceTinyNet
from .spec import ArchitectureSpec, DecoderFamily, EncoderFamily

BACKEND_ENV = "KELPSEG_BACKEND"
ENCODER_PREFIX = "encoder."


class ModelBackend:
    name = "base"

    def supports(self, spec):
        raise NotImplementedError

    def build(self, spec):
        raise NotImplementedError


class ReferenceBackend(ModelBackend):
    name = "reference"

    def supports(self, spec):
        return spec.is_reference

    def build(self, spec):
        return ReferenceTinyNet()


class SMPBackend(ModelBackend):
    """segmentation_models_pytorch: MIT encoders on U-Net, ConvNeXt on UPerNet."""

    name = "smp"
    encoder_names = {
        EncoderFamily.MIT_B1: "mit_b1",
        EncoderFamily.MIT_B2: "mit_b2",
        EncoderFamily.MIT_B3: "mit_b3",
        EncoderFamily.MIT_B4: "mit_b4",
        EncoderFamily.CONVNEXT_TINY: "tu-convnext_tiny",
        EncoderFamily.CONVNEXT_BASE: "tu-convnext_base",
    }

    def supports(self, spec):
        return spec.encoder_family in self.encoder_names

    def build(self, spec):
        try:
            import segmentation_models_pytorch as smp
        except ImportError as exc:
            raise BackendUnavailable(
                "the 'smp' backend needs segmentation-models-pytorch (pip install kelpseg[smp])"
            ) from exc
        arch = smp.Unet if spec.decoder_family is DecoderFamily.UNET else smp.UPerNet
        return arch(
            encoder_name=self.encoder_names[spec.encoder_family],
            encoder_weights="imagenet" if spec.pretrained else None,
            in_channels=3,
            classes=1,
        )


_BACKENDS = {"reference": ReferenceBackend(), "smp": SMPBackend()}


def register_backend(name, backend):
    _BACKENDS[name] = backend


def get_backend(spec, backend=None):
    if spec.is_reference:
        return _BACKENDS["reference"]
    name = backend or os.environ.get(BACKEND_ENV, "reference")
    if name not in _BACKENDS:
        raise BackendUnavailable(f"unknown backend {name!r}; registered: {sorted(_BACKENDS)}")
    chosen = _BACKENDS[name]
    if not chosen.supports(spec):
        raise BackendUnavailable(
            f"backend {name!r} cannot build {spec.name}; bind an external backend "
            f"via {BACKEND_ENV}=smp or register_backend()"
        )
    return chosen


class SegmentationModel:
    """An architecture spec bound to a torch module that emits logits."""

    def __init__(self, spec, module, backend_name="reference"):
        self.spec = spec
        self.module = module
        self.backend_name = backend_name

    def __call__(self, batch):
        return self.forward(batch)

    @property
    def stride(self):
        return getattr(self.module, "stride", 32)

    def check_input(self, batch):
        if batch.ndim != 4 or batch.shape[1] != 3:
            raise ShapeMismatch(f"expected a (B, 3, S, S) batch, got {tuple(batch.shape)}")
        h, w = batch.shape[-2:]
        if h != w:
            raise ShapeMismatch(f"expected square inputs, got {h}x{w}")
        if self.spec.is_reference:
            if h % self.stride:
                raise ShapeMismatch(f"input side {h} must be divisible by {self.stride}")
        elif h != self.spec.train_size:
            raise ShapeMismatch(f"{self.spec.name} expects side {self.spec.train_size}, got {h}")

    def forward(self, batch):
        if not torch.is_tensor(batch):
            batch = torch.as_tensor(batch)
        param = next(self.module.parameters())
        batch = batch.to(dtype=param.dtype, device=param.device)
        self.check_input(batch)
        return self.module(batch)

    def parameter_groups(self):
        """``(encoder, decoder)`` lists of ``(name, parameter)``."""
        encoder, decoder = [], []
        for name, param in self.module.named_parameters():
            (encoder if name.startswith(ENCODER_PREFIX) else decoder).append((name, param))
        return encoder, decoder

    def n_parameters(self):
        return sum(p.numel() for p in self.module.parameters())

    def train(self, mode=True):
        self.module.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to(self, *args, **kwargs):
        self.module.to(*args, **kwargs)
        return self


def build_model(spec, *, backend=None, seed=None, dtype=torch.float32):
    """Construct a :class:`SegmentationModel`; ``seed`` fixes the initialization."""
    if isinstance(spec, dict):
        spec = ArchitectureSpec.from_dict(spec)
    chosen = get_backend(spec, backend)
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        module = chosen.build(spec)
    module.to(dtype)
    return SegmentationModel(spec, module, chosen.name).eval()


def forward(model, batch):
    return model.forward(batch)


def parameter_groups(model):
    return model.parameter_groups()
