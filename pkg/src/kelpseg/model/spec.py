"""Declarative architecture descriptions and the encoder/decoder pairing rules."""

import enum
from dataclasses import dataclass

from ..exceptions import InvalidPairing, InvalidSize


class EncoderFamily(str, enum.Enum):
    MIT_B1 = "MIT_B1"
    MIT_B2 = "MIT_B2"
    MIT_B3 = "MIT_B3"
    MIT_B4 = "MIT_B4"
    CONVNEXT_TINY = "CONVNEXT_TINY"
    CONVNEXT_BASE = "CONVNEXT_BASE"
    REFERENCE_TINY = "REFERENCE_TINY"


class DecoderFamily(str, enum.Enum):
    UNET = "UNET"
    UPPERNET = "UPPERNET"
    REFERENCE = "REFERENCE"


# Compared during model selection but not buildable here.
UNSUPPORTED_DECODERS = frozenset({"MANET", "PSPNET", "FPN"})

PAPER_TRAIN_SIZES = (512, 640, 768)

_PAIRING = {
    "MIT": DecoderFamily.UNET,
    "CONVNEXT": DecoderFamily.UPPERNET,
    "REFERENCE": DecoderFamily.REFERENCE,
}


def _coerce(enum_cls, value):
    key = getattr(value, "value", value)
    key = str(key).upper()
    if key in UNSUPPORTED_DECODERS:
        raise InvalidPairing(f"decoder {key} is not supported")
    try:
        return enum_cls(key)
    except ValueError:
        choices = [m.value for m in enum_cls]
        raise InvalidPairing(
            f"unknown {enum_cls.__name__} {key!r}; expected one of {choices}"
        ) from None


def _family_prefix(encoder):
    return encoder.value.split("_", 1)[0]


@dataclass(frozen=True)
class ArchitectureSpec:
    encoder_family: EncoderFamily
    decoder_family: DecoderFamily
    train_size: int
    pretrained: bool = False

    def __post_init__(self):
        encoder = _coerce(EncoderFamily, self.encoder_family)
        decoder = _coerce(DecoderFamily, self.decoder_family)
        object.__setattr__(self, "encoder_family", encoder)
        object.__setattr__(self, "decoder_family", decoder)
        expected = _PAIRING[_family_prefix(encoder)]
        if decoder is not expected:
            raise InvalidPairing(
                f"{encoder.value} encoders pair with {expected.value}, not {decoder.value}"
            )
        if int(self.train_size) != self.train_size or self.train_size < 1:
            raise InvalidSize(f"train_size must be a positive integer, got {self.train_size}")
        object.__setattr__(self, "train_size", int(self.train_size))
        if not self.is_reference and self.train_size not in PAPER_TRAIN_SIZES:
            raise InvalidSize(
                f"{encoder.value} models train at one of {PAPER_TRAIN_SIZES}, got {self.train_size}"
            )
        object.__setattr__(self, "pretrained", bool(self.pretrained))

    @property
    def is_reference(self):
        return self.encoder_family is EncoderFamily.REFERENCE_TINY

    @property
    def name(self):
        return f"{self.encoder_family.value.lower()}_{self.decoder_family.value.lower()}_{self.train_size}"

    def to_dict(self):
        return {
            "encoder_family": self.encoder_family.value,
            "decoder_family": self.decoder_family.value,
            "train_size": self.train_size,
            "pretrained": self.pretrained,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            data["encoder_family"],
            data["decoder_family"],
            data["train_size"],
            data.get("pretrained", False),
        )


def paper_architectures():
    """The seven ensemble members: four MIT U-Nets, three ConvNeXt UperNets."""
    mits = [
        ("mit_b2_768", ArchitectureSpec("MIT_B2", "UNET", 768, True)),
        ("mit_b4_512", ArchitectureSpec("MIT_B4", "UNET", 512, True)),
        ("mit_b3_640", ArchitectureSpec("MIT_B3", "UNET", 640, True)),
        ("mit_b2_640", ArchitectureSpec("MIT_B2", "UNET", 640, True)),
    ]
    convnexts = [
        ("convnext_tiny_768", ArchitectureSpec("CONVNEXT_TINY", "UPPERNET", 768, True)),
        ("convnext_tiny_512", ArchitectureSpec("CONVNEXT_TINY", "UPPERNET", 512, True)),
        ("convnext_base_512", ArchitectureSpec("CONVNEXT_BASE", "UPPERNET", 512, True)),
    ]
    return mits, convnexts
