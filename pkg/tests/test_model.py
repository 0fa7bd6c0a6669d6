import hashlib
import json
import zipfile

import numpy as np
import pytest
import torch

from kelpseg.exceptions import (
    BackendUnavailable,
    CheckpointNotFound,
    InvalidPairing,
    InvalidSize,
    ShapeMismatch,
)
from kelpseg.model import (
    ArchitectureSpec,
    build_model,
    forward,
    load_checkpoint,
    paper_architectures,
    parameter_groups,
    read_checkpoint,
    save_checkpoint,
)
from kelpseg.model.checkpoint import MEMBERS
from kelpseg.train import dice_loss

REF = ArchitectureSpec("REFERENCE_TINY", "REFERENCE", 64)


@pytest.mark.parametrize("size", [16, 32, 64, 96])
def test_output_shape_matches_input(size):
    model = build_model(REF, seed=1)
    out = forward(model, torch.zeros(2, 3, size, size))
    assert out.shape == (2, 1, size, size)
    assert torch.isfinite(out).all()


@pytest.mark.parametrize(
    "enc,dec",
    [
        ("MIT_B2", "UPPERNET"),
        ("CONVNEXT_TINY", "UNET"),
        ("REFERENCE_TINY", "UNET"),
        ("MIT_B1", "REFERENCE"),
        ("MIT_B2", "FPN"),
        ("NOPE", "UNET"),
    ],
)
def test_invalid_pairings(enc, dec):
    with pytest.raises(InvalidPairing):
        ArchitectureSpec(enc, dec, 512)


def test_paper_sizes_only_for_paper_models():
    with pytest.raises(InvalidSize):
        ArchitectureSpec("MIT_B2", "UNET", 600)
    assert ArchitectureSpec("REFERENCE_TINY", "REFERENCE", 48).train_size == 48


def test_paper_lineup():
    mits, convnexts = paper_architectures()
    assert len(mits) == 4 and len(convnexts) == 3
    assert {s.decoder_family.value for _, s in mits} == {"UNET"}
    assert {s.decoder_family.value for _, s in convnexts} == {"UPPERNET"}
    assert {s.train_size for _, s in mits + convnexts} == {512, 640, 768}


def test_spec_dict_round_trip():
    spec = ArchitectureSpec("CONVNEXT_BASE", "UPPERNET", 512, True)
    assert ArchitectureSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_paper_models_need_a_backend(monkeypatch):
    monkeypatch.delenv("KELPSEG_BACKEND", raising=False)
    with pytest.raises(BackendUnavailable):
        build_model(ArchitectureSpec("MIT_B2", "UNET", 640))
    with pytest.raises(BackendUnavailable):
        build_model(ArchitectureSpec("MIT_B2", "UNET", 640), backend="missing")


def test_smp_mit_b2_has_both_groups():
    pytest.importorskip("segmentation_models_pytorch")
    model = build_model(ArchitectureSpec("MIT_B2", "UNET", 640), backend="smp", seed=0)
    encoder, decoder = parameter_groups(model)
    assert encoder and decoder
    assert len(encoder) + len(decoder) == len(list(model.module.parameters()))


def test_reference_is_small_and_split():
    model = build_model(REF, seed=0)
    encoder, decoder = parameter_groups(model)
    assert encoder and decoder
    assert model.n_parameters() <= 100_000


def test_partition_is_total_and_disjoint():
    model = build_model(REF, seed=0)
    encoder, decoder = parameter_groups(model)
    enc_ids = {id(p) for _, p in encoder}
    dec_ids = {id(p) for _, p in decoder}
    assert not enc_ids & dec_ids
    assert enc_ids | dec_ids == {id(p) for p in model.module.parameters()}
    total = sum(p.numel() for _, p in encoder) + sum(p.numel() for _, p in decoder)
    assert total == model.n_parameters()


def test_zero_image_is_repeatable_bit_exact():
    model = build_model(REF, seed=3)
    x = torch.zeros(1, 3, 64, 64)
    with torch.no_grad():
        a, b = forward(model, x), forward(model, x)
    assert torch.isfinite(a).all()
    assert torch.equal(a, b)
    again = build_model(REF, seed=3)
    with torch.no_grad():
        assert torch.equal(forward(again, x), a)


def test_batch_of_two_equals_two_batches_of_one():
    # float64 so kernel-level summation order cannot hide a real batch coupling
    model = build_model(REF, seed=0, dtype=torch.float64)
    x = torch.randn(2, 3, 32, 32, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    with torch.no_grad():
        joint = forward(model, x)
        split = torch.cat([forward(model, x[:1]), forward(model, x[1:])])
    torch.testing.assert_close(joint, split, rtol=0, atol=1e-12)


@pytest.mark.parametrize("shape", [(1, 4, 64, 64), (3, 64, 64), (1, 3, 64, 48), (1, 3, 40, 40)])
def test_bad_shapes(shape):
    with pytest.raises(ShapeMismatch):
        forward(build_model(REF, seed=0), torch.zeros(shape))


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = build_model(REF, seed=5)
    x = torch.randn(2, 3, 64, 64, generator=torch.Generator().manual_seed(1))
    path = save_checkpoint(tmp_path / "m.ckpt", model, {"epoch": 3})
    loaded, state = load_checkpoint(path)
    assert state["epoch"] == 3 and state["backend"] == "reference"
    assert loaded.spec == model.spec
    with torch.no_grad():
        assert torch.equal(forward(loaded, x), forward(model, x))


def test_checkpoint_bytes_are_reproducible(tmp_path):
    a = save_checkpoint(tmp_path / "a.ckpt", build_model(REF, seed=2), {"epoch": 0})
    b = save_checkpoint(tmp_path / "b.ckpt", build_model(REF, seed=2), {"epoch": 0})
    assert a.read_bytes() == b.read_bytes()


def _golden_model():
    model = build_model(ArchitectureSpec("REFERENCE_TINY", "REFERENCE", 32), seed=0)
    with torch.no_grad():
        for i, (_, p) in enumerate(model.module.named_parameters()):
            p.copy_(torch.arange(p.numel(), dtype=p.dtype).reshape(p.shape) * 1e-3 + i)
    return model


# sha256 of each uncompressed member for _golden_model(); pins the on-disk format
GOLDEN_MEMBERS = {
    "format.json": "76273206de1199424960f277a8669852d42f01b644b39d30e0cce6f978bb97a0",
    "spec.json": "08675c8d90e3d645be34d3f88be3f3d1fbaeaf0be1ef9cccbcb008f7306b7085",
    "parameters.json": "bae7719f7a58591bf8631237fd005b755354d2d10445efb40a8e475c798367f4",
    "parameters.npz": "6acaa5ec09827f782f3f6affd92d890686c8e60d0c348b0e8d6a9281f9c9866f",
    "state.json": "4d31c0059d394d9ce0c2733800343805ce45b9fb55e3d91f3447679a8d80d48d",
}


def test_checkpoint_golden_format(tmp_path):
    path = save_checkpoint(tmp_path / "g.ckpt", _golden_model(), {"epoch": 7})
    with zipfile.ZipFile(path) as zf:
        assert tuple(zf.namelist()) == MEMBERS
        digests = {n: hashlib.sha256(zf.read(n)).hexdigest() for n in zf.namelist()}
        assert json.loads(zf.read("format.json")) == {"format": "kelpseg-checkpoint", "version": 1}
        listing = json.loads(zf.read("parameters.json"))
    assert listing[0] == {
        "name": "encoder.stem.0.weight",
        "shape": [8, 3, 3, 3],
        "dtype": "float32",
        "group": "encoder",
    }
    assert {e["group"] for e in listing} == {"encoder", "decoder"}
    assert digests == GOLDEN_MEMBERS


def test_checkpoint_keeps_optimizer_moments(tmp_path):
    model = _golden_model()
    opt = torch.optim.AdamW(model.module.parameters())
    model.module(torch.zeros(1, 3, 32, 32)).sum().backward()
    opt.step()
    path = save_checkpoint(tmp_path / "o.ckpt", model, {"epoch": 1}, opt)
    with zipfile.ZipFile(path) as zf:
        assert zf.namelist()[-1] == "optimizer.npz"
    _, _, state, moments = read_checkpoint(path)
    assert state == {"epoch": 1, "backend": "reference"}
    assert int(moments["__step__"]) == 1
    assert {k.rsplit("/", 1)[1] for k in moments if k != "__step__"} == {"exp_avg", "exp_avg_sq"}
    key = "decoder.head.weight/exp_avg"
    np.testing.assert_array_equal(
        moments[key], opt.state[model.module.decoder.head.weight]["exp_avg"].numpy()
    )


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointNotFound):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_dice_loss_gradient_matches_finite_differences():
    torch.manual_seed(0)
    model = build_model(ArchitectureSpec("REFERENCE_TINY", "REFERENCE", 16), seed=0)
    model.to(torch.float64).train()
    x = torch.randn(1, 3, 16, 16, dtype=torch.float64)
    t = (torch.rand(1, 1, 16, 16, dtype=torch.float64) > 0.6).to(torch.float64)

    def loss():
        return dice_loss(torch.sigmoid(model.module(x)), t)

    model.module.zero_grad()
    loss().backward()
    rng = np.random.default_rng(0)
    h = 1e-6
    worst = 0.0
    for p in model.module.parameters():
        flat = p.data.view(-1)
        grads = p.grad.view(-1)
        for idx in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
            old = flat[idx].item()
            with torch.no_grad():
                flat[idx] = old + h
                up = loss().item()
                flat[idx] = old - h
                down = loss().item()
                flat[idx] = old
            numeric = (up - down) / (2 * h)
            analytic = grads[idx].item()
            scale = max(abs(numeric), abs(analytic))
            if scale > 1e-7:
                worst = max(worst, abs(numeric - analytic) / scale)
    assert worst <= 1e-3
