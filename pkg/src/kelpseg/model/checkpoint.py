"""Checkpoint container.

A checkpoint is a ZIP archive with these members, written in this order::

    format.json       {"format": "kelpseg-checkpoint", "version": 1}
    spec.json         ArchitectureSpec.to_dict()
    parameters.json   [{"name", "shape", "dtype", "group"}, ...] for every state entry
    parameters.npz    module state_dict as numpy arrays (parameters and buffers)
    state.json        training metadata: epoch, metrics, backend, config
    optimizer.npz     optional; per-parameter moments "<name>/<slot>" plus "__step__"

Members carry a fixed timestamp so identical models give identical bytes.
"""

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from ..exceptions import CheckpointNotFound
from .backends import ENCODER_PREFIX, build_model
from .spec import ArchitectureSpec

FORMAT_NAME = "kelpseg-checkpoint"
FORMAT_VERSION = 1
MEMBERS = ("format.json", "spec.json", "parameters.json", "parameters.npz", "state.json")
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _json_bytes(obj):
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _npz_bytes(arrays):
    # np.savez stamps members with the wall clock; write them by hand instead
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asarray(arr), allow_pickle=False)
            _write(zf, f"{name}.npy", member.getvalue(), zipfile.ZIP_STORED)
    return buf.getvalue()


def _write(zf, name, data, compress_type=zipfile.ZIP_DEFLATED):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = compress_type
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def optimizer_moments(model, optimizer):
    """Flatten torch optimizer state into ``{"<param name>/<slot>": array}``."""
    names = {id(p): n for n, p in model.module.named_parameters()}
    arrays, step = {}, 0
    for param, state in optimizer.state.items():
        name = names.get(id(param))
        if name is None:
            continue
        for slot, value in state.items():
            if slot == "step":
                step = int(value)
            elif torch.is_tensor(value):
                arrays[f"{name}/{slot}"] = value.detach().cpu().numpy()
    arrays["__step__"] = np.asarray(step, dtype=np.int64)
    return arrays


def load_optimizer_moments(model, optimizer, arrays):
    params = dict(model.module.named_parameters())
    step = int(arrays.get("__step__", 0))
    for key, value in arrays.items():
        if key == "__step__":
            continue
        name, slot = key.rsplit("/", 1)
        state = optimizer.state[params[name]]
        state[slot] = torch.as_tensor(value).to(params[name].device)
        state.setdefault("step", torch.tensor(float(step)))


def save_checkpoint(path, model, state=None, optimizer=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().cpu().numpy() for k, v in model.module.state_dict().items()}
    param_names = {n for n, _ in model.module.named_parameters()}
    listing = [
        {
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "group": (
                "buffer"
                if name not in param_names
                else "encoder"
                if name.startswith(ENCODER_PREFIX)
                else "decoder"
            ),
        }
        for name, arr in tensors.items()
    ]
    meta = dict(state or {})
    meta.setdefault("backend", model.backend_name)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _write(zf, "format.json", _json_bytes({"format": FORMAT_NAME, "version": FORMAT_VERSION}))
        _write(zf, "spec.json", _json_bytes(model.spec.to_dict()))
        _write(zf, "parameters.json", _json_bytes(listing))
        _write(zf, "parameters.npz", _npz_bytes(tensors))
        _write(zf, "state.json", _json_bytes(meta))
        if optimizer is not None:
            _write(zf, "optimizer.npz", _npz_bytes(optimizer_moments(model, optimizer)))
    tmp.replace(path)
    return path


def read_checkpoint(path):
    """Return ``(spec, tensors, state, optimizer_arrays_or_None)`` without building a model."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointNotFound(f"no checkpoint at {path}")
    with zipfile.ZipFile(path) as zf:
        fmt = json.loads(zf.read("format.json"))
        if fmt.get("format") != FORMAT_NAME or fmt.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {fmt}")
        spec = ArchitectureSpec.from_dict(json.loads(zf.read("spec.json")))
        with np.load(io.BytesIO(zf.read("parameters.npz"))) as npz:
            tensors = {k: npz[k] for k in npz.files}
        state = json.loads(zf.read("state.json"))
        opt = None
        if "optimizer.npz" in zf.namelist():
            with np.load(io.BytesIO(zf.read("optimizer.npz"))) as npz:
                opt = {k: npz[k] for k in npz.files}
    return spec, tensors, state, opt


def load_checkpoint(path, *, backend=None):
    """Rebuild the model stored at ``path``; returns ``(model, state)``."""
    spec, tensors, state, _ = read_checkpoint(path)
    dtype = torch.float64 if any(a.dtype == np.float64 for a in tensors.values()) else torch.float32
    model = build_model(spec, backend=backend or state.get("backend"), dtype=dtype)
    model.module.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return model.eval(), state
