"""Single-file weight archives.

A checkpoint is a zip archive holding

* ``config.txt`` - the ModelConfig as ``key = value`` lines,
* ``meta.txt`` - optional ``key = value`` training metadata,
* ``tensors/<name>.npy`` - one NumPy ``.npy`` file per state-dict entry
  (the format records dtype, shape and row-major data).

Nothing in it is pickled, so other languages can read it.
"""
from __future__ import annotations

import io
import os
import zipfile
from pathlib import Path

import numpy as np
import torch

from ..core import ParseError, parse_config_text, format_config
from .network import DeepTriNet

_PREFIX = "tensors/"


def save_checkpoint(model: DeepTriNet, path: str | Path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.txt", format_config(model.config))
        if meta:
            zf.writestr("meta.txt", "".join(f"{k} = {v}\n" for k, v in meta.items()))
        for name, tensor in model.state_dict().items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
            zf.writestr(_PREFIX + name + ".npy", buf.getvalue())
    os.replace(tmp, path)
    return path


def read_meta(path: str | Path) -> dict[str, str]:
    with zipfile.ZipFile(path) as zf:
        if "meta.txt" not in zf.namelist():
            return {}
        text = zf.read("meta.txt").decode("utf-8")
    return dict((s.strip() for s in line.split("=", 1)) for line in text.splitlines() if "=" in line)


def load_checkpoint(path: str | Path) -> DeepTriNet:
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile:
        raise ParseError(f"{path} is not a checkpoint archive") from None
    with zf:
        cfg, _ = parse_config_text(zf.read("config.txt").decode("utf-8"))
        state = {}
        for name in zf.namelist():
            if name.startswith(_PREFIX) and name.endswith(".npy"):
                arr = np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
                state[name[len(_PREFIX):-4]] = torch.from_numpy(arr)
    model = DeepTriNet(cfg)
    model.load_state_dict(state)
    model.eval()
    return model
