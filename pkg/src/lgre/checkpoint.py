"""Checkpoints: a text manifest plus one raw little-endian float64 blob per
named tensor, so the format stays readable without this library."""

import os

import numpy as np

from .autodiff import GruWeights, Tensor
from .config import FIELDS, TrainConfig, _coerce, config_to_dict
from .errors import IntegrityError
from .model import ModelParams

MANIFEST = "manifest.txt"


def save_checkpoint(ckpt_dir, params, cfg, vocab_sizes):
    """vocab_sizes: dict with entity/relation/timestamp/year/month/day counts."""
    os.makedirs(ckpt_dir, exist_ok=True)
    named = params.named()
    lines = ["format=lgre-checkpoint-1"]
    lines += [f"config.{k}={v}" for k, v in sorted(config_to_dict(cfg).items())]
    lines += [f"vocab.{k}={v}" for k, v in sorted(vocab_sizes.items())]
    for name, tensor in named.items():
        shape = ",".join(str(n) for n in tensor.shape)
        lines.append(f"tensor {name} {shape}")
        blob = np.ascontiguousarray(tensor.data, dtype="<f8")
        with open(os.path.join(ckpt_dir, name + ".f64"), "wb") as fh:
            fh.write(blob.tobytes())
    with open(os.path.join(ckpt_dir, MANIFEST), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return ckpt_dir


def load_checkpoint(ckpt_dir):
    """Returns (ModelParams, TrainConfig, vocab_sizes). Blob size or shape
    mismatches raise IntegrityError naming the offending tensor."""
    manifest = os.path.join(ckpt_dir, MANIFEST)
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no checkpoint manifest at {manifest}")
    cfg_values, vocab_sizes, tensor_shapes = {}, {}, {}
    with open(manifest, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("tensor "):
                _, name, shape = line.split(" ")
                tensor_shapes[name] = tuple(int(n) for n in shape.split(","))
            elif line.startswith("config."):
                key, _, raw = line[len("config."):].partition("=")
                if key in FIELDS:
                    cfg_values[key] = _coerce(key, raw)
            elif line.startswith("vocab."):
                key, _, raw = line[len("vocab."):].partition("=")
                vocab_sizes[key] = int(raw)

    cfg = TrainConfig(**cfg_values).validate()
    tensors = {}
    for name, shape in tensor_shapes.items():
        path = os.path.join(ckpt_dir, name + ".f64")
        if not os.path.exists(path):
            raise IntegrityError(f"checkpoint blob missing for tensor {name!r}")
        raw = np.fromfile(path, dtype="<f8")
        expected = int(np.prod(shape)) if shape else 1
        if raw.size != expected:
            raise IntegrityError(
                f"checkpoint tensor {name!r}: blob has {raw.size} values, "
                f"shape {shape} needs {expected}")
        tensors[name] = Tensor(raw.reshape(shape), requires_grad=True)

    required = ModelParams.init(1, 1, 1, 1, 1, dim=1, channels=1, kernel=1,
                                seed=0).named().keys()
    missing = set(required) - set(tensors)
    if missing:
        raise IntegrityError(f"checkpoint is missing tensors: {sorted(missing)}")

    gru = GruWeights(**{f: tensors[f"gru.{f}"]
                        for f in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")})
    params = ModelParams(dim=cfg.dim, channels=cfg.channels, kernel=cfg.kernel,
                         gru=gru,
                         **{k: v for k, v in tensors.items() if not k.startswith("gru.")})
    _check_geometry(params, cfg)
    return params, cfg, vocab_sizes


def _check_geometry(params, cfg):
    d, c, k = cfg.dim, cfg.channels, cfg.kernel
    expected_shapes = {
        "time_proj_w": (3 * d, d),
        "rel_proj_w": (2 * d, d),
        "gen_year": (d, c * k * k),
        "gen_month": (d, c * c * k * k),
        "gen_day": (d, c * c * k * k),
        "proj_year_w": (2 * c * d, d),
        "gate_year": (d, 1),
    }
    named = params.named()
    for name, shape in expected_shapes.items():
        if named[name].shape != shape:
            raise IntegrityError(
                f"checkpoint tensor {name!r} has shape {named[name].shape}, "
                f"config (dim={d}, channels={c}, kernel={k}) needs {shape}")
