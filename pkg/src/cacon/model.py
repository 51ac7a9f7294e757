"""Encoder, projection head, linear classifier, and checkpoint I/O.

The encoder is a dense ReLU stack ending at the representation h; the
projection head is exactly three dense layers with ReLU between them and none
after the last, ending at the contrastive embedding z. Fine-tuning and every
evaluation protocol consume h; z exists only for the contrastive losses.

Parameters are He-uniform initialized (limit sqrt(6 / fan_in)) with zero
biases, snapped to the float32 grid so stored checkpoints reproduce the
in-memory values bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as rngmod
from .autodiff import Tape, Tensor, bias_add, matmul, relu, tensor
from .errors import ConfigError, FormatError, ShapeError
from .tensorfile import read_tensor, write_tensor

HEAD_DEPTH = 3


@dataclass
class ModelConfig:
    """Architecture settings (the model config section)."""

    encoder_widths: list = field(default_factory=lambda: [256, 128])
    d_h: int = 64
    d_z: int = 32

    def validate(self) -> None:
        if not self.encoder_widths or any(w < 1 for w in self.encoder_widths):
            raise ConfigError(
                f"model.encoder_widths must be positive ints, "
                f"got {self.encoder_widths}"
            )
        if self.d_h < 1 or self.d_z < 1:
            raise ConfigError(
                f"model.d_h and model.d_z must be >= 1, got "
                f"{self.d_h}, {self.d_z}"
            )


def _he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return w.astype(np.float32).astype(np.float64)


def encoder_dims(cfg: ModelConfig, input_dim: int) -> list:
    return [input_dim, *cfg.encoder_widths, cfg.d_h]


def head_dims(cfg: ModelConfig) -> list:
    return [cfg.d_h, cfg.d_h, cfg.d_h, cfg.d_z]


def init_params(cfg: ModelConfig, input_dim: int, seed: int) -> dict:
    """Seeded encoder + head parameters, keyed by stable layer names."""
    cfg.validate()
    if input_dim < 1:
        raise ConfigError(f"input_dim must be >= 1, got {input_dim}")
    params: dict[str, Tensor] = {}
    dims = encoder_dims(cfg, input_dim)
    for i in range(len(dims) - 1):
        r = rngmod.stream(seed, rngmod.INIT, 0, i)
        params[f"encoder.{i}.w"] = tensor(_he_uniform(r, dims[i], dims[i + 1]))
        params[f"encoder.{i}.b"] = tensor(np.zeros(dims[i + 1]))
    hdims = head_dims(cfg)
    for i in range(HEAD_DEPTH):
        r = rngmod.stream(seed, rngmod.INIT, 1, i)
        params[f"head.{i}.w"] = tensor(_he_uniform(r, hdims[i], hdims[i + 1]))
        params[f"head.{i}.b"] = tensor(np.zeros(hdims[i + 1]))
    return params


def init_classifier(d_h: int, n_classes: int, rng: np.random.Generator) -> dict:
    """Linear classifier over h: one weight matrix and one bias row."""
    if n_classes < 2:
        raise ConfigError(f"classifier needs >= 2 classes, got {n_classes}")
    return {
        "classifier.w": tensor(_he_uniform(rng, d_h, n_classes)),
        "classifier.b": tensor(np.zeros(n_classes)),
    }


def _dense_stack(x: Tensor, params: dict, prefix: str, n_layers: int,
                 tape: Optional[Tape]) -> Tensor:
    """Dense layers with ReLU between them and none after the last."""
    out = x
    for i in range(n_layers):
        out = bias_add(matmul(out, params[f"{prefix}.{i}.w"], tape),
                       params[f"{prefix}.{i}.b"], tape)
        if i + 1 < n_layers:
            out = relu(out, tape)
    return out


def _count_layers(params: dict, prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.w" in params:
        n += 1
    return n


def encode(x: Tensor, params: dict, tape: Optional[Tape] = None) -> Tensor:
    """Batch of flattened images -> representation rows h."""
    n = _count_layers(params, "encoder")
    if n == 0:
        raise ShapeError("params hold no encoder layers")
    return _dense_stack(x, params, "encoder", n, tape)


def project(h: Tensor, params: dict, tape: Optional[Tape] = None) -> Tensor:
    """Representation rows h -> contrastive embedding rows z."""
    if _count_layers(params, "head") != HEAD_DEPTH:
        raise ShapeError(f"projection head must have exactly {HEAD_DEPTH} layers")
    return _dense_stack(h, params, "head", HEAD_DEPTH, tape)


def classify(h: Tensor, clf: dict, tape: Optional[Tape] = None) -> Tensor:
    """Representation rows h -> class logits."""
    return bias_add(matmul(h, clf["classifier.w"], tape), clf["classifier.b"], tape)


def flatten_images(pixel_arrays) -> np.ndarray:
    """Stack (h, w, 3) pixel cubes into a row-major (n, h*w*3) matrix."""
    return np.stack([np.asarray(p, dtype=np.float64).reshape(-1)
                     for p in pixel_arrays])


def center_inputs(x: np.ndarray) -> np.ndarray:
    """Map [0,1] pixel rows to [-1,1].

    All-positive rows are nearly parallel, so a relu stack projects them to
    almost identical embeddings and contrastive training starts at the
    collapsed plateau; centering removes the shared DC component.
    """
    return x * 2.0 - 1.0


# ---------------------------------------------------------------------------
# checkpoints

def params_digest(params: dict) -> str:
    """sha256 over name-ordered float32 parameter bytes."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].data.astype("<f4").tobytes())
    return h.hexdigest()


def save_checkpoint(out_dir, params: dict, meta: dict) -> None:
    """One CTNS file per parameter plus a metadata.json sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, t in params.items():
        write_tensor(out / f"{name}.ctns", t.data.astype(np.float32))
    doc = dict(meta)
    doc["param_names"] = sorted(params)
    doc["params_digest"] = params_digest(params)
    with open(out / "metadata.json", "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(ckpt_dir) -> tuple[dict, dict]:
    """Read back (params, metadata). Verifies the stored parameter digest."""
    ckpt = Path(ckpt_dir)
    meta_path = ckpt / "metadata.json"
    if not meta_path.exists():
        raise FormatError(f"checkpoint metadata missing: {meta_path}")
    with open(meta_path) as f:
        meta = json.load(f)
    params = {}
    for name in meta.get("param_names", []):
        p = ckpt / f"{name}.ctns"
        if not p.exists():
            raise FormatError(f"checkpoint tensor missing: {p}")
        params[name] = tensor(read_tensor(p).astype(np.float64))
    digest = params_digest(params)
    if digest != meta.get("params_digest"):
        raise FormatError(
            f"checkpoint digest mismatch in {ckpt}: tensors do not match "
            f"metadata"
        )
    return params, meta
