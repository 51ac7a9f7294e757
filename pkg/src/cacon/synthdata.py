"""Synthetic cross-age dataset with a ground-truth age transform.

Each subject is a fixed unit latent u in R^k. An image of that subject at a
given age renders as clamp(0.5 + 0.5*tanh(W_id @ u + W_age @ phi(age) + eps))
with phi a smooth 4-dim age encoding and eps iid Gaussian pixel noise. The
oracle age transform re-renders the SAME u at the target group's midpoint age
with fresh noise, which is exactly the "ideal synthesis model" the third
contrastive view assumes.

Amplitudes default so that age is a strong nuisance factor in pixel space
(cross-age nearest-neighbor lookup on raw pixels degrades clearly against
within-age lookup) while identity stays recoverable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .augment import AGE_GROUP_YEARS, AgeTransform, Image, group_midpoint
from .errors import ConfigError, DomainError, MissingImageError
from .manifest import SubjectRecord, write_manifest
from .tensorfile import write_tensor


@dataclass
class SynthSpec:
    """Generator settings (the data.synth config section)."""

    n_subjects: int = 200
    images_per_subject: int = 10
    image_side: int = 16
    n_age_groups: int = 8
    latent_dim: int = 16
    identity_scale: float = 0.60
    age_scale: float = 2.0
    noise_std: float = 0.05
    test_age_groups: list = field(default_factory=lambda: [6, 7])
    subject_id_offset: int = 0

    @property
    def max_age(self) -> int:
        return self.n_age_groups * AGE_GROUP_YEARS

    def validate(self) -> None:
        if self.n_subjects < 1:
            raise ConfigError(f"synth.n_subjects must be >= 1, got {self.n_subjects}")
        if self.images_per_subject < 2:
            raise ConfigError(
                "synth.images_per_subject must be >= 2 so every subject can "
                f"span two age groups, got {self.images_per_subject}"
            )
        if self.image_side < 2:
            raise ConfigError(f"synth.image_side must be >= 2, got {self.image_side}")
        if self.n_age_groups < 2:
            raise ConfigError(
                f"synth.n_age_groups must be >= 2, got {self.n_age_groups}"
            )
        if self.latent_dim < 1:
            raise ConfigError(f"synth.latent_dim must be >= 1, got {self.latent_dim}")
        if self.noise_std < 0:
            raise ConfigError(f"synth.noise_std must be >= 0, got {self.noise_std}")
        if self.identity_scale <= 0 or self.age_scale < 0:
            raise ConfigError(
                "synth.identity_scale must be > 0 and synth.age_scale >= 0, "
                f"got {self.identity_scale}, {self.age_scale}"
            )
        bad = [g for g in self.test_age_groups
               if not (0 <= int(g) < self.n_age_groups)]
        if bad:
            raise ConfigError(
                f"synth.test_age_groups entries out of range [0, "
                f"{self.n_age_groups}): {bad}"
            )
        if self.subject_id_offset < 0:
            raise ConfigError(
                f"synth.subject_id_offset must be >= 0, got "
                f"{self.subject_id_offset}"
            )


def age_encoding(age_years: float, max_age: float) -> np.ndarray:
    """Smooth 4-dim encoding: scaled age, one sine/cosine pair, quadratic."""
    if age_years < 0 or age_years > max_age:
        raise DomainError(
            f"age {age_years} outside the covered range [0, {max_age}]"
        )
    a = float(age_years) / float(max_age)
    return np.array([a, np.sin(np.pi * a), np.cos(np.pi * a), a * a])


def _render(w_id, w_age, u, age_years, noise_std, max_age, rng, side) -> np.ndarray:
    """Render one image; pixels are snapped to the float32 grid."""
    z = w_id @ u + w_age @ age_encoding(age_years, max_age)
    z = z + rng.standard_normal(z.shape) * noise_std
    px = np.clip(0.5 + 0.5 * np.tanh(z), 0.0, 1.0)
    return px.reshape(side, side, 3).astype(np.float32).astype(np.float64)


class SynthDataset:
    """Generated records, images, and the latent state behind them."""

    def __init__(self, spec: SynthSpec, seed: int, records, images,
                 subject_latents, w_id, w_age, name="synth"):
        self.spec = spec
        self.seed = seed
        self.records = records
        self.images = images
        self.subject_latents = subject_latents
        self.w_id = w_id
        self.w_age = w_age
        self.name = name

    def oracle_age_transform(self, image_ref: int, target_group: int,
                             rng: np.random.Generator) -> Image:
        """Re-render the subject behind image_ref at the target group midpoint.

        Fresh pixel noise is drawn from rng; the subject latent is reused, so
        only age (and noise) differ from the source image.
        """
        if image_ref is None or not (0 <= image_ref < len(self.records)):
            raise MissingImageError(
                f"image ref {image_ref} does not resolve to a generated image"
            )
        if not (0 <= target_group < self.spec.n_age_groups):
            raise DomainError(
                f"target age group {target_group} outside "
                f"[0, {self.spec.n_age_groups})"
            )
        rec = self.records[image_ref]
        u = self.subject_latents[rec.subject_id - self.spec.subject_id_offset]
        px = _render(self.w_id, self.w_age, u, group_midpoint(target_group),
                     self.spec.noise_std, self.spec.max_age, rng,
                     self.spec.image_side)
        return Image(px, image_ref)


class OracleAgeTransform(AgeTransform):
    """AgeTransform adapter over a SynthDataset's latent state."""

    def __init__(self, dataset: SynthDataset):
        self.dataset = dataset

    def transform(self, img: Image, target_group: int, rng: np.random.Generator) -> Image:
        return self.dataset.oracle_age_transform(img.ref, target_group, rng)


def generate(spec: SynthSpec, seed: int, name: str = "synth") -> SynthDataset:
    """Deterministically generate the dataset for (spec, seed).

    Streams are derived per subject, so generation could run subject-parallel
    without changing output. Each subject's ages are redrawn until they span
    at least two distinct age groups.
    """
    spec.validate()
    n_px = spec.image_side * spec.image_side * 3
    w_id = rngmod.stream(seed, rngmod.SYNTH, 0, 0).normal(
        0.0, spec.identity_scale, size=(n_px, spec.latent_dim))
    w_age = rngmod.stream(seed, rngmod.SYNTH, 0, 1).normal(
        0.0, spec.age_scale, size=(n_px, 4))

    records = []
    images = []
    latents = np.zeros((spec.n_subjects, spec.latent_dim))
    for subj in range(spec.n_subjects):
        srng = rngmod.stream(seed, rngmod.SYNTH, 1, subj)
        u = srng.standard_normal(spec.latent_dim)
        u = u / np.linalg.norm(u)
        latents[subj] = u
        while True:
            ages = srng.integers(0, spec.max_age, size=spec.images_per_subject)
            if len({int(a) // AGE_GROUP_YEARS for a in ages}) >= 2:
                break
        for j, age in enumerate(ages):
            idx = len(records)
            nrng = rngmod.stream(seed, rngmod.SYNTH, 2, subj, j)
            px = _render(w_id, w_age, u, float(age), spec.noise_std,
                         spec.max_age, nrng, spec.image_side)
            group = int(age) // AGE_GROUP_YEARS
            split = "test" if group in set(map(int, spec.test_age_groups)) else "finetune"
            records.append(SubjectRecord(
                subject_id=spec.subject_id_offset + subj, age=int(age),
                split=split, path=f"tensors/img_{idx:05d}.ctns"))
            images.append(px)
    return SynthDataset(spec, seed, records, images, latents, w_id, w_age, name)


def save_dataset(ds: SynthDataset, out_dir, config_hash: str) -> None:
    """Write manifest.csv, per-image CTNS tensors, and the oracle sidecar."""
    out = Path(out_dir)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    for rec, px in zip(ds.records, ds.images):
        write_tensor(out / rec.path, px.astype(np.float32))
    write_manifest(out / "manifest.csv", ds.records)
    meta = {
        "config_hash": config_hash,
        "seed": ds.seed,
        "synth": asdict(ds.spec),
    }
    with open(out / "dataset.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
