import json

import numpy as np
import pytest

from cacon.config import RunConfig, parse_config
from cacon.pipeline import dataset_from_synth
from cacon.synthdata import SynthSpec, generate


@pytest.fixture(scope="session")
def tiny_synth():
    """Small dataset reused by pipeline-level tests: 8 subjects x 4 images."""
    spec = SynthSpec(n_subjects=8, images_per_subject=4, image_side=8,
                     test_age_groups=[6, 7])
    return generate(spec, seed=11, name="tiny")


@pytest.fixture(scope="session")
def tiny_dataset(tiny_synth):
    return dataset_from_synth(tiny_synth)


@pytest.fixture
def small_config():
    """Fast RunConfig matching the tiny dataset."""
    cfg = parse_config({
        "seed": 11,
        "data": {"synth": {"n_subjects": 8, "images_per_subject": 4,
                           "image_side": 8}},
        "optim": {"pretrain": {"base_lr": 0.5, "warmup_epochs": 1}},
        "pipeline": {"pretrain_epochs": 2, "finetune_epochs": 20,
                     "pretrain_batch_size": 16, "finetune_batch_size": 8,
                     "n_verification_pairs": 40},
    })
    return cfg


def write_config(tmp_path, doc):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def rngs():
    """Factory: rngs(n) yields n independent fixed-seed generators."""
    def make(n):
        return [np.random.default_rng(s) for s in range(n)]
    return make
