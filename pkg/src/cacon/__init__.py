"""Cross-age contrastive representation learning at desk scale."""

from .augment import (
    AgeTransform,
    AugmentConfig,
    AugmentedTriplet,
    IdentityAgeTransform,
    Image,
    age_group_of,
    color_distort,
    gaussian_blur,
    group_midpoint,
    make_triplet,
    random_crop_resize,
    stochastic_view,
)
from .autodiff import GradSet, Tape, Tensor, backward, tensor
from .config import RunConfig, config_hash, load_config, parse_config
from .errors import (
    CaconError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    DomainError,
    FormatError,
    ManifestError,
    MissingImageError,
    NumericsError,
    ProtocolError,
    RunFailure,
    ShapeError,
)
from .losses import (
    EmbeddingBatch,
    TripletBatch,
    adversarial_triplet_loss,
    batch_loss,
    batch_loss_pair,
    cosine_sim,
    nt_xent_pair,
    nt_xent_triplet,
    sim_matrix,
)
from .manifest import SubjectRecord, read_manifest, write_manifest
from .model import (
    ModelConfig,
    classify,
    encode,
    init_classifier,
    init_params,
    load_checkpoint,
    project,
    save_checkpoint,
)
from .optim import lars_step, lr_schedule, sgd_step
from .pipeline import (
    Dataset,
    EvalReport,
    dataset_from_synth,
    eval_identification,
    eval_verification,
    finetune_linear,
    load_dataset,
    make_verification_pairs,
    pretrain,
    run_cross_dataset,
    run_loio,
    unlabeled_view,
)
from .synthdata import OracleAgeTransform, SynthDataset, SynthSpec, generate
from .tensorfile import read_tensor, write_tensor

__version__ = "0.1.0"
