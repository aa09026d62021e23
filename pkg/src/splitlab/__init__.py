"""Desk-scale split-inference lab: interception, VAE attack, evaluation."""

from .attack import (
    AttackConfig,
    generate_adversarial,
    gaussian_kl,
    interpolate,
    kl_to_prior,
    lerp,
    pairwise_distance,
    select_target,
    slerp,
)
from .channel import (
    ChannelTap,
    EavesdropDataset,
    collect,
    deserialize,
    read_capture,
    serialize,
    transmit,
    write_capture,
)
from .datasets import ImageDataset, load_dataset, make_synthetic
from .errors import (
    ChannelIntegrityError,
    ConfigurationError,
    DataError,
    PartitionError,
    ShapeError,
    SplitLabError,
    WireFormatError,
)
from .evaluation import (
    EvalPoint,
    EvalReport,
    accuracy,
    asr,
    budget_study,
    interpolation_study,
    mean_confidence,
    sweep,
)
from .feasibility import (
    ClusterReport,
    FeatureMatrix,
    activation_features,
    differentiability_study,
    elbow_select,
    kmeans,
    pool_to_common,
    project_3d,
    silhouette_score,
)
from .models import (
    ActivationTensor,
    ClassificationResult,
    LayerSpec,
    ModelPartition,
    ModelSpec,
    build_model,
    forward_full,
    forward_head,
    forward_tail,
    load_checkpoint,
    partition,
    save_checkpoint,
    train_model,
)
from .vae import (
    LatentCode,
    LatentPool,
    VaeConfig,
    VaeModel,
    decode,
    encode,
    fit_normalizer,
    load_latents,
    load_vae,
    save_latents,
    save_vae,
    train_vae,
)

__version__ = "0.1.0"
