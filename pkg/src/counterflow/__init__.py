"""counterflow: two-phase guided sampling for two-condition flow models.

The engine composes guided velocities (vanilla CFG, decomposed video/text
guidance, negative text prompting) over any velocity backend, integrates
them with deterministic Euler sampling, and is verified end to end against
an analytic Gaussian-mixture world.  Replacement metrics, an experiment
harness, and a binary wire protocol for remote backends round it out.
"""

from .backend import F32BoundaryBackend, FieldBackend, VelocityBackend, VelocityBatch, VelocityRequest
from .core import (
    ConditionId,
    ConditionPair,
    GuidanceWeights,
    TimestepGrid,
    init_latent,
    null_text,
    null_video,
    uniform_grid,
)
from .gmm import (
    GMMBackend,
    MixtureComponent,
    SceneRegistry,
    classify_identity,
    conditional_mixture,
    default_scene,
    load_scene,
    marginal_velocity,
    sample_data,
)
from .guidance import (
    DECOMPOSED,
    NEGATIVE_TEXT,
    UNGUIDED,
    VANILLA_CFG,
    GuidanceSpec,
    PhaseSchedule,
    compose_decomposed,
    compose_negative,
    compose_vanilla,
    guided_velocity,
    select_spec,
)
from .kernels import KERNEL_IMPL
from .metrics import (
    DeltaRecord,
    FrameScoreMatrix,
    delta_flam,
    envelope_alignment,
    pool_max,
    positive_ratio,
    score_clip,
)
from .sampler import Trajectory, euler_sample

__version__ = "0.1.0"
