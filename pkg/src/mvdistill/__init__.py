"""Likelihood-distillation engine with mirror and grid multi-view gradients.

A numpy library that optimizes pluggable differentiable generators
against score functions: analytic Gaussian/mixture oracles for desk-
scale verification, or an external denoiser behind a newline-delimited
JSON wire protocol.
"""

from .backend import (
    BackendScoreFn,
    ScoreBackendClient,
    backend_score,
    connect_backend,
    decode_f32,
    encode_f32,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config, parse_config_dict, serialize_config
from .distill import (
    DEFAULT_RANK_WEIGHTS,
    DistillStepConfig,
    RankWeights,
    StepResult,
    grid_assemble,
    grid_ld_step,
    grid_scatter,
    ld_seed,
    mirror_ld_step,
    rank_weigh,
    sds_gradient,
)
from .errors import (
    BackendError,
    BackendFrameError,
    ConfigError,
    DegenerateTimestepError,
    DimensionError,
    EngineError,
    IdMismatchError,
    IntegrityError,
    NonFiniteGradientError,
    NumericError,
    PayloadDecodeError,
    ShapeMismatchError,
    TimestepOutOfRangeError,
    TransportError,
    UnsupportedModeError,
)
from .generators import (
    DirectImageGenerator,
    Generator,
    GeneratorParams,
    Pose,
    RenderOutput,
    SymmetricToyGenerator,
    flip_horizontal,
    make_generator,
    mirror_pose,
    sample_grid_poses,
    sample_latent,
    sample_pose,
    upsample_sr,
    upsample_sr_adjoint,
)
from .gradcheck import gradient_check, max_rel_err
from .rng import DrawStreams
from .schedule import (
    NoiseSchedule,
    TimestepRange,
    build_schedule,
    forward_diffuse,
    sample_timestep,
)
from .scores import (
    GaussianScoreOracle,
    GmmScoreOracle,
    ScoreRequest,
    cfg_combine,
    eps_to_score,
    gaussian_score,
    gmm_score,
    score_to_eps,
)
from .trainer import AdamState, RunReport, adam_update, init_adam, phase_sequence, run, run_digest

__version__ = "0.1.0"
