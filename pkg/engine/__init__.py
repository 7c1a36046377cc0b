from .rngchan import (
    ChannelModel,
    NoiseSpec,
    Purpose,
    StreamKey,
    derive_stream,
    fading_moments,
    sample_awgn,
    sample_fading,
    stream_for,
    tail_prob_beta,
)
from .datamod import (
    ClientShard,
    Dataset,
    QuadraticProblem,
    gen_quadratic_problem,
    gen_synthetic_classification,
    load_csv_dataset,
    partition_dirichlet,
)
from .models import ModelSpec, constants, grad, local_minimize, loss
from .fedcore import (
    AggregationScheme,
    LocalConfig,
    LrSchedule,
    RoundRecord,
    TrainingSetup,
    run_training,
)
from .metrics import ConstantEstimates, estimate_constants


__all__ = [
    # Random streams and channels
    "ChannelModel",
    "NoiseSpec",
    "Purpose",
    "StreamKey",
    "derive_stream",
    "fading_moments",
    "sample_awgn",
    "sample_fading",
    "stream_for",
    "tail_prob_beta",
    # Data
    "ClientShard",
    "Dataset",
    "QuadraticProblem",
    "gen_quadratic_problem",
    "gen_synthetic_classification",
    "load_csv_dataset",
    "partition_dirichlet",
    # Models
    "ModelSpec",
    "constants",
    "grad",
    "local_minimize",
    "loss",
    # Training
    "AggregationScheme",
    "LocalConfig",
    "LrSchedule",
    "RoundRecord",
    "TrainingSetup",
    "run_training",
    # Estimation
    "ConstantEstimates",
    "estimate_constants",
]
