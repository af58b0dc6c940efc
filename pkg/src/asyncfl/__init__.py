"""Asynchronous federated learning simulator with unbiased client reweighting."""

__version__ = "0.1.0"

from .data import DataShard, load_idx_dataset, shard_manifest, split_dataset
from .errors import (
    ConfigError,
    ContractError,
    DimensionMismatchError,
    IdxFormatError,
    NoProgressContact,
    NonFiniteError,
)
from .metrics import (
    MetricsRecord,
    check_potential_contraction,
    contraction_rate,
    evaluate,
    mean_model,
    model_variance,
    potential,
    read_metrics,
    write_metrics,
)
from .problems import LogisticProblem, MLPProblem, Problem, QuadraticProblem
from .protocols import (
    ClientState,
    FedBuffState,
    ServerState,
    client_local_step,
    favano_client_contact,
    favano_payload,
    favano_server_round,
    fedavg_round,
    fedbuff_step,
    fresh_client,
    quafl_round,
    reset_client,
)
from .reweighting import (
    DETERMINISTIC,
    STOCHASTIC,
    StepCountDistribution,
    alpha,
    clipped_geometric,
    complexity_bound,
    stopped_sum_mean_var,
    theorem_constants,
    theorem_step_size,
    unbiased_update,
)
from .rng import substream
from .simulate import (
    METHODS,
    ClockLedger,
    ProtocolRun,
    RunConfig,
    SpeedModel,
    assign_speeds,
    elapse_steps,
    round_duration,
    run_experiment,
    sample_selection,
)
