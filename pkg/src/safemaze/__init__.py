"""Risk-gated variable-impedance RL on a quasi-static planar contact maze."""

from .agents import (
    ActionMapper,
    GateConfig,
    MazeAgent,
    ObservationScaler,
    OuNoise,
    RecoveryPolicy,
    SacAgent,
    SafetyCritic,
    apply_ou_noise,
    q_risk_target,
    resolve_method,
)
from .controller import (
    Action,
    ControllerGains,
    StiffnessGains,
    controller_gains,
    damping_from_stiffness,
    impedance_force,
    project_stiffness,
)
from .env import (
    EnvConfig,
    EpisodeEvents,
    EpisodeOutcome,
    MazeEnv,
    PegState,
    SafetyObservation,
    TaskObservation,
    classify_termination,
    constraint,
    reward,
)
from .errors import (
    ConfigurationError,
    FormatError,
    NumericalError,
    SafemazeError,
    SimulationError,
)
from .geometry import MazeSpec, Obstacle, build_channel_maze, default_maze, load_maze, save_maze
from .harness import (
    EvalReport,
    ExperimentConfig,
    RunMetrics,
    export_metrics,
    run_collect,
    run_eval,
    run_pretrain,
    run_risk_probe,
    run_train,
)
from .offline import CollectorConfig, OfflineDataset, collect
from .replay import ReplayBuffer

__version__ = "0.1.0"
