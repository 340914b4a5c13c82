"""Second-order training for fully-connected networks with block-diagonal
positive-curvature Hessian approximations and matrix-free Newton solvers."""

from .curvature import (
    CurvatureKind,
    ErrorReport,
    LayerCurvature,
    covariance_bound_check,
    ea_curvature,
    layerwise_error,
    true_bias_hessian,
)
from .data import Dataset, load_csv, load_idx, synth_blobs
from .errors import (
    BlockNewtonError,
    ConfigError,
    DimensionError,
    NumericalBreakdownError,
    TrainingDivergedError,
)
from .fcnn import (
    Activation,
    CrossEntropySoftmax,
    FcnnModel,
    ForwardTrace,
    LayerGradients,
    SigmoidGate,
    backprop,
    criterion_batch,
    criterion_eval,
    forward,
)
from .linalg import (
    EigenDecomposition,
    LinearOperator,
    cg_solve,
    kron_apply,
    pos_eig,
    sym_eig,
)
from .solvers import (
    HvpMode,
    NewtonDirection,
    PiPolicy,
    SolverConfig,
    ea_cg_direction,
    kfi_direction,
    sherman_morrison_apply,
)
from .trainer import (
    SecondOrderSpec,
    SolverChoice,
    TrainConfig,
    TrainReport,
    grid_search,
    train,
)

__version__ = "0.1.0"
