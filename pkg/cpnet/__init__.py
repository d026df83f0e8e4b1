from cpnet.__version__ import __version__

PICKLE_PROTOCOL = 4

from cpnet.utils import (
    ShapeError,
    UnstableParameters,
    NonFiniteError,
    ConfigError,
    MeshError,
    StageFailure,
    SeedStreams,
    setup_logging,
)

from cpnet.ndtensor import (
    Tensor,
    Tape,
    AdamState,
    ExponentialDecay,
    ConstantRate,
    adam_step,
    backward,
)

from cpnet.cp_layers import (
    CpDenseParams,
    CpConvParams,
    CpConvBranch,
    CpMpParams,
    DenseParams,
    ConvParams,
    LayerNormParams,
    cp_dense_forward,
    cp_conv_forward,
    cp_mp_forward,
    dense_forward,
    conv_forward,
    save_parameters,
    load_parameters,
)

from cpnet.pde_lab import Trajectory, GridSpec

from cpnet.fv_graph import FvMesh, FvGraph, ScalingSpec, build_graph

from cpnet.cp_gnet import CpGnetConfig, CpGnet, GNet
