"""Sparse elevation reconstruction for multi-baseline tomographic SAR.

Classical per-pixel compressed-sensing solvers (OMP, IHT, ISTA) and an
unrolled thresholding network whose weight matrix is precomputed in closed
form while per-layer step/threshold scalars are learned from data; plus a
synthetic scene simulator, trainer, evaluation metrics, and a CLI pipeline.
"""

__version__ = "0.1.0"

from .alista import (
    AlistaModel,
    AnalyticWeights,
    TrainConfig,
    alista_forward,
    compute_analytic_weights,
    sweep_layers,
    train,
)
from .config import ConfigError, RunConfig, load_config
from .evaluate import (
    BenchReport,
    NmseReport,
    PointCloud,
    benchmark,
    make_solver,
    nmse_db,
    to_point_cloud,
)
from .model import (
    AcquisitionGeometry,
    ElevationGrid,
    SteeringMatrix,
    build_steering_matrix,
    forward,
    spatial_frequency,
)
from .scene import (
    Labeling,
    PixelSample,
    SampleSet,
    SceneSpec,
    SelectionCriteria,
    add_noise,
    build_sample_set,
    generate_scene,
    select_cs_labels,
)
from .solvers import (
    GreedyConfig,
    IstaConfig,
    SolveResult,
    iht_solve,
    ista_solve,
    largest_gram_eigenvalue,
    omp_solve,
    soft_threshold,
)
