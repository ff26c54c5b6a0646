"""Unsupervised adaptation of re-identification models in dynamic camera networks."""

__version__ = "0.1.0"

from .adapt import (
    LabeledView,
    SourceRanking,
    UnlabeledView,
    assemble_network_kernels,
    camera_pair_distance,
    common_best_source,
    discover_best_source,
    transitive_kernel,
)
from .dataio import (
    NetworkDataset,
    PCAReducer,
    Sample,
    Split,
    SplitSpec,
    fit_pca_reducer,
    load_dataset,
    make_splits,
    write_dataset,
)
from .evaluation import CmcCurve, ExperimentReport, cmc, compare_modes, match_rank, run_experiment
from .gfk import (
    GeodesicFlowKernel,
    Kernel,
    flow_decompose,
    geodesic_flow,
    gfk_closed_form,
    gfk_quadrature_oracle,
    kernel_distance,
)
from .metric import KISSME, LDML, Metric, PairSet, build_pairs, kissme_fit, ldml_fit, mahalanobis, psd_clip
from .subspace import (
    PCASubspace,
    PLSSubspace,
    Subspace,
    orthogonal_complement,
    pca_subspace,
    pls_subspace,
    principal_angles,
)
from .synth import GroundTruth, SynthConfig, generate_network
