"""Quantum state reconstruction from on/off (click / no-click) photodetection."""

from .bipartite import (
    build_b_matrix,
    em_reconstruct_joint,
    fisher_variances_joint,
    flat_index,
    pair_index,
)
from .detection import (
    BipartiteClickData,
    EfficiencyGrid,
    OffFrequencyData,
    bernoulli_smear,
    bipartite_off_probabilities,
    design_matrix,
    multithermal_onoff_stats,
    off_probability,
    simulate_bipartite_clicks,
    simulate_clicks,
)
from .em import (
    EmConfig,
    ReconstructionReport,
    em_reconstruct,
    em_step,
    error_parameter,
    fidelity,
    fisher_variances,
    log_likelihood,
)
from .estimators import DensityMatrixTomography, JointPhotonNumberEM, PhotonNumberEM
from .exceptions import (
    DegenerateModelError,
    DomainError,
    IllConditionedError,
    OnOffError,
    ParseError,
    ValidationError,
)
from .full_rho import (
    PhaseScanData,
    displaced_fock_probabilities,
    fourier_components,
    g_matrix,
    g_matrix_eta,
    pseudo_inverse,
    reconstruct_density_matrix,
)
from .states import (
    DensityMatrix,
    JointPhotonDistribution,
    PhotonDistribution,
    bs_superposition_joint,
    coherent_density_matrix,
    coherent_distribution,
    multithermal_joint,
    thermal_density_matrix,
    thermal_distribution,
)

__all__ = [
    "BipartiteClickData",
    "DegenerateModelError",
    "DensityMatrix",
    "DensityMatrixTomography",
    "DomainError",
    "EfficiencyGrid",
    "EmConfig",
    "IllConditionedError",
    "JointPhotonDistribution",
    "JointPhotonNumberEM",
    "OffFrequencyData",
    "OnOffError",
    "ParseError",
    "PhaseScanData",
    "PhotonDistribution",
    "PhotonNumberEM",
    "ReconstructionReport",
    "ValidationError",
    "bernoulli_smear",
    "bipartite_off_probabilities",
    "bs_superposition_joint",
    "build_b_matrix",
    "coherent_density_matrix",
    "coherent_distribution",
    "design_matrix",
    "displaced_fock_probabilities",
    "em_reconstruct",
    "em_reconstruct_joint",
    "em_step",
    "error_parameter",
    "fidelity",
    "fisher_variances",
    "fisher_variances_joint",
    "flat_index",
    "fourier_components",
    "g_matrix",
    "g_matrix_eta",
    "log_likelihood",
    "multithermal_joint",
    "multithermal_onoff_stats",
    "off_probability",
    "pair_index",
    "pseudo_inverse",
    "reconstruct_density_matrix",
    "simulate_bipartite_clicks",
    "simulate_clicks",
    "thermal_density_matrix",
    "thermal_distribution",
]

__version__ = "0.1.0"
