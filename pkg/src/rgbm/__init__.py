"""Reallocating geometric Brownian motion: wealth simulation, mobility
measures and mixing diagnostics."""

from rgbm.copula import (
    GumbelParam,
    copula_transition_matrix,
    fit_theta,
    gumbel_cdf,
    gumbel_sample,
)
from rgbm.core import (
    ModelParams,
    NoStationaryDistributionError,
    SimulationDiverged,
    StationaryDistribution,
    WealthPanel,
    WealthState,
    em_step,
    rescale,
    simulate,
    stationary_cdf,
    stationary_pdf,
    stationary_sample,
    zeta_of,
)
from rgbm.mixing import (
    BetaCurve,
    FitRefused,
    HistogramSpec,
    RelaxationFit,
    beta_curve,
    fit_relaxation,
    mixing_index,
    select_typical_subsample,
    significance_onset,
    theoretical_relaxation_time,
    tvd,
)
from rgbm.mobility import (
    CrossSectionPair,
    TransitionMatrix,
    ige,
    rank_transform,
    spearman,
    transition_matrix,
)

__version__ = "0.1.0"
