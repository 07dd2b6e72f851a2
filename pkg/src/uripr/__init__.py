"""Universal reverse information projections, the e-statistics they induce,
and desk-scale experiments on their approximation."""

__version__ = "0.1.0"

from .divergence import (
    GainReport,
    description_gain,
    g_transform,
    gain_to_hull,
    itakura_saito,
    kl,
    mp_metric,
    three_point_bound,
)
from .evalue import (
    EStatistic,
    compare_strength,
    gro_value,
    make_estat,
    simulate_eprocess,
    type1_check,
    verify_estat,
)
from .measures import (
    UNDEFINED,
    FamilySpec,
    Grid,
    GridMeasure,
    MixtureWeights,
    ParametricFamily,
    integrate,
    make_family,
    make_measure,
    mix,
)
from .projection import brinda_bound, certify_projection, greedy_project

__all__ = [
    "UNDEFINED", "EStatistic", "FamilySpec", "GainReport", "Grid", "GridMeasure",
    "MixtureWeights", "ParametricFamily", "brinda_bound", "certify_projection",
    "compare_strength", "description_gain", "g_transform", "gain_to_hull", "greedy_project",
    "gro_value", "integrate", "itakura_saito", "kl", "make_estat", "make_family",
    "make_measure", "mix", "mp_metric", "simulate_eprocess", "three_point_bound",
    "type1_check", "verify_estat",
]
