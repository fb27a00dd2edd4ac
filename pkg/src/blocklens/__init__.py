"""Two-block network structure inference with plain and degree-corrected
block models: generation, belief-propagation learning, likelihood
landscapes, classification, and temporal-aggregation experiments."""

from .generators import (
    AffinityMatrix,
    Bimodal,
    Constant,
    DegreeCorrections,
    PlantedSample,
    PowerLaw,
    bipartite_affinity,
    sample_dcsbm,
    sample_sbm,
    sample_thetas,
)
from .graphs import (
    Graph,
    SnapshotSeries,
    aggregate_cumulative,
    aggregate_window,
    degree_dispersion,
    density,
    symmetrize,
)
from .likelihood import (
    Assignment,
    asymptotic_L_bs,
    asymptotic_L_db,
    asymptotic_L_real,
    crossing_delta,
    exact_loglik,
)
from .bp import BpConfig, LearnedModel, bp_converge, em_learn, free_energy, restart_select
from .classify import StructureLabel, classify_affinity, normalize_affinity

__version__ = "0.1.0"
