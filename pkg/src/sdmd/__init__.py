"""Stochastic dynamic mode decomposition toolkit."""

from . import core, dictionary, models, simulate
from .core import (
    GramPair,
    KoopmanApproximation,
    SpectralResult,
    assemble_data_matrices,
    convert_eigs,
    edmd_operator,
    eigenfunction_eval,
    gedmd_operator,
    gram,
    match_modes,
    operator_spectrum,
    sdmd_operator,
    spectrum,
)
from .dictionary import (
    FourierDictionary,
    GaussianRBFDictionary,
    HermiteDictionary,
    MonomialDictionary,
    generator_action,
    generator_action_deterministic,
    generator_action_second,
    make_dictionary,
)
from .models import NeuralMass, OrnsteinUhlenbeck, StuartLandau, StuartLandauCartesian, TripleWell, make_model
from .simulate import SamplerSpec, SnapshotEnsemble, generate_ensemble

__version__ = "0.1.0"
