"""Near-field array sensing with per-antenna visibility detection.

Simulates spherical-wavefront, spatially non-stationary uplink observations
of a large linear array under partial blockage, jointly estimates channel
parameters and per-antenna visibility with an alternating optimizer under a
clustered-sparsity prior, and benchmarks against fixed-amplitude baselines.
"""

from .ao import AOConfig, AOState, KnownConstants, QpProblem, default_init, objective, run_ao
from .bench import MCReport, rmse, run_baseline, run_campaign, vr_metrics
from .extract import EstimationResult, MleGrid, extract_result, fit_path, positions, unpack
from .ising import IsingParams, default_chain_params, energy_gap, ising_energy
from .model import (
    ArrayGeometry,
    OfdmConfig,
    PathParams,
    StackedModel,
    antenna_distance,
    build_stacked_model,
    permutation_between_stackings,
    steering_vector,
)
from .synth import ObservationSet, SceneConfig, SnSField, VRIndicator, realize_sns, realize_vr, set_snr, synthesize

__version__ = "0.1.0"
