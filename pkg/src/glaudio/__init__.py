"""Graph learning on wave-signal encodings.

Node features are propagated through the graph by the discrete wave equation
(a symplectic implicit-explicit integrator), and per-vertex signals are
decoded by trainable sequence models. Spectral oracles verify the encoder
and its expressivity/energy behavior on small graphs.
"""

import os as _os

# GLAUDIO_THREADS caps BLAS/OpenMP parallelism; must be set before numpy's
# first import, which happens when the submodules below load.
_threads = _os.environ.get("GLAUDIO_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from . import errors
from .graph import Graph, LaplacianOperator, LaplacianVariant, build_graph, build_operator
from .wave import WaveConfig, WaveSignal, propagate, propagate_adjoint, sample_step_function, node_sequence
from .spectral import (
    SpectralDecomposition,
    ReceptiveField,
    eigendecompose,
    exact_signal,
    exact_velocity,
    moment_sequence,
    compare_encodings,
    receptive_field,
    recover_projections,
    vertex_signal,
)
from .decoder import DecoderParams, GradientSet, init_params, forward, backward, cornn_step, parameter_count
from .training import TrainConfig, TrainReport, masked_cross_entropy, l1_loss, adam_step, AdamState, train, evaluate
from .data import GraphBundle, load_content_cites, save_bundle, load_bundle, make_splits, synth_sbm, synth_distance_task
from .analysis import (
    SweepResult,
    dirichlet_energy,
    encoder_convergence,
    energy_trace,
    fit_decay_rate,
    oversmoothing_metric,
    sensitivity,
    sweep_steps,
)
from .audio import export_wav, write_wav

__version__ = "0.1.0"
