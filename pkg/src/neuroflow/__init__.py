"""Communication-flow estimation on sensor graphs.

Node time series are modeled with a lagged graph diffusion recursion
whose coupling term induces an edge flow; the flow is analyzed by
gradient/rotational decomposition and broadcaster localization.
"""

__version__ = "0.1.0"

from .broadcaster import (
    BroadcastReport,
    DirectedFlowGraph,
    adr,
    broadcast_distances,
    broadcast_report,
    broadcaster_location,
    flow_to_directed_adjacency,
    locate_session_broadcaster,
)
from .estimation import (
    EvalReport,
    FitConfig,
    SessionEval,
    assemble_ls_system,
    demean,
    evaluate_session,
    fit,
    fit_no_flow,
    fit_session_model,
    improvement,
    normal_equations,
    rmse_per_step,
    session_latency_flow,
    split_train_test,
    stimulus_windows,
    t_test_one_sample,
    t_test_paired,
    training_error,
)
from .hodge import (
    GradientModeBasis,
    HodgeDecomposition,
    gradient_mode_basis,
    hodge_decompose,
    lowpass_gradient,
    reconstruct_potential,
)
from .kernels import BACKEND
from .model import (
    DiffusionModel,
    EdgeFlowSeries,
    SimulationError,
    compute_flow,
    flow_series,
    load_model,
    physical_flow,
    predict_one_step,
    save_model,
    simulate,
    stability_radius,
)
from .session import Block, SessionDataset, Trial, read_session, scale_session, write_session
from .synth import SynthConfig, generate_session, random_stable_model
from .topology import (
    GraphTopology,
    TopologyError,
    build_knn_graph,
    divergence,
    gradient,
    grid_graph,
    grid_locations,
    incidence,
    load_topology,
    node_laplacian,
    save_topology,
    topology_from_edges,
)
