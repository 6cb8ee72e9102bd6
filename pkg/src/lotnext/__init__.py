"""Long-tail adjusted next point-of-interest prediction."""

from .data import (
    CheckIn,
    CheckinFormatError,
    Dataset,
    EmptyDatasetError,
    FrequencyTable,
    SequenceWindow,
    SyntheticConfig,
    Trajectory,
    build_frequency_table,
    generate_synthetic,
    load_dataset,
    parse_checkins,
    preprocess,
    save_dataset,
    time_slot_of,
)
from .estimator import LoTNextEstimator
from .evaluate import (
    MetricsReport,
    StratifiedReport,
    accuracy_at_k,
    compute_metrics,
    export_embeddings,
    mrr,
    stratified_metrics,
)
from .graphs import (
    GraphAdjustment,
    InteractionGraph,
    TransitionGraph,
    build_interaction_graph,
    build_transition_graph,
    denoise,
    fuse_poi_embeddings,
    gcn_embed,
    score_edges,
)
from .losses import (
    JointLossWeights,
    LossConfig,
    adaptive_sample_weights,
    aux_time_loss,
    cross_entropy,
    logit_adjustment_factors,
    lta_loss,
)
from .model import ForwardOutput, LoTNextNet, ModelConfig, spatial_context_attention
from .spatial import GeoPoint, SpatialParams, haversine, haversine_km, pair_weight
from .train import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    TrainingDivergedError,
    TrainReport,
    score_windows,
    train,
)

__version__ = "0.1.0"
