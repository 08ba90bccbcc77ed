"""Next-location prediction for crime series on a city grid.

Risk maps compose a trailing-window KDE background with a learned
triggering kernel over the series' prior offenses; parameters are fit with
a pairwise hinge ranking objective. Includes the four comparison baselines,
the held-out ranking protocol, and a seeded synthetic data generator.
"""

from .background import BackgroundField, eval_background, fit_background
from .baselines import (
    BaselineSpec,
    ablation_risk,
    ablation_values,
    background_window_risk,
    nearest_neighbor_risk,
    nearest_neighbor_values,
    series_kde_risk,
    series_kde_values,
    tune_baseline,
)
from .evaluation import (
    AblationKernelModel,
    BackgroundWindowModel,
    EvalContext,
    EvalReport,
    NearestNeighborModel,
    OracleModel,
    RandomRiskModel,
    SelfExcitingModel,
    SeriesKdeModel,
    emit_report,
    evaluate,
    resolution_sweep,
)
from .events import (
    CrimeInstance,
    EventStore,
    TestCase,
    ingest_events,
    prediction_time,
    read_events_csv,
    split_train_test,
    write_events_csv,
)
from .grid import (
    FeatureTable,
    GeoGrid,
    GeometryError,
    LandUseRecord,
    OutOfRegionError,
    aggregate_features,
    build_grid,
    grid_shape_for,
    load_land_use,
    load_stations,
    polygon_cell_overlap,
    standardize,
    write_feature_csv,
)
from .kernel import KernelParams, kernel_eval, kernel_grad, read_params, write_params
from .risk import RiskMap, rank_of_values, rank_true_cell, risk_cell, risk_map
from .synth import SynthSpec, gen_city, gen_events_and_series, write_synth_dataset
from .training import (
    TrainConfig,
    TrainData,
    full_objective,
    hinge_loss,
    prepare_training_data,
    sample_triple,
    sgd_step,
    train,
)

__version__ = "0.1.0"
