from initialize_app.config import (
    DataConfig,
    OptimConfig,
    PointPipeline,
    SubnetConfig,
    SupervisionMode,
    SymmetryConfig,
    TrainConfig,
    ViewConfig,
    dump_config,
    load_config,
)
from initialize_app.runtime import create_run_dir, prepare_runtime
