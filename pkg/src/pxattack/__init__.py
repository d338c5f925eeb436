"""Black-box L-inf adversarial attacks with superpixel update areas."""

from .attack import (
    AreaQueue,
    AttackTrace,
    Segmenter,
    SlicConfig,
    UpdateArea,
    cw_loss,
    flip,
    linear_oracle,
    next_area,
    project,
    refill,
    versatile_search,
    whole_image_area,
)
from .baselines import SquareParams, signhunter, square_attack
from .fixtures import blob_image, make_fixture_dataset, structured_mlp
from .harness import (
    ExperimentConfig,
    Report,
    area_analysis,
    emit_report,
    load_config,
    run_experiment,
)
from .image import (
    load_png,
    load_raw_tensor,
    save_png,
    save_raw_tensor,
    srgb_to_lab,
)
from .models import (
    ExternalModel,
    ModelError,
    ProtocolError,
    ToyModel,
    TransportError,
    connect_external,
    load_toy_model,
    save_toy_model,
)
from .superpixel import (
    compactness,
    enforce_connectivity,
    icv,
    load_segment_map,
    save_segment_map,
    seed_grid,
    slic,
)

__version__ = "0.1.0"
