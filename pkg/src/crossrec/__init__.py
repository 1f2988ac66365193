"""Cross-network preference synthesis and time-aware Top-N recommendation."""

from crossrec.config import OptimizerConfig, SynthSpec, TrainConfig, VARIANTS
from crossrec.data import (Dataset, TopicalDistribution, UserTimeline,
                           build_topical_distribution, load_dataset,
                           prev_interactions, save_dataset, synthesize_dataset)
from crossrec.nn import Adam, DenseNet, NumericalError
from crossrec.training import (ModelBundle, build_bundle, evaluate_frozen,
                               offline_train, online_run)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Dataset", "DenseNet", "ModelBundle", "NumericalError",
    "OptimizerConfig", "SynthSpec", "TopicalDistribution", "TrainConfig",
    "UserTimeline", "VARIANTS", "build_bundle", "build_topical_distribution",
    "evaluate_frozen", "load_dataset", "offline_train", "online_run",
    "prev_interactions", "save_dataset", "synthesize_dataset", "__version__",
]
