"""probnet: constructive sigmoid networks that learn probability
distributions from binary reinforcement, plus a Bayes-rule module and
attention-based weight disruption."""

__version__ = "0.1.0"

from .netcore import Connection, Network, ShapeError, SnapshotError, Unit
from .training import (CessationState, TrainConfig, TrainHistory, cessation_step,
                       epoch_error, recruit, train_candidates, train_one_epoch,
                       train_sdcc)
from .probmatch import (AdaptationResult, DistributionSpec, EpochBatch,
                        FixedSetStream, ReinforcementSample, ReplicationReport,
                        Support, TrainingStream, adaptation_lag, encode_hypothesis,
                        next_epoch_batch, pmf, run_replications)

__all__ = [
    "AdaptationResult", "CessationState", "Connection", "DistributionSpec",
    "EpochBatch", "FixedSetStream", "Network", "ReinforcementSample",
    "ReplicationReport", "ShapeError", "SnapshotError", "Support",
    "TrainConfig", "TrainHistory", "TrainingStream", "Unit", "adaptation_lag",
    "cessation_step", "encode_hypothesis", "epoch_error", "next_epoch_batch",
    "pmf", "recruit", "run_replications", "train_candidates", "train_one_epoch",
    "train_sdcc",
]
