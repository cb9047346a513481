"""Two-stage class-conditioned motion synthesis on a small numpy autodiff engine."""

from .autodiff import ShapeError, Tape, grad_check
from .data import (
    DatasetSplit,
    MotionFile,
    MotionFormatError,
    load_motion,
    make_rotating_arm_dataset,
    make_synthetic_dataset,
    preprocess,
    save_motion,
)
from .objectives import LossWeights, MmdConfig, combined_loss, joint_loss, mmd2, mmd_avg, mmd_seq, motion_flow_loss
from .pipeline import (
    MotionModel,
    PaceConfig,
    densify,
    glogen_rollout,
    interpolate_pair,
    multi_activity_rollout,
    synthesize,
)
from .recurrent import Seq2SeqParams, seq2seq_forward
from .skeleton import SkeletonSpec, arm, stick_figure
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train_glogen, train_locgen

__version__ = "0.1.0"
