"""Local slot attention for navigation, at desk scale.

Numpy implementations of a panoramic view grid, circular local masks, an
iterative slot-attention block, a small attention decoder, a synthetic
navigation environment and the usual navigation metrics, with hand-written
gradients that are checked against finite differences.
"""

from .agent import Agent, ModelConfig, greedy_rollout, teacher_forced_accuracy
from .config import EnvConfig, RunConfig, build_env
from .masks import ABLATION_SHAPES, MaskShape, build_mask
from .metrics import MetricsReport, evaluate_trajectories
from .slot_attention import SlotAttention, SlotAttnConfig, slot_attention_forward
from .trainer import TrainConfig, evaluate, train

__all__ = [
    "ABLATION_SHAPES", "Agent", "EnvConfig", "MaskShape", "MetricsReport", "ModelConfig", "RunConfig",
    "SlotAttention", "SlotAttnConfig", "TrainConfig", "build_env", "build_mask", "evaluate",
    "evaluate_trajectories", "greedy_rollout", "slot_attention_forward", "teacher_forced_accuracy", "train",
]
__version__ = "0.1.0"
