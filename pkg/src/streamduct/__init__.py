"""streamduct: dual-mode (streaming / full-context) sequence transduction.

A numpy library for training one weight-shared recognizer that runs both
causally and with full context: mode-switchable layers, an RNN transducer
head with exact loss and brute-force oracle, joint training with inplace
knowledge distillation, and WER / emission-latency evaluation.
"""

from .tensor import Tensor, finite_difference_gradient, stop_gradient
from .layers import (
    DualAvgPool,
    DualConv1D,
    DualNorm,
    DualSelfAttention,
    Mode,
    SEBlock,
    dual_avg_pool_forward,
)
from .encoder import EncoderConfig, EncoderOutput, build_encoder, encode
from .transducer import (
    EmissionRecord,
    JointNet,
    PredictionNet,
    TransducerLattice,
    greedy_decode,
    joint_forward,
    prediction_forward,
    rnnt_loss,
    rnnt_loss_bruteforce,
)
from .model import ModelConfig, TransducerModel
from .training import (
    OptimizerState,
    TrainConfig,
    collapsed_kl,
    init_optimizer,
    inplace_distill_loss,
    joint_train_step,
    optimizer_update,
    run_training,
    sampled_train_step,
    warmup_lr,
)
from .data import (
    Batch,
    SynthTaskConfig,
    Utterance,
    batch_utterances,
    generate_dataset,
    load_manifest,
)
from .metrics import (
    LatencyReport,
    WerReport,
    export_lattice,
    latency,
    nearest_rank_percentile,
    wer,
)
from .evaluation import decode_dataset, evaluate_model
from .config import ExperimentConfig, experiment_from_dict, load_experiment

__version__ = "0.1.0"
