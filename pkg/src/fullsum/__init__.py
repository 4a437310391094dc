"""Full-sum training of frame classifiers with learnable transition models.

The model is a linear loop/forward HMM per utterance: a neural classifier
scores every (label, substate) class per frame, an explicit transition
model scores loop versus forward, and training maximizes the scaled
log-likelihood summed over all monotone alignment paths.  Everything is
plain NumPy with hand-written gradients, verified against brute-force path
enumeration and finite differences.
"""

__version__ = "0.1.0"

from .alignment import (
    Alignment,
    CorpusTse,
    Segment,
    corpus_tse,
    read_alignments,
    tse,
    viterbi_align,
    write_alignments,
)
from .checkpoint import load_model, save_model
from .config import SynthConfig, TrainConfig
from .data import (
    Corpus,
    GenerativeSpec,
    Utterance,
    load_corpus,
    make_generative_spec,
    read_features,
    synth_corpus,
    write_features,
)
from .encoder import EncoderConfig, EncoderWeights, encoder_forward, init_encoder
from .estimator import FullSumHMM
from .lattice import (
    InfeasibleError,
    LatticeStats,
    Scales,
    TransitionField,
    brute_force,
    forward_backward,
    loss_and_grads,
)
from .optim import NadamOptimizer, OneCycleSchedule
from .topology import LabelInventory, StateChain, expand_labels
from .trainer import Model, TrainResult, TrainingDiverged, align_corpus, train
from .transitions import (
    TransitionParamization,
    TransitionParams,
    evaluate,
    init_params,
)

__all__ = [
    "Alignment",
    "Corpus",
    "CorpusTse",
    "EncoderConfig",
    "EncoderWeights",
    "FullSumHMM",
    "GenerativeSpec",
    "InfeasibleError",
    "LabelInventory",
    "LatticeStats",
    "Model",
    "NadamOptimizer",
    "OneCycleSchedule",
    "Scales",
    "Segment",
    "StateChain",
    "SynthConfig",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "TransitionField",
    "TransitionParamization",
    "TransitionParams",
    "Utterance",
    "align_corpus",
    "brute_force",
    "corpus_tse",
    "encoder_forward",
    "evaluate",
    "expand_labels",
    "forward_backward",
    "init_encoder",
    "init_params",
    "load_corpus",
    "load_model",
    "loss_and_grads",
    "make_generative_spec",
    "read_alignments",
    "read_features",
    "save_model",
    "synth_corpus",
    "train",
    "tse",
    "viterbi_align",
    "write_alignments",
    "write_features",
]
