"""Joint intent classification and slot filling with sub-word attention pooling.

Everything runs on a small numpy autodiff engine (``joint_nlu.tensor``); the
encoder is a desk-sized transformer trained from scratch.
"""

from .adapters import export_attention, format_attention, iaa_forward, saa_forward
from .dataset import LabelCatalog, LabeledUtterance, batch_iter, build_catalog, load_split
from .encoder import EncoderConfig, default_toy_config, encode
from .metrics import EvalReport, evaluate, extract_chunks, overall_accuracy, slot_f1
from .model import AblationConfig, JointModel, ModelConfig, count_parameters
from .trainer import (
    Corpus,
    TrainConfig,
    epoch_sweep,
    load_checkpoint,
    load_config,
    run_ablations,
    save_checkpoint,
    train,
)
from .wordpiece import WordpieceVocab, corpus_subword_stats, tokenize_utterance, tokenize_word

__version__ = "0.1.0"
