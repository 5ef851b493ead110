"""Differentiable readmission-risk models over sequences of coded hospital visits."""

from . import diffcore
from .baselines import (
    BowConfig,
    BowLrModel,
    DeeprConfig,
    DeeprMiniModel,
    bow_features,
    deepr_forward,
    deepr_sequence,
    train_bow_lr,
)
from .data import (
    Cohort,
    PatientRecord,
    Visit,
    build_vocab,
    kfold_split,
    load_cohort,
    parse_cohort,
    truncate_icd10,
    write_cohort,
)
from .embedding import EmbeddingTable, Vocabulary, code_similarity, embed_bag, visit_vector
from .evaluation import MetricsReport, ModelSpec, cross_validate, evaluate, trace_states
from .metrics import ScoredExample, auc, roc_auc
from .model import RiskConfig, RiskModel, backward, forward, load, loss, predict_risk, save
from .optim import AdamState, TrainConfig, adam_step, train
from .recurrent import (
    LstmParams,
    LstmState,
    PoolingConfig,
    RegularizerConfig,
    coherence_penalty,
    lstm_step,
    norm_stabilizer,
    pool,
    unroll,
)
from .synth import SynthConfig, gen_synthetic

__version__ = "0.1.0"
