"""
Objectives package for adaptorx: encoding, losses and per-objective state
"""

from .batch import Batch, BatchRow, collate
from .base import Objective, ObjectiveState, evaluate_objective
from .seq2seq import (
    Seq2SeqObjective, DenoisingObjective, BackTranslationObjective, NoiseConfig, permute_noise,
    make_backtranslation_pair, IdentityReverseTranslator, OracleReverseTranslator, ModelReverseTranslator,
)
from .classification import TokenClassificationObjective, SequenceClassificationObjective
