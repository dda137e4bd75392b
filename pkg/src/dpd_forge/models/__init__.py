from .base import SequenceModel
from .budget import BudgetError, gmp_budget_terms, search_config_for_budget
from .checkpoint import (CheckpointError, REGISTRY, build_model, count_params, dumps_checkpoint,
                         load_checkpoint, loads_checkpoint, save_checkpoint)
from .gmp import GmpConfig, GmpModel, design_matrix, gmp_design_row, gmp_fit
from .gradcheck import GradCheckReport, gradient_check
from .recurrent import (DgruModel, FeatureVector, GruModel, GruParams, LstmModel, fex, gru_cell,
                        gru_step, lstm_step, recurrent_param_count)

__all__ = [
    "SequenceModel", "BudgetError", "gmp_budget_terms", "search_config_for_budget",
    "CheckpointError", "REGISTRY", "build_model", "count_params", "dumps_checkpoint",
    "load_checkpoint", "loads_checkpoint", "save_checkpoint", "GmpConfig", "GmpModel",
    "design_matrix", "gmp_design_row", "gmp_fit", "GradCheckReport", "gradient_check",
    "DgruModel", "FeatureVector", "GruModel", "GruParams", "LstmModel", "fex", "gru_cell",
    "gru_step", "lstm_step", "recurrent_param_count",
]
