"""Deep feedforward and recurrent networks stabilized by fixed random orthogonal filters."""

from .filters import FilterKind, FilterPlan, build_filters, gen_semi_orthogonal, gen_semi_permutation
from .fnn import ActivationKind, RoaFnnModel, fnn_backward, fnn_forward, fnn_ioj, fnn_loss_mse
from .isometry import BoundSpec, certify_fnn, certify_rnn, thm_bounds
from .rnn import RoaRnnModel, rnn_backward, rnn_forward, rnn_ioj

__version__ = "0.1.0"
