from .spec import (NetworkSpec, LayerSpec, ShapeError, propagate, output_shape,
                   conv, max_pool, min_pool, dense, dropout, concat)
from .engine import (Model, NonFiniteError, Trace, build_network, forward, backward,
                     penultimate_features, copy_params, zeros_like_params, count_params)
from .losses import compute_loss, balanced_class_weights
from .optim import OptimizerState, sgd_update
from .gradcheck import gradient_check, GradCheckReport
from .registry import get_spec, spec_names, shrink
