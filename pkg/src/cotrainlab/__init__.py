"""Two-view semi-supervised learning on frozen embeddings.

Classic co-training and its meta variant (symmetric teacher/student
updates driven by the scalar product of labeled-loss and pseudo-label
gradients), view sufficiency and cross-view translation diagnostics, a
bit-exact embedding file format, and a reproducible experiment runner.
"""

from .cotrain import (CotrainConfig, CoTrainState, PseudoLabelBatch,
                      cotrain_iteration, joint_predict, run_cotraining)
from .data import (PairedViews, SplitSpec, SyntheticSpec, SyntheticViews,
                   ViewDataset, concat_views, generate_synthetic, load_view,
                   nearest_mean_accuracy, save_view, stratified_split,
                   stratified_split_indices)
from .diagnostics import (ProbeConfig, SufficiencyReport, TranslationReport,
                          independence_probe, sufficiency_probe)
from .errors import (AlignmentError, ConfigError, CotrainlabError,
                     DimensionError, FormatError, NumericError,
                     StaleTraceError, UnlabeledPoolExhausted)
from .mct import MctConfig, StepRow, mct_step, run_mct
from .metrics import MetricsLog
from .models import (LinearProbe, ParamSet, SkipMLP, SkipMLPRegressor,
                     load_checkpoint, predict_hard, sample_pseudo_labels,
                     save_checkpoint)
from .numerics import (AdamState, PlateauSchedule, adam_step, cross_entropy,
                       grad_dot, hadamard_normalize, mse, plateau_update,
                       softmax)
from .training import (BatchSampler, SupervisedStepper, loss_and_grad,
                       make_model, top1_accuracy, train_supervised)

__version__ = "0.1.0"
