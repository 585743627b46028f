"""Joint representation learning and novel category discovery, desk scale.

Contrastive instance/category discrimination on mixed labelled and
unlabelled (optionally two-modality) data, WTA-hash pairwise pseudo-labels
driving a pairwise BCE clustering head, and Hungarian-matched clustering
accuracy, all on an exact-gradient float64 core.
"""

from .data import (AugmentPolicy, BatchSpec, Dataset, Record, augment, generate_synthetic,
                   read_dataset, sample_batch, write_dataset)
from .errors import (BatchError, ConfigError, DegenerateInputError, DimensionError,
                     InputError, NcdError, NumericError, ParseError, PreconditionError,
                     SamplingError)
from .evaluation import AccResult, clustering_acc, hungarian, kmeans
from .losses import (ContrastiveBatch, ModalitySelectors, RampSchedule, UNLABELLED,
                     bce_pairwise, cross_entropy, joint_loss, mse_consistency,
                     nce_category, nce_instance, ramp_weight, unified_cl)
from .model import (ForwardOutputs, ModelState, assign_cluster, forward, init_model,
                    load_checkpoint, restore, save_checkpoint)
from .numerics import (Param, RngState, Tensor, affine_forward, check_gradients, concat,
                       l2_normalize, sgd_momentum_step, softmax)
from .pairing import (PairStrategy, WtaHasher, agreement, build_hasher, hash_code,
                      hash_codes, pairwise_labels)
from .trainer import (EpochMetrics, RunConfig, TuneReport, evaluate_acc, kmeans_baseline,
                      metrics_csv_text, selector_report, train, tune_wta,
                      unsupervised_cluster, write_metrics)

__all__ = [name for name in dir() if not name.startswith("_")]
