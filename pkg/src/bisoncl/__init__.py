"""Online class-incremental learning engine.

A single-pass stream learner built around dual cosine classifier heads over
a shared extractor, experience replay with reservoir sampling, proxy-based
knowledge transfer between the heads, nearest-class-mean inference, and the
accuracy / forgetting / intransigence / confusion evaluation stack.
"""

from .config import (CONFIG_SCHEMA, ConfigError, ExperimentConfig, build_dataset,
                     build_model_config, default_gaussian_config, load_config,
                     parse_config)
from .experiment import run_experiment
from .harness import RunHooks, compute_upper_bounds, evaluate_boundary, run_single
from .losses import (LossWeights, StepBatch, align_loss, bison_loss, cross_entropy,
                     dc_loss, pal_loss)
from .metrics import (AccuracyMatrix, ConfusionMatrix, SimilarPairs, average_accuracy,
                      average_forgetting, average_intransigence, p_sim, row_normalize,
                      sc_at_1)
from .methods import MethodConfig, StepContext, make_method
from .model import (Centroids, ModelConfig, ModelState, cosine_logits, embed,
                    extractor_forward, init_model, linear_logits, load_model,
                    ncm_centroids, ncm_predict, ncm_predict_embeddings, save_model)
from .replay import MemoryBuffer
from .report import (RunReport, canonical_bytes, emit_report, load_report,
                     report_to_dict, save_report)
from .stream import (AugmentPolicy, CIFAR10_CONFUSION_SCHEDULE, CIFAR10_SIMILAR_PAIRS,
                     Dataset, GaussianSpec, TaskStream, augment, build_task_stream,
                     gen_synthetic_gaussian, load_cifar_binary, load_cifar_dataset,
                     load_jsonl, save_jsonl, with_augmented)
from .tensor import (SgdConfig, Tape, Tensor, backward, finite_diff_check,
                     finite_diff_check_params, sgd_step, stop_gradient)

__version__ = "0.1.0"
