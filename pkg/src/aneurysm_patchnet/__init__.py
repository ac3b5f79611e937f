"""Patch-level aneurysm classification in angiography volumes with weak labels.

Synthetic cohorts, spatially informed two-scale 3D CNNs, random and
intensity-matched negative sampling, and the evaluation statistics used to
compare them.
"""
from .errors import (ConfigError, DatasetBuildError, DomainError, GenerationError, PatchNetError,
                     PatchTooLarge, SamplingExhausted, TrainingError, ValidationError)
from .seeding import derive_rng, derive_seed
from .volumes import (SubjectRecord, Volume3D, VolumeGeometry, WeakLabelSphere, equivalent_diameter,
                      load_cohort, load_subject, rasterize_sphere, voxel_to_world, world_to_voxel)
from .features import (N_FEATURES, LandmarkSet, UniformGrid, build_grid, default_landmarks, load_landmarks,
                       spatial_features, spatial_features_batch)
from .phantom import CohortSpec, PhantomSpec, generate_cohort, generate_records, generate_subject
from .sampler import (BrightnessThresholds, PatchDataset, PatchPair, PatchSample, SamplerConfig, build_dataset,
                      compute_thresholds, extract_patch_pair, read_dataset, sample_cohort,
                      sample_negative_intensity_matched, sample_negative_random, sample_positive, standardize)
from .augment import AugmentationSpec, ElasticSpec, apply_augmentation
from .model import (ModelConfig, TrainConfig, TrainedModel, build_model, count_parameters,
                    finite_difference_gradients, forward, load_checkpoint, model_summary, predict,
                    save_checkpoint, train, weighted_bce)
from .metrics import (MetricsReport, WilcoxonResult, confusion_metrics, evaluate, pr_auc, roc_auc,
                      wilcoxon_signed_rank)
from .crossval import FoldPlan, plan_nested_cv
from .config import PipelineConfig, load_config
from .experiment import ExperimentReport, run_experiment, summary_table

__version__ = "0.1.0"
