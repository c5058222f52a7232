"""roiformer: encoder-decoder attention classifier for ROI time-series.

The public surface re-exports the tensor engine, attention kernels, model
assembly, data pipeline, and training loop so that ``import roiformer``
suffices for scripted use; the ``roiformer`` console command wraps the same
pieces for batch runs.
"""

from .tensor import (DegenerateMaskError, NumericsError, ShapeError, Tensor,
                     backward)
from .attention import (AdditiveMask, AttentionWeights, HeadTrace, RankSpec,
                        ScoreMatrix, WindowSpec, build_window_mask,
                        co_attention, export_scores, multi_head_attention,
                        roi_rank_mask, scaled_dot_attention,
                        self_attention_spatial, self_attention_temporal)
from .model import (CnnEmbedSpec, ForwardResult, ModelConfig, init_parameters,
                    load_checkpoint, model_forward, parameter_names,
                    save_checkpoint, sinusoidal_positional_encoding)
from .data import (DataError, PhenoStats, PhenotypicRecord, RoiTimeSeries,
                   SubjectData, SubjectSample, SyntheticSpec, binarize_label,
                   center_segment, compute_pheno_stats, encode_phenotype,
                   generate_synthetic, load_dataset, load_phenotypic_table,
                   load_subject_series, random_segment, split_train_val,
                   write_dataset)
from .training import (AdamState, Checkpoint, EpochRecord, MetricsReport,
                       TrainConfig, UndefinedMetricError, adam_step, auc_score,
                       bce_loss, center_samples, evaluate, metrics_report,
                       predict_proba, save_history, train)
from .config import ConfigError, DataSection, RunConfig, load_run_config
from .rng import RngStreams
from .backend import backend_name

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AdditiveMask", "AttentionWeights", "Checkpoint",
    "CnnEmbedSpec", "ConfigError", "DataError", "DataSection",
    "DegenerateMaskError", "EpochRecord", "ForwardResult", "HeadTrace",
    "MetricsReport", "ModelConfig", "NumericsError", "PhenoStats",
    "PhenotypicRecord", "RankSpec", "RngStreams", "RoiTimeSeries", "RunConfig",
    "ScoreMatrix", "ShapeError", "SubjectData", "SubjectSample",
    "SyntheticSpec", "Tensor", "TrainConfig", "UndefinedMetricError",
    "WindowSpec", "adam_step", "auc_score", "backend_name", "backward",
    "bce_loss", "binarize_label", "build_window_mask", "center_samples",
    "center_segment", "co_attention", "compute_pheno_stats",
    "encode_phenotype", "evaluate", "export_scores", "generate_synthetic",
    "init_parameters", "load_checkpoint", "load_dataset", "load_run_config",
    "load_phenotypic_table", "load_subject_series", "metrics_report",
    "model_forward", "multi_head_attention", "parameter_names",
    "predict_proba", "random_segment", "roi_rank_mask", "save_checkpoint",
    "save_history", "scaled_dot_attention", "self_attention_spatial",
    "self_attention_temporal", "sinusoidal_positional_encoding",
    "split_train_val", "train", "write_dataset",
]
