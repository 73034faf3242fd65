from .comparison_pipeline import COMPARE_COLUMNS, ComparisonPipeline, ata_ablation
from .prediction_pipeline import EvaluationPipeline, ReportPipeline
from .training_pipeline import TrainingArtifactsConfig, TrainingPipeline

__all__ = [
    "COMPARE_COLUMNS",
    "ComparisonPipeline",
    "ata_ablation",
    "EvaluationPipeline",
    "ReportPipeline",
    "TrainingArtifactsConfig",
    "TrainingPipeline",
]
