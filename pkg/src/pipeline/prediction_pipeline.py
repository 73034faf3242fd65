import json
import os
import sys

from src.components.data_ingestion import DataIngestion
from src.components.model_trainer import TrainingTrace
from src.exception import CustomException, DataFormatError
from src.logger import logging
from src.metrics import MetricsReport, build_metrics_report, predict_dataset
from src.pipeline.training_pipeline import TrainingArtifactsConfig, ingestion_config_for, write_outputs
from src.schemas.config import ExperimentConfig, config_from_dict
from src.utils import checkpoint_load, load_checkpoint_config


class EvaluationPipeline:
    """Reload a checkpoint and score it on the held-out split its config describes."""

    def __init__(self, checkpoint_path, config: ExperimentConfig | None = None):
        self.checkpoint_path = checkpoint_path
        self.config = config

    def run(self):
        try:
            net = checkpoint_load(self.checkpoint_path)
            config = self.config
            if config is None:
                config = config_from_dict(load_checkpoint_config(self.checkpoint_path))
            _, test_set = DataIngestion(ingestion_config_for(config)).initiate_data_ingestion(config.train.seed)
            if test_set.sample_shape != net.spec.input_shape:
                raise DataFormatError(
                    f"Dataset samples have shape {test_set.sample_shape}, checkpoint expects {net.spec.input_shape}"
                )
            report = build_metrics_report(net, test_set)
            logging.info(
                f"Evaluated {self.checkpoint_path}: accuracy {report.accuracy:.4f}, "
                f"spikes/image {report.spikes_per_image:.2f}, energy ratio {report.energy_ratio:.3f}"
            )
            return {"net": net, "report": report, "predictions": predict_dataset(net, test_set)}
        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)


class ReportPipeline:
    """Re-emit CSV, JSON and plots from a stored ``report.json``."""

    def __init__(self, report_json_path, out_dir=None, write_plots=True):
        self.report_json_path = report_json_path
        self.out_dir = out_dir or os.path.dirname(os.path.abspath(report_json_path))
        self.write_plots = write_plots

    def run(self):
        try:
            with open(self.report_json_path, "r") as f:
                payload = json.load(f)
            report = MetricsReport.from_dict(payload["metrics"])
            trace_payload = report.extra.get("trace")
            trace = TrainingTrace.from_dict(trace_payload) if trace_payload else None

            config = config_from_dict(payload.get("config"))
            output = config.output.model_copy(
                update={"write_csv": True, "write_json": False, "write_plots": self.write_plots}
            )
            os.makedirs(self.out_dir, exist_ok=True)
            artifacts = TrainingArtifactsConfig(out_dir=self.out_dir)
            written = write_outputs(artifacts, output, report, trace, payload.get("config"))
            logging.info(f"Report regenerated from {self.report_json_path}: {sorted(written)}")
            return {"report": report, "trace": trace, **written}
        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)
