import json
import os
import sys
from dataclasses import dataclass

from src.components.data_ingestion import DataIngestion, DataIngestionConfig
from src.components.model_trainer import ModelTrainer
from src.exception import CustomException
from src.logger import attach_run_log, detach_run_log, logging
from src.metrics import build_metrics_report
from src.schemas.config import ExperimentConfig, dump_config
from src.utils import checkpoint_save
from src.visualization import plot_branch_losses, plot_threshold_trajectories


@dataclass
class TrainingArtifactsConfig:
    out_dir: str
    checkpoint_path: str = None
    metrics_csv_path: str = None
    energy_csv_path: str = None
    report_json_path: str = None
    effective_config_path: str = None
    threshold_plot_path: str = None
    loss_plot_path: str = None

    def __post_init__(self):
        join = lambda name: os.path.join(self.out_dir, name)  # noqa: E731
        self.checkpoint_path = self.checkpoint_path or join("model.ckpt")
        self.metrics_csv_path = self.metrics_csv_path or join("metrics.csv")
        self.energy_csv_path = self.energy_csv_path or join("energy_summary.csv")
        self.report_json_path = self.report_json_path or join("report.json")
        self.effective_config_path = self.effective_config_path or join("effective_config.yaml")
        self.threshold_plot_path = self.threshold_plot_path or join("thresholds.png")
        self.loss_plot_path = self.loss_plot_path or join("branch_losses.png")


def ingestion_config_for(config: ExperimentConfig) -> DataIngestionConfig:
    return DataIngestionConfig(**config.data.model_dump())


def write_outputs(artifacts, output, report, trace, config_payload):
    """Write the CSV, JSON and plot artifacts the output toggles ask for."""
    written = {}
    if output.write_csv:
        written["metrics_csv"] = report.write_csv(artifacts.metrics_csv_path)
        written["energy_csv"] = report.write_energy_csv(artifacts.energy_csv_path)
    if output.write_json:
        with open(artifacts.report_json_path, "w") as f:
            json.dump({"config": config_payload, "metrics": report.to_dict()}, f, indent=2)
        written["report_json"] = artifacts.report_json_path
    if output.write_plots and trace is not None:
        written["threshold_plot"] = plot_threshold_trajectories(trace, artifacts.threshold_plot_path)
        written["loss_plot"] = plot_branch_losses(trace, artifacts.loss_plot_path)
    return written


class TrainingPipeline:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.artifacts = TrainingArtifactsConfig(out_dir=config.output.out_dir)

    def run(self):
        os.makedirs(self.artifacts.out_dir, exist_ok=True)
        run_log = attach_run_log(self.artifacts.out_dir)
        try:
            logging.info("Starting training pipeline")
            with open(self.artifacts.effective_config_path, "w") as f:
                f.write(dump_config(self.config))

            seed = self.config.train.seed
            train_set, test_set = DataIngestion(ingestion_config_for(self.config)).initiate_data_ingestion(seed)
            net, trace = ModelTrainer(self.config).initiate_model_trainer(train_set, test_set)

            config_payload = self.config.model_dump(mode="json")
            # output paths stay out of the checkpoint
            model_config = {key: value for key, value in config_payload.items() if key != "output"}
            checkpoint_save(net, self.artifacts.checkpoint_path, config=model_config)
            report = build_metrics_report(net, test_set, trace=trace)
            written = write_outputs(self.artifacts, self.config.output, report, trace, config_payload)

            logging.info(
                f"Training pipeline completed: accuracy {report.accuracy:.4f}, "
                f"spikes/image {report.spikes_per_image:.2f}, energy ratio {report.energy_ratio:.3f}"
            )
            return {
                "net": net,
                "trace": trace,
                "report": report,
                "checkpoint_path": self.artifacts.checkpoint_path,
                "run_log": run_log,
                **written,
            }
        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)
        finally:
            detach_run_log(run_log)
