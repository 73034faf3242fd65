import os
import sys

import pandas as pd

from src.components.data_ingestion import DataIngestion
from src.components.model_trainer import ModelTrainer
from src.exception import CustomException
from src.logger import logging
from src.metrics import collect_spike_statistics
from src.pipeline.training_pipeline import ingestion_config_for
from src.schemas.config import ExperimentConfig

COMPARE_COLUMNS = [
    "method",
    "mapping",
    "ata",
    "time_steps",
    "accuracy",
    "spikes_per_image",
    "noisy_mass",
    "sec_per_epoch",
]


def _variant(config: ExperimentConfig, trainer=None, ata_enabled=None) -> ExperimentConfig:
    train_update = {}
    if trainer is not None:
        train_update["trainer"] = trainer
    if ata_enabled is not None:
        train_update["ata"] = config.train.ata.model_copy(update={"enabled": ata_enabled})
    return config.model_copy(update={"train": config.train.model_copy(update=train_update)})


def _run_variant(config, train_set, test_set):
    net, trace = ModelTrainer(config).initiate_model_trainer(train_set, test_set)
    stats = collect_spike_statistics(net, test_set)
    return {
        "method": config.train.trainer,
        "mapping": config.network.mapping if config.train.trainer == "s2a" else "-",
        "ata": bool(config.train.ata.enabled and config.train.trainer == "s2a"),
        "time_steps": config.train.time_steps,
        "accuracy": trace.final_accuracy,
        "spikes_per_image": sum(stats.spikes) / stats.images,
        "noisy_mass": sum(stats.noisy_spikes) / stats.images,
        "sec_per_epoch": trace.mean_sec_per_epoch,
    }


class ComparisonPipeline:
    """Train several variants of one config on the same split and tabulate them."""

    def __init__(self, config: ExperimentConfig):
        self.config = config

    def variants(self, ablate_ata=False):
        if ablate_ata:
            return [
                _variant(self.config, trainer="s2a", ata_enabled=True),
                _variant(self.config, trainer="s2a", ata_enabled=False),
            ]
        return [_variant(self.config, trainer="s2a"), _variant(self.config, trainer="stbp")]

    def run(self, ablate_ata=False, write_csv=True):
        try:
            seed = self.config.train.seed
            train_set, test_set = DataIngestion(ingestion_config_for(self.config)).initiate_data_ingestion(seed)
            rows = []
            for variant in self.variants(ablate_ata):
                logging.info(f"Comparison run: {variant.train.trainer} ata={variant.train.ata.enabled}")
                rows.append(_run_variant(variant, train_set, test_set))
            table = pd.DataFrame(rows, columns=COMPARE_COLUMNS)
            if write_csv:
                os.makedirs(self.config.output.out_dir, exist_ok=True)
                table.to_csv(os.path.join(self.config.output.out_dir, "compare.csv"), index=False)
            return table
        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)


def ata_ablation(config: ExperimentConfig, write_csv=False):
    return ComparisonPipeline(config).run(ablate_ata=True, write_csv=write_csv)
