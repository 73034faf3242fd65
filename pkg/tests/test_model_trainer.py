import numpy as np
import pytest

from src.components.data_ingestion import DataIngestion
from src.components.model_trainer import (
    ModelTrainer,
    TrainingTrace,
    build_network_from_config,
    make_optimizer,
    s2a_train_step,
)
from src.pipeline.training_pipeline import ingestion_config_for
from src.schemas.config import config_from_dict


def blob_config(**train):
    payload = {
        "data": {"kind": "blobs", "n_samples": 500, "classes": 3, "test_size": 0.2},
        "network": {"layers": [{"kind": "fc", "out": 64}, {"kind": "fc", "out": 3}]},
        "train": {"epochs": 30, "lr": 0.005, "lr_milestones": [20], "time_steps": 4, "seed": 0, **train},
    }
    return config_from_dict(payload)


def splits(config):
    return DataIngestion(ingestion_config_for(config)).initiate_data_ingestion(config.train.seed)


@pytest.mark.parametrize("mapping", ["stsu", "resu"])
def test_s2a_reaches_held_out_accuracy_on_blobs(mapping):
    config = blob_config(ata={"enabled": False})
    config = config.model_copy(update={"network": config.network.model_copy(update={"mapping": mapping})})
    train_set, test_set = splits(config)
    _, trace = ModelTrainer(config).initiate_model_trainer(train_set, test_set)
    assert trace.final_accuracy >= 0.95
    assert trace.epochs[-1].train_loss < trace.epochs[0].train_loss


def test_stbp_loss_decreases_on_blobs():
    config = blob_config(trainer="stbp", epochs=10)
    train_set, test_set = splits(config)
    _, trace = ModelTrainer(config).initiate_model_trainer(train_set, test_set)
    assert trace.trainer == "stbp"
    assert trace.epochs[-1].train_loss < trace.epochs[0].train_loss


def test_zero_learning_rate_repeats_the_same_loss():
    config = blob_config(lr=0.0, ata={"enabled": False}, bn={"momentum": 0.0})
    train_set, _ = splits(config)
    net = build_network_from_config(config, train_set.sample_shape, train_set.num_classes)
    optimizer = make_optimizer(config.train)
    features, labels = train_set.features[:32], train_set.labels[:32]
    first = s2a_train_step(net, features, labels, config.train, optimizer)
    second = s2a_train_step(net, features, labels, config.train, optimizer)
    assert first == second


def two_hidden_config(**train):
    payload = {
        "data": {"kind": "blobs", "n_samples": 500, "classes": 3, "separation": 2.0, "noise": 1.0},
        "network": {"layers": [{"kind": "fc", "out": 32}, {"kind": "fc", "out": 32}, {"kind": "fc", "out": 3}]},
        "train": {"epochs": 30, "lr": 0.005, "lr_milestones": [20], "time_steps": 4, "seed": 0, **train},
    }
    return config_from_dict(payload)


def test_thresholds_only_grow_by_the_ata_factor():
    config = two_hidden_config()
    train_set, test_set = splits(config)
    net, trace = ModelTrainer(config).initiate_model_trainer(train_set, test_set)
    thresholds = np.asarray(trace.thresholds)
    assert thresholds.shape == (1 + 30 * 13, 2)
    ratios = thresholds[1:] / thresholds[:-1]
    growth = net.layers[0].ata.growth_factor
    assert growth == pytest.approx(1.09)
    assert np.all(np.isclose(ratios, 1.0) | np.isclose(ratios, growth))
    assert np.isclose(ratios, growth).sum() >= 1
    assert np.all(np.diff(thresholds, axis=0) >= 0)


def test_training_is_deterministic():
    config = blob_config(epochs=2)
    train_set, test_set = splits(config)
    first, _ = ModelTrainer(config).initiate_model_trainer(train_set, test_set)
    second, _ = ModelTrainer(config).initiate_model_trainer(train_set, test_set)
    for name, pair in first.parameters().items():
        np.testing.assert_array_equal(pair.value, second.parameters()[name].value)
    assert first.thresholds() == second.thresholds()


def test_trace_round_trip():
    config = blob_config(epochs=1)
    train_set, test_set = splits(config)
    _, trace = ModelTrainer(config).initiate_model_trainer(train_set, test_set)
    restored = TrainingTrace.from_dict(trace.to_dict())
    assert restored == trace
    assert restored.mean_sec_per_epoch == trace.epochs[0].sec_per_epoch
