import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.metrics import accuracy_score

from src.components.batch_norm import batch_statistics, update_ema
from src.components.data_ingestion import iterate_batches
from src.components.dual_branch import s2a_gradients
from src.components.network import build_network
from src.components.stbp import stbp_gradients
from src.components.tensor_ops import Adam, lr_at_epoch
from src.components.threshold import ata_update, noisy_spike_mass
from src.exception import CustomException
from src.logger import logging
from src.metrics import collect_spike_statistics
from src.schemas.config import TrainConfig, network_spec_from_config


def make_optimizer(config: TrainConfig) -> Adam:
    return Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)


def _update_bn_statistics(net, pre_activations):
    for layer, z in zip(net.layers, pre_activations):
        mu, sigma = batch_statistics(z)
        update_ema(layer.bn, mu, sigma)


def s2a_train_step(net, batch, labels, config: TrainConfig, optimizer: Adam | None = None) -> float:
    """One dual-branch iteration: gradients on the ANN branch, ATA, Adam, then BN statistics."""
    optimizer = optimizer or make_optimizer(config)
    net.zero_grad()
    loss, result = s2a_gradients(net, batch, labels)

    if config.ata.enabled:
        for layer in net.layers:
            _, mean_noise = noisy_spike_mass(layer.unit.cached_counts, layer.unit.cached_relu)
            layer.set_threshold(ata_update(layer.ata, mean_noise))

    optimizer.step(net.parameters())
    _update_bn_statistics(net, [cache.pre_activation for cache in result.caches])
    for layer in net.layers:
        layer.unit.clear()
    return loss


def stbp_train_step(net, batch, labels, config: TrainConfig, optimizer: Adam | None = None) -> float:
    """One surrogate-gradient BPTT iteration over the full window."""
    optimizer = optimizer or make_optimizer(config)
    net.zero_grad()
    loss, result = stbp_gradients(net, batch, labels, surrogate_width=config.surrogate_width)
    optimizer.step(net.parameters())
    _update_bn_statistics(net, result.pre_activations)
    return loss


TRAIN_STEPS = {"s2a": s2a_train_step, "stbp": stbp_train_step}


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    test_accuracy: float
    ann_loss: float
    snn_loss: float
    sec_per_epoch: float
    thresholds: list[float] = field(default_factory=list)


@dataclass
class TrainingTrace:
    trainer: str
    mapping: str
    time_steps: int
    epochs: list[EpochRecord] = field(default_factory=list)
    thresholds: list[list[float]] = field(default_factory=list)

    @property
    def final_accuracy(self):
        return self.epochs[-1].test_accuracy if self.epochs else 0.0

    @property
    def mean_sec_per_epoch(self):
        if not self.epochs:
            return 0.0
        return float(np.mean([record.sec_per_epoch for record in self.epochs]))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        return cls(
            trainer=payload["trainer"],
            mapping=payload["mapping"],
            time_steps=payload["time_steps"],
            epochs=[EpochRecord(**record) for record in payload.get("epochs", [])],
            thresholds=payload.get("thresholds", []),
        )


def build_network_from_config(config, sample_shape, num_classes):
    spec = network_spec_from_config(config, sample_shape, num_classes)
    train = config.train
    return build_network(
        spec,
        seed=train.seed,
        tau=train.ata.tau,
        alpha=train.ata.alpha,
        epsilon=train.ata.epsilon,
        bn_momentum=train.bn.momentum,
        bn_eps=train.bn.eps,
    )


class ModelTrainer:
    def __init__(self, config):
        self.config = config

    def initiate_model_trainer(self, train_set, test_set, net=None):
        try:
            train = self.config.train
            if net is None:
                net = build_network_from_config(self.config, train_set.sample_shape, train_set.num_classes)
            step = TRAIN_STEPS[train.trainer]
            optimizer = make_optimizer(train)
            trace = TrainingTrace(
                trainer=train.trainer,
                mapping=net.spec.mapping_kind.value,
                time_steps=net.time_steps,
                thresholds=[net.thresholds()],
            )
            logging.info(
                f"Training {train.trainer} ({trace.mapping}, T={net.time_steps}) for {train.epochs} epochs "
                f"on {len(train_set)} samples"
            )

            for epoch in range(train.epochs):
                optimizer.lr = lr_at_epoch(train.lr, train.lr_milestones, train.lr_decay, epoch)
                rng = np.random.default_rng(train.seed + epoch)
                start = time.perf_counter()
                losses, sizes = [], []
                for features, labels in iterate_batches(train_set, train.batch_size, rng):
                    losses.append(step(net, features, labels, train, optimizer))
                    sizes.append(len(labels))
                    trace.thresholds.append(net.thresholds())
                elapsed = time.perf_counter() - start

                stats = collect_spike_statistics(net, test_set)
                accuracy = float(accuracy_score(test_set.labels, stats.predictions))
                record = EpochRecord(
                    epoch=epoch,
                    lr=optimizer.lr,
                    train_loss=float(np.average(losses, weights=sizes)),
                    test_accuracy=accuracy,
                    ann_loss=stats.ann_loss,
                    snn_loss=stats.snn_loss,
                    sec_per_epoch=elapsed,
                    thresholds=net.thresholds(),
                )
                trace.epochs.append(record)
                logging.info(
                    f"epoch {epoch}: loss {record.train_loss:.4f} acc {accuracy:.4f} "
                    f"ann/snn loss {record.ann_loss:.4f}/{record.snn_loss:.4f} "
                    f"{elapsed:.2f}s thresholds {[round(v, 4) for v in record.thresholds]}"
                )
            return net, trace
        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)
