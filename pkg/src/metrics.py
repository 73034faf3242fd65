import sys
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score

from src.components.dual_branch import plain_ann_forward, s2a_forward, snn_branch, snn_logits, denoised_infer
from src.components.network import resolve_stages
from src.components.tensor_ops import softmax_xent
from src.components.threshold import noisy_positions
from src.exception import CustomException

DEFAULT_EVAL_BATCH = 256
E_MAC_PJ = 4.6
E_ADD_PJ = 0.9

METRICS_COLUMNS = [
    "layer_index",
    "layer_kind",
    "neurons",
    "spikes_per_image",
    "noisy_per_image",
    "a_ops",
    "s_ops",
]


@dataclass(frozen=True)
class OpsModel:
    """Energy per operation in pJ (45nm figures)."""

    e_mac: float = E_MAC_PJ
    e_add: float = E_ADD_PJ

    def __post_init__(self):
        if not (self.e_mac > 0 and self.e_add > 0):
            raise ValueError(f"Operation energies must be positive, got {self.e_mac}, {self.e_add}")


def count_ann_ops(spec):
    """Multiply-accumulates per image for every parameterized layer, classifier last."""
    ops = []
    for stage in resolve_stages(spec):
        if stage.kind == "conv":
            c_out, h_out, w_out = stage.affine_shape
            ops.append(stage.kernel * stage.kernel * stage.in_shape[0] * h_out * w_out * c_out)
        else:
            ops.append(stage.in_features * stage.out)
    return ops


def spike_rates(counts_per_layer, time_steps=None):
    """Mean spikes per neuron over the whole window, one value per layer."""
    if len(counts_per_layer) == 0:
        raise ValueError("spike_rates needs the counts of at least one layer")
    rates = []
    for counts in counts_per_layer:
        counts = np.asarray(getattr(counts, "counts", counts))
        if time_steps is not None and counts.size and counts.max() > time_steps:
            raise ValueError(f"Spike counts exceed the window of {time_steps} steps")
        rates.append(float(counts.sum() / counts.size) if counts.size else 0.0)
    return rates


def s_ops(a_ops, rates):
    """Synaptic operations: ``r * A`` for hidden layers, the classifier keeps ``A``."""
    if len(a_ops) != len(rates) + 1:
        raise ValueError(f"Expected {len(a_ops) - 1} hidden-layer rates, got {len(rates)}")
    return [float(r * a) for r, a in zip(rates, a_ops[:-1])] + [float(a_ops[-1])]


def energy_ratio(a_ops, s_ops_per_layer, model=None):
    """ANN energy over SNN energy; the first layer and the classifier are charged as MACs."""
    model = model or OpsModel()
    if len(a_ops) == 0 or len(a_ops) != len(s_ops_per_layer):
        raise ValueError("energy_ratio needs matching, non-empty A_ops and S_ops lists")
    ann_energy = model.e_mac * float(np.sum(a_ops, dtype=np.float64))
    if len(a_ops) == 1:
        snn_energy = model.e_mac * float(s_ops_per_layer[0])
    else:
        encoder = float(s_ops_per_layer[0])
        classifier = float(s_ops_per_layer[-1])
        hidden = float(np.sum(s_ops_per_layer[1:-1], dtype=np.float64))
        snn_energy = model.e_mac * (encoder + classifier) + model.e_add * hidden
    assert snn_energy > 0, "SNN energy must be positive when a classifier exists"
    return ann_energy / snn_energy


def noisy_histogram(counts, relu_out, time_steps):
    """Number of noisy positions holding each spike count ``1..T``."""
    counts = np.asarray(getattr(counts, "counts", counts))
    noisy = counts[noisy_positions(counts, relu_out)]
    tally = np.bincount(noisy.astype(np.int64), minlength=time_steps + 1)
    return {k: int(tally[k]) for k in range(1, time_steps + 1)}


def _batches(dataset, batch_size):
    for start in range(0, len(dataset), batch_size):
        yield dataset.features[start:start + batch_size], dataset.labels[start:start + batch_size]


@dataclass
class SpikeStatistics:
    images: int
    spikes: list[int]
    noisy_spikes: list[int]
    histograms: list[dict]
    rates: list[float]
    ann_loss: float
    snn_loss: float
    predictions: np.ndarray = field(repr=False)

    def spikes_per_image(self):
        return [s / self.images for s in self.spikes]

    def noisy_per_image(self):
        return [s / self.images for s in self.noisy_spikes]


def collect_spike_statistics(net, dataset, batch_size=DEFAULT_EVAL_BATCH):
    """One dual-branch pass over ``dataset`` gathering spike, noise and loss totals."""
    layers = len(net.layers)
    spikes = [0] * layers
    noisy = [0] * layers
    histograms = [{k: 0 for k in range(1, net.time_steps + 1)} for _ in range(layers)]
    rate_sums = [0.0] * layers
    ann_loss_sum = 0.0
    snn_loss_sum = 0.0
    predictions = []
    for features, labels in _batches(dataset, batch_size):
        result = s2a_forward(net, features)
        for i, (counts, relu_out) in enumerate(zip(result.counts, result.relu_outs)):
            spikes[i] += int(counts.sum())
            noisy[i] += int(counts[noisy_positions(counts, relu_out)].sum())
            for k, n in noisy_histogram(counts, relu_out, net.time_steps).items():
                histograms[i][k] += n
        if result.counts:
            for i, rate in enumerate(spike_rates(result.counts, net.time_steps)):
                rate_sums[i] += rate * len(labels)
            snn_out = net.classifier.forward(result.counts[-1].astype(net.dtype))
        else:
            snn_out = result.logits
        ann_loss, _ = softmax_xent(result.logits, labels)
        snn_loss, _ = softmax_xent(snn_out, labels)
        ann_loss_sum += ann_loss * len(labels)
        snn_loss_sum += snn_loss * len(labels)
        predictions.append(np.argmax(snn_out, axis=1))
    images = len(dataset)
    return SpikeStatistics(
        images=images,
        spikes=spikes,
        noisy_spikes=noisy,
        histograms=histograms,
        rates=[r / images for r in rate_sums],
        ann_loss=ann_loss_sum / images,
        snn_loss=snn_loss_sum / images,
        predictions=np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64),
    )


def noisy_spike_report(net, dataset, batch_size=DEFAULT_EVAL_BATCH):
    return collect_spike_statistics(net, dataset, batch_size).histograms


def branch_losses(net, dataset, batch_size=DEFAULT_EVAL_BATCH):
    stats = collect_spike_statistics(net, dataset, batch_size)
    return stats.ann_loss, stats.snn_loss


def layer_spike_activity(net, dataset, batch_size=DEFAULT_EVAL_BATCH):
    """Spikes per image for each layer, from the SNN branch alone."""
    totals = [0] * len(net.layers)
    for features, _ in _batches(dataset, batch_size):
        counts = snn_branch(net, np.asarray(features, dtype=net.dtype))
        for i, c in enumerate(counts):
            totals[i] += int(c.sum())
    return [t / len(dataset) for t in totals]


def predict_dataset(net, dataset, batch_size=DEFAULT_EVAL_BATCH):
    predictions = []
    for features, _ in _batches(dataset, batch_size):
        logits, _ = snn_logits(net, np.asarray(features, dtype=net.dtype))
        predictions.append(np.argmax(logits, axis=1))
    return np.concatenate(predictions)


def evaluate_accuracy(net, dataset, batch_size=DEFAULT_EVAL_BATCH):
    return float(accuracy_score(dataset.labels, predict_dataset(net, dataset, batch_size)))


def weight_shared_comparison(net, dataset, batch_size=DEFAULT_EVAL_BATCH):
    """Accuracy of the shared ReLU ANN, the SNN, and the SNN with ANN-silent spikes removed."""
    ann, snn, denoised = [], [], []
    for features, _ in _batches(dataset, batch_size):
        logits, _ = plain_ann_forward(net, features)
        ann.append(np.argmax(logits, axis=1))
        snn_out, _ = snn_logits(net, np.asarray(features, dtype=net.dtype))
        snn.append(np.argmax(snn_out, axis=1))
        denoised.append(denoised_infer(net, features))
    labels = dataset.labels
    return {
        "ann_accuracy": float(accuracy_score(labels, np.concatenate(ann))),
        "snn_accuracy": float(accuracy_score(labels, np.concatenate(snn))),
        "denoised_snn_accuracy": float(accuracy_score(labels, np.concatenate(denoised))),
    }


@dataclass
class LayerMetrics:
    layer_index: int
    layer_kind: str
    neurons: int
    spikes_per_image: float
    noisy_per_image: float
    a_ops: int
    s_ops: float


@dataclass
class MetricsReport:
    layers: list[LayerMetrics]
    e_mac: float
    e_add: float
    energy_ratio: float
    accuracy: float
    spikes_per_image: float
    noisy_histograms: list[dict] = field(default_factory=list)
    threshold_trajectories: list[list[float]] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        payload = asdict(self)
        payload["noisy_histograms"] = [
            {str(k): v for k, v in hist.items()} for hist in self.noisy_histograms
        ]
        return payload

    @classmethod
    def from_dict(cls, payload):
        return cls(
            layers=[LayerMetrics(**row) for row in payload["layers"]],
            e_mac=payload["e_mac"],
            e_add=payload["e_add"],
            energy_ratio=payload["energy_ratio"],
            accuracy=payload["accuracy"],
            spikes_per_image=payload["spikes_per_image"],
            noisy_histograms=[
                {int(k): v for k, v in hist.items()} for hist in payload.get("noisy_histograms", [])
            ],
            threshold_trajectories=payload.get("threshold_trajectories", []),
            extra=payload.get("extra", {}),
        )

    def to_frame(self):
        return pd.DataFrame([asdict(row) for row in self.layers], columns=METRICS_COLUMNS)

    def energy_frame(self):
        return pd.DataFrame(
            [{"e_mac": self.e_mac, "e_add": self.e_add, "ratio": self.energy_ratio}]
        )

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False)
        return path

    def write_energy_csv(self, path):
        self.energy_frame().to_csv(path, index=False)
        return path


def ratio_from_frame(frame, model=None):
    """Recompute the energy ratio from the per-layer CSV columns."""
    return energy_ratio(frame["a_ops"].tolist(), frame["s_ops"].tolist(), model)


def build_metrics_report(net, dataset, trace=None, model=None, batch_size=DEFAULT_EVAL_BATCH):
    try:
        model = model or OpsModel()
        stats = collect_spike_statistics(net, dataset, batch_size)
        a_ops = count_ann_ops(net.spec)
        s_ops_per_layer = s_ops(a_ops, stats.rates)

        rows = []
        for i, layer in enumerate(net.layers):
            rows.append(
                LayerMetrics(
                    layer_index=i,
                    layer_kind=layer.kind,
                    neurons=layer.stage.neurons,
                    spikes_per_image=stats.spikes[i] / stats.images,
                    noisy_per_image=stats.noisy_spikes[i] / stats.images,
                    a_ops=int(a_ops[i]),
                    s_ops=s_ops_per_layer[i],
                )
            )
        head = net.classifier.stage
        rows.append(
            LayerMetrics(
                layer_index=head.index,
                layer_kind="classifier",
                neurons=head.neurons,
                spikes_per_image=0.0,
                noisy_per_image=0.0,
                a_ops=int(a_ops[-1]),
                s_ops=s_ops_per_layer[-1],
            )
        )
        return MetricsReport(
            layers=rows,
            e_mac=model.e_mac,
            e_add=model.e_add,
            energy_ratio=energy_ratio(a_ops, s_ops_per_layer, model),
            accuracy=float(accuracy_score(dataset.labels, stats.predictions)),
            spikes_per_image=float(sum(stats.spikes) / stats.images),
            noisy_histograms=stats.histograms,
            threshold_trajectories=[list(layer.ata.trajectory) for layer in net.layers],
            extra={
                "ann_loss": stats.ann_loss,
                "snn_loss": stats.snn_loss,
                "spike_rates": stats.rates,
                "layer_spike_activity": layer_spike_activity(net, dataset, batch_size),
                "weight_shared": weight_shared_comparison(net, dataset, batch_size),
                "trace": trace.to_dict() if trace is not None else None,
            },
        )
    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)
