import hashlib
import json
import os
import struct
import sys

import numpy as np

from src.components.batch_norm import BnState
from src.components.network import NetworkSpec, build_network
from src.components.tensor_ops import GradPair
from src.components.threshold import AtaState
from src.exception import CheckpointError, CustomException
from src.logger import logging


CHECKPOINT_MAGIC = b"SPKMAPCK"
CHECKPOINT_VERSION = 1
# magic, version (uint32), header length (uint64), little-endian
_PREAMBLE = struct.Struct("<8sIQ")
_BLOB_DTYPE = np.dtype("<f4")


def _layer_tensors(net):
    tensors = []
    for layer in net.layers:
        prefix = f"layer{layer.index}"
        tensors += [
            (f"{prefix}.weight", layer.weight.value),
            (f"{prefix}.bias", layer.bias.value),
            (f"{prefix}.gamma", layer.bn.gamma.value),
            (f"{prefix}.beta", layer.bn.beta.value),
            (f"{prefix}.mu_ema", layer.bn.mu_ema),
            (f"{prefix}.sigma_ema", layer.bn.sigma_ema),
        ]
    tensors += [
        ("classifier.weight", net.classifier.weight.value),
        ("classifier.bias", net.classifier.bias.value),
    ]
    return tensors


def checkpoint_save(net, path, config=None):
    """Write a versioned checkpoint: JSON header then raw float32 tensor blobs."""
    try:
        records = []
        chunks = []
        offset = 0
        for name, value in _layer_tensors(net):
            data = np.ascontiguousarray(value, dtype=_BLOB_DTYPE).tobytes()
            records.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(data)})
            chunks.append(data)
            offset += len(data)
        blob = b"".join(chunks)

        header = {
            "version": CHECKPOINT_VERSION,
            "dtype": _BLOB_DTYPE.str,
            "spec": net.spec.to_dict(),
            "config": config,
            "tensors": records,
            "thresholds": [float(t) for t in net.thresholds()],
            "ata": [
                {"tau": layer.ata.tau, "alpha": layer.ata.alpha, "epsilon": layer.ata.epsilon}
                for layer in net.layers
            ],
            "bn": [{"alpha_bn": layer.bn.alpha_bn, "eps_bn": layer.bn.eps_bn} for layer in net.layers],
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

        dir_path = os.path.dirname(os.path.abspath(path))
        os.makedirs(dir_path, exist_ok=True)
        with open(path, "wb") as file_obj:
            file_obj.write(_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
            file_obj.write(header_bytes)
            file_obj.write(blob)
        logging.info(f"Checkpoint written to {path} ({len(records)} tensors, {len(blob)} bytes)")
        return path
    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)


def _read_checkpoint(path):
    try:
        with open(path, "rb") as file_obj:
            raw = file_obj.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"Corrupt checkpoint {path}: truncated preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Corrupt checkpoint {path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint version mismatch in {path}: file has {version}, expected {CHECKPOINT_VERSION}"
        )
    start = _PREAMBLE.size
    if len(raw) < start + header_len:
        raise CheckpointError(f"Corrupt checkpoint {path}: truncated header")
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: unreadable header") from e

    blob = raw[start + header_len:]
    expected = sum(record["nbytes"] for record in header["tensors"])
    if len(blob) != expected:
        raise CheckpointError(
            f"Corrupt checkpoint {path}: expected {expected} tensor bytes, found {len(blob)}"
        )
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise CheckpointError(f"Corrupt checkpoint {path}: checksum mismatch")
    return header, blob


def load_checkpoint_config(path):
    header, _ = _read_checkpoint(path)
    return header.get("config")


def checkpoint_load(path):
    """Rebuild the network stored at ``path``; raises ``CheckpointError`` on damage."""
    header, blob = _read_checkpoint(path)
    try:
        spec = NetworkSpec.from_dict(header["spec"])
        net = build_network(spec, dtype=np.float32)
        tensors = {}
        for record in header["tensors"]:
            data = np.frombuffer(blob, dtype=_BLOB_DTYPE, count=record["nbytes"] // 4, offset=record["offset"])
            tensors[record["name"]] = data.reshape(record["shape"]).astype(np.float32)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e

    try:
        for layer, threshold, ata, bn in zip(net.layers, header["thresholds"], header["ata"], header["bn"]):
            prefix = f"layer{layer.index}"
            layer.weight = GradPair(tensors[f"{prefix}.weight"])
            layer.bias = GradPair(tensors[f"{prefix}.bias"])
            layer.bn = BnState(
                gamma=GradPair(tensors[f"{prefix}.gamma"]),
                beta=GradPair(tensors[f"{prefix}.beta"]),
                mu_ema=tensors[f"{prefix}.mu_ema"],
                sigma_ema=tensors[f"{prefix}.sigma_ema"],
                alpha_bn=bn["alpha_bn"],
                eps_bn=bn["eps_bn"],
            )
            layer.ata = AtaState(threshold, tau=ata["tau"], alpha=ata["alpha"], epsilon=ata["epsilon"])
            layer.neuron.set_threshold(threshold)
        net.classifier.weight = GradPair(tensors["classifier.weight"])
        net.classifier.bias = GradPair(tensors["classifier.bias"])
    except KeyError as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: missing entry {e}") from e
    except ValueError as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e
    logging.info(f"Checkpoint loaded from {path}")
    return net
