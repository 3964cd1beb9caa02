"""Model checkpoint persistence.

A checkpoint is a single JSON header line (dims, hyperparameters, feature
normalization statistics, parameter layout) terminated by a newline and
followed by the raw little-endian float64 parameter payload, concatenated in
the order the header lists. The header records the total parameter count so
truncation is detected on load.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import CheckpointFormatError
from .features import FeatureNormalizer
from .learned_gain import A3_TAG, LearnedGainModel
from .nn import PARAM_NAMES, RecurrentGainNet
from .split_gain import A4_TAG, SplitGainModel

CHECKPOINT_FORMAT = "gain-model"
CHECKPOINT_VERSION = 1


def _net_header(net: RecurrentGainNet) -> dict:
    return {
        "input_dim": net.input_dim,
        "hidden_dim": net.hidden_dim,
        "output_rows": net.output_rows,
        "output_cols": net.output_cols,
        "params": [{"name": k, "shape": list(net.params[k].shape)} for k in PARAM_NAMES],
    }


def _net_payload(net: RecurrentGainNet) -> list[np.ndarray]:
    return [net.params[k].ravel() for k in PARAM_NAMES]


def _net_from_header(spec: dict, flat: np.ndarray, offset: int):
    params = {}
    for entry in spec["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        params[entry["name"]] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    net = RecurrentGainNet(spec["input_dim"], spec["hidden_dim"],
                           spec["output_rows"], spec["output_cols"], params)
    return net, offset


def save_model(model, path, extra: dict | None = None) -> None:
    header: dict = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "extra": extra or {},
    }
    if isinstance(model, LearnedGainModel):
        header.update({
            "tag": A3_TAG,
            "num_landmarks": model.num_landmarks,
            "net": _net_header(model.net),
            "normalizer": model.normalizer.to_json(),
        })
        payload = _net_payload(model.net)
    elif isinstance(model, SplitGainModel):
        header.update({
            "tag": A4_TAG,
            "num_landmarks": model.num_landmarks,
            "routing": model.routing,
            "nets": {"g1": _net_header(model.g1), "g2": _net_header(model.g2)},
            "normalizers": {"g1": model.norm1.to_json(), "g2": model.norm2.to_json()},
        })
        payload = _net_payload(model.g1) + _net_payload(model.g2)
    else:
        raise TypeError(f"cannot checkpoint object of type {type(model).__name__}")
    flat = np.concatenate(payload) if payload else np.empty(0)
    header["param_count"] = int(flat.size)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(flat.astype("<f8").tobytes())


def load_model(path):
    """Load a checkpoint; returns ``(model, header)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointFormatError("missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"not a {CHECKPOINT_FORMAT} checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {header.get('version')!r}; "
            f"this build reads version {CHECKPOINT_VERSION}")
    body = raw[newline + 1:]
    expected = int(header.get("param_count", -1))
    if expected < 0 or len(body) != 8 * expected:
        raise CheckpointFormatError(
            f"payload holds {len(body) // 8} parameters, header declares {expected}")
    flat = np.frombuffer(body, dtype="<f8")
    tag = header.get("tag")
    if tag == A3_TAG:
        net, offset = _net_from_header(header["net"], flat, 0)
        model = LearnedGainModel(net, FeatureNormalizer.from_json(header["normalizer"]),
                                 header.get("num_landmarks"))
    elif tag == A4_TAG:
        g1, offset = _net_from_header(header["nets"]["g1"], flat, 0)
        g2, offset = _net_from_header(header["nets"]["g2"], flat, offset)
        model = SplitGainModel(
            g1, g2,
            FeatureNormalizer.from_json(header["normalizers"]["g1"]),
            FeatureNormalizer.from_json(header["normalizers"]["g2"]),
            header.get("routing", "split"), header.get("num_landmarks"))
    else:
        raise CheckpointFormatError(f"unknown model tag {tag!r}")
    if offset != expected:
        raise CheckpointFormatError(
            f"parameter layout consumes {offset} values, header declares {expected}")
    return model, header


def checkpoint_metadata(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        return json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}")
