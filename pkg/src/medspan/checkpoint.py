"""Model checkpoint serialization.

Layout: 8-byte magic, 4-byte little-endian header length, JSON header
(format version, model config, thresholds, ordered parameter names and
shapes), then all parameter arrays concatenated as float64 little-endian
in header order.  The trailing payload length is validated so a truncated
file fails loudly instead of loading garbage.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import EmbeddingSource, ExtractionThresholds, ModelConfig, ModelParams
from .projections import ProjectionConfig

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

_MAGIC = b"MSPANCK1"
_VERSION = 1


class CheckpointError(Exception):
    pass


def _config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "scorer": cfg.scorer,
        "projection": {
            "kind": cfg.projection.kind,
            "temperature": cfg.projection.temperature,
            "tv_weight": cfg.projection.tv_weight,
        },
        "embed_dim": cfg.embed_dim,
        "seed": cfg.seed,
        "classifier_hidden": cfg.classifier_hidden,
        "tascore_dim": cfg.tascore_dim,
        "tascore_layers": cfg.tascore_layers,
        "tascore_head_hidden": cfg.tascore_head_hidden,
        "dropout_p": cfg.dropout_p,
        "max_seq_len": cfg.max_seq_len,
    }


def _config_from_dict(d: dict) -> ModelConfig:
    proj = d["projection"]
    return ModelConfig(
        scorer=d["scorer"],
        projection=ProjectionConfig(
            kind=proj["kind"],
            temperature=proj["temperature"],
            tv_weight=proj["tv_weight"],
        ),
        embed_dim=d["embed_dim"],
        seed=d["seed"],
        classifier_hidden=d["classifier_hidden"],
        tascore_dim=d["tascore_dim"],
        tascore_layers=d["tascore_layers"],
        tascore_head_hidden=d["tascore_head_hidden"],
        dropout_p=d["dropout_p"],
        max_seq_len=d["max_seq_len"],
    )


def save_checkpoint(path, params: ModelParams, thresholds: ExtractionThresholds | None = None) -> None:
    named = params.named_parameters()
    header = {
        "version": _VERSION,
        "config": _config_to_dict(params.config),
        "thresholds": None
        if thresholds is None
        else {"frequency": thresholds.frequency, "route": thresholds.route, "change": thresholds.change},
        "parameters": [{"name": n, "shape": list(t.data.shape)} for n, t in named],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path, embedding: EmbeddingSource | None = None):
    """Returns (ModelParams, ExtractionThresholds or None)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_MAGIC) + 4 or raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[len(_MAGIC) : len(_MAGIC) + 4])
    start = len(_MAGIC) + 4
    if len(raw) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")

    config = _config_from_dict(header["config"])
    params = ModelParams.init(config, embedding=embedding)
    named = params.named_parameters()
    specs = header["parameters"]
    if [n for n, _ in named] != [s["name"] for s in specs]:
        raise CheckpointError(f"{path}: parameter names do not match the configured model")

    payload = raw[start + hlen :]
    expected = sum(int(np.prod(s["shape"])) if s["shape"] else 1 for s in specs) * 8
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    offset = 0
    for (name, tensor), spec in zip(named, specs):
        shape = tuple(spec["shape"])
        if tensor.data.shape != shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}: {shape} vs {tensor.data.shape}")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        tensor.data = arr.astype(np.float64).copy()
        offset += count * 8

    th = header["thresholds"]
    thresholds = None if th is None else ExtractionThresholds(th["frequency"], th["route"], th["change"])
    return params, thresholds
