"""Versioned JSON envelope shared by every model type."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import FormatVersionError, ModelParseError

FORMAT_VERSION = 1
ENVELOPE_KEYS = {"format_version", "model_type", "config", "vocabulary", "parameters", "provenance"}


def config_digest(config):
    """Stable short digest of a JSON-serialisable config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def encode_parameters(params):
    return {p.name: {"shape": list(p.value.shape), "data": p.value.reshape(-1).tolist()} for p in params}


def decode_array(entry, name):
    try:
        shape = tuple(int(s) for s in entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"parameter {name!r} is malformed: {exc}") from None
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ModelParseError(f"parameter {name!r}: {data.size} values for shape {shape}")
    return data.reshape(shape)


def dump_envelope(model_type, config, vocabulary, params, provenance=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "model_type": model_type,
        "config": config,
        "vocabulary": vocabulary.to_dict(),
        "parameters": encode_parameters(params),
        "provenance": dict(provenance or {}),
    }
    doc["provenance"].setdefault("config_digest", config_digest(config))
    return json.dumps(doc, sort_keys=True)


def read_envelope(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"model file is not valid JSON ({exc.msg} at char {exc.pos})") from None
    if not isinstance(doc, dict):
        raise ModelParseError("model file must contain a JSON object")
    unknown = set(doc) - ENVELOPE_KEYS
    if unknown:
        raise ModelParseError(f"unknown top-level keys {sorted(unknown)}")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"model format_version {version!r} is not supported (expected {FORMAT_VERSION})")
    missing = ENVELOPE_KEYS - set(doc)
    if missing:
        raise ModelParseError(f"model file is missing keys {sorted(missing)}")
    return doc


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())


def load_model(path):
    """Load any model type written by :func:`save_model`."""
    from .baselines import BowLrModel, DeeprMiniModel
    from .model import RiskModel

    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    doc = read_envelope(text)
    kinds = {"mdmt": RiskModel, "mdmtp": RiskModel, "bow-lr": BowLrModel, "deepr-mini": DeeprMiniModel}
    cls = kinds.get(doc["model_type"])
    if cls is None:
        raise ModelParseError(f"unknown model_type {doc['model_type']!r}")
    return cls.from_document(doc)
