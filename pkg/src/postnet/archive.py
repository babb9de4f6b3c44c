"""JSON persistence for trained models.

Floats are written with ``repr`` precision (Python's json does this), so a
loaded model reproduces eval-mode predictions bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import BatchNormState
from .data import DataError, MinMaxScaler
from .dirichlet import ClassCounts
from .encoder import EncoderConfig, EncoderParams
from .flows import ClassDensitySet
from .training import EvidenceHead, PosteriorModel

FORMAT_VERSION = 1


class ArchiveError(DataError):
    pass


def _bn_to_dict(bn: BatchNormState | None):
    if bn is None:
        return None
    return {
        "gamma": bn.gamma.data.tolist(),
        "beta": bn.beta.data.tolist(),
        "running_mean": bn.running_mean.tolist(),
        "running_var": bn.running_var.tolist(),
        "eps": bn.eps,
        "momentum": bn.momentum,
        "num_batches": bn.num_batches,
    }


def _bn_from_dict(d) -> BatchNormState | None:
    if d is None:
        return None
    return BatchNormState(
        gamma=ag.parameter(np.asarray(d["gamma"], dtype=np.float64)),
        beta=ag.parameter(np.asarray(d["beta"], dtype=np.float64)),
        running_mean=np.asarray(d["running_mean"], dtype=np.float64),
        running_var=np.asarray(d["running_var"], dtype=np.float64),
        eps=float(d["eps"]),
        momentum=float(d["momentum"]),
        num_batches=int(d["num_batches"]),
    )


def model_to_dict(model: PosteriorModel) -> dict:
    enc = model.encoder
    c = enc.config
    if isinstance(model.head, EvidenceHead):
        head = model.head.to_dict()
    else:
        head = {"kind": "class_densities", **model.head.to_dict()}
    return {
        "format_version": FORMAT_VERSION,
        "encoder": {
            "config": {
                "input_dim": c.input_dim,
                "hidden_dims": list(c.hidden_dims),
                "latent_dim": c.latent_dim,
                "activation": c.activation,
                "final_batchnorm": c.final_batchnorm,
                "seed": c.seed,
            },
            "weights": [w.data.tolist() for w in enc.weights],
            "biases": [b.data.tolist() for b in enc.biases],
            "batchnorm": _bn_to_dict(enc.batchnorm),
        },
        "head": head,
        "class_counts": model.counts.counts.tolist(),
        "beta_prior": np.asarray(model.beta_prior).tolist(),
        "scaler": None if model.scaler is None else model.scaler.to_dict(),
        "class_names": list(model.class_names),
        "config": model.config,
    }


def model_from_dict(d: dict) -> PosteriorModel:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        e = d["encoder"]
        enc = EncoderParams(
            EncoderConfig(**e["config"]),
            [ag.parameter(np.asarray(w, dtype=np.float64)) for w in e["weights"]],
            [ag.parameter(np.asarray(b, dtype=np.float64)) for b in e["biases"]],
            _bn_from_dict(e["batchnorm"]),
        )
        h = d["head"]
        head = EvidenceHead.from_dict(h) if h["kind"] == EvidenceHead.kind else ClassDensitySet.from_dict(h)
        scaler = None if d["scaler"] is None else MinMaxScaler.from_dict(d["scaler"])
        return PosteriorModel(
            enc,
            head,
            ClassCounts(np.asarray(d["class_counts"], dtype=np.float64)),
            np.asarray(d["beta_prior"], dtype=np.float64),
            scaler,
            list(d["class_names"]),
            dict(d.get("config") or {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ArchiveError):
            raise
        raise ArchiveError(f"malformed model archive: {exc!r}") from exc


def save_model(model: PosteriorModel, path) -> None:
    text = json.dumps(model_to_dict(model), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> PosteriorModel:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArchiveError(f"cannot read model file {path}: {exc.strerror}") from exc
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"model file {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise ArchiveError(f"model file {path} does not hold an object")
    return model_from_dict(d)
