"""Skeleton representation learning: data, encoder, losses, training and evaluation."""

import json

from . import _core
from ._core import (
    Model,
    Sequence,
    autocov_term,
    detection_clips,
    effective_rank,
    gradient_check,
    gradient_check_components,
    load_dataset,
    load_model,
    save_dataset,
    standardize_columns,
    synthetic_dataset,
    variance_term,
    xcorr_term,
)

__all__ = [
    "Model", "Sequence", "autocov_term", "build_model", "config_of", "default_config", "detection_clips",
    "effective_rank", "fd_loss", "gradient_check", "gradient_check_components", "knn_retrieve", "linear_probe",
    "load_dataset", "load_model", "pretrain", "save_dataset", "standardize_columns", "synthetic_dataset",
    "total_loss", "variance_term", "xcorr_term",
]


def _dump(config):
    return json.dumps(config or {})


def default_config():
    return json.loads(_core.default_config())


def config_of(model):
    return json.loads(model.config)


def build_model(config=None):
    return _core.build_model(_dump(config))


def fd_loss(views, loss=None):
    """Loss of one domain. ``loss`` holds overrides for the loss section."""
    return _core.fd_loss(list(views), _dump({"loss": loss} if loss else None))


def total_loss(instance, spatial, temporal, loss=None):
    return _core.total_loss(list(instance), list(spatial), list(temporal), _dump({"loss": loss} if loss else None))


def pretrain(data, config=None, out_dir=None):
    """Returns the trained model and the per-step total loss."""
    return _core.pretrain(data, _dump(config), out_dir)


def linear_probe(model, train, test, epochs=300):
    return json.loads(_core.linear_probe(model, train, test, epochs))


def knn_retrieve(model, gallery, queries, k=1):
    return json.loads(_core.knn_retrieve(model, gallery, queries, k))
