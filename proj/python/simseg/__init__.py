"""PET/CT tumour segmentation with a slice interaction module."""

import json

from ._simseg import (
    SIM,
    CheckpointError,
    ConfigError,
    DataError,
    Error,
    InputError,
    Network,
    augment,
    bce_loss,
    composite_loss,
    dice_loss,
    evaluate_pair,
    generate_phantom,
    network_config_json,
    patient_split,
    qc_filter,
    window_ct,
)


def network_config(mode="2.5d", use_sim=True):
    """Default network configuration as a dict."""
    return json.loads(network_config_json(mode, use_sim))


def build_network(config=None, seed=0):
    """Network from a config dict (see network_config) or the 2.5D default."""
    return Network(json.dumps(config) if config is not None else "", seed)


__all__ = [
    "SIM",
    "Network",
    "Error",
    "ConfigError",
    "InputError",
    "DataError",
    "CheckpointError",
    "augment",
    "bce_loss",
    "build_network",
    "composite_loss",
    "dice_loss",
    "evaluate_pair",
    "generate_phantom",
    "network_config",
    "patient_split",
    "qc_filter",
    "window_ct",
]
