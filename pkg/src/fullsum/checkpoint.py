"""Model checkpoints.

A checkpoint is a single ``.npz`` archive: one JSON metadata entry plus the
raw float64 parameter arrays, so a save/load round trip is bit-exact.  The
format is versioned; loading rejects unknown versions instead of guessing.
"""

from __future__ import annotations

import json

import numpy as np

from .encoder import EncoderConfig, EncoderWeights
from .lattice import Scales
from .topology import LabelInventory
from .trainer import Model
from .transitions import TransitionParamization, TransitionParams, build_slot_table

FORMAT_NAME = "fullsum-model"
FORMAT_VERSION = 1


def save_model(path, model: Model) -> None:
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "inventory": {
            "n_labels": model.inventory.n_labels,
            "silence_id": model.inventory.silence_id,
            "substates_per_speech_label": model.inventory.substates_per_speech_label,
            "substates_for_silence": model.inventory.substates_for_silence,
            "names": list(model.inventory.names) if model.inventory.names else None,
        },
        "encoder": {
            "input_dim": model.encoder_config.input_dim,
            "output_dim": model.encoder_config.output_dim,
            "hidden_layers": list(model.encoder_config.hidden_layers),
            "activation": model.encoder_config.activation,
            "context_window": model.encoder_config.context_window,
            "dropout_rate": model.encoder_config.dropout_rate,
        },
        "transitions": {
            "kind": model.transitions.paramization.kind,
            "head_input_dim": model.transitions.paramization.head_input_dim,
        },
        "scales": {"lpm": model.scales.lpm_scale, "tm": model.scales.tm_scale},
        "prior_scale": model.prior_scale,
        "num_encoder_layers": len(model.encoder.layers),
        "has_tm_weights": model.transitions.weights is not None,
        "has_log_prior": model.log_prior is not None,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for i, (W, b) in enumerate(model.encoder.layers):
        arrays[f"enc_W{i}"] = W
        arrays[f"enc_b{i}"] = b
    arrays["tm_logits"] = model.transitions.logits
    if model.transitions.weights is not None:
        arrays["tm_weights"] = model.transitions.weights
    if model.log_prior is not None:
        arrays["log_prior"] = model.log_prior
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_model(path) -> Model:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: not a {FORMAT_NAME} checkpoint")
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(
                f"{path}: checkpoint version {meta.get('version')!r}, "
                f"expected {FORMAT_VERSION}"
            )
        inv_meta = meta["inventory"]
        inventory = LabelInventory(
            n_labels=inv_meta["n_labels"],
            silence_id=inv_meta["silence_id"],
            substates_per_speech_label=inv_meta["substates_per_speech_label"],
            substates_for_silence=inv_meta["substates_for_silence"],
            names=tuple(inv_meta["names"]) if inv_meta["names"] else None,
        )
        enc_meta = meta["encoder"]
        encoder_config = EncoderConfig(
            input_dim=enc_meta["input_dim"],
            output_dim=enc_meta["output_dim"],
            hidden_layers=tuple(enc_meta["hidden_layers"]),
            activation=enc_meta["activation"],
            context_window=enc_meta["context_window"],
            dropout_rate=enc_meta["dropout_rate"],
        )
        layers = [
            (data[f"enc_W{i}"].copy(), data[f"enc_b{i}"].copy())
            for i in range(meta["num_encoder_layers"])
        ]
        paramization = TransitionParamization(
            kind=meta["transitions"]["kind"],
            head_input_dim=meta["transitions"]["head_input_dim"],
        )
        transitions = TransitionParams(
            paramization=paramization,
            table=build_slot_table(paramization, inventory),
            logits=data["tm_logits"].copy(),
            weights=data["tm_weights"].copy() if meta["has_tm_weights"] else None,
        )
        log_prior = data["log_prior"].copy() if meta["has_log_prior"] else None
    return Model(
        inventory=inventory,
        encoder_config=encoder_config,
        encoder=EncoderWeights(layers),
        transitions=transitions,
        log_prior=log_prior,
        scales=Scales(lpm_scale=meta["scales"]["lpm"], tm_scale=meta["scales"]["tm"]),
        prior_scale=meta["prior_scale"],
    )
