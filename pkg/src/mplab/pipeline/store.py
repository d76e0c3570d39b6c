"""Checkpoint files for the prediction models and their training logs.

Every checkpoint is self-contained: a transfer network carries its prior
network, and an FLN/EPN carries both.
"""

from __future__ import annotations

from pathlib import Path

from ..tinynet import checkpoint_bytes, parse_checkpoint
from .models import FuturePredictor, RpnModel, RtnModel


def model_checkpoint(model) -> tuple[dict, dict]:
    """``(networks, metadata)`` for any of the four model kinds."""
    if isinstance(model, RpnModel):
        return {"rpn": model.net}, {"kind": "rpn", "class_id": model.class_id,
                                    "frame_size": model.frame_size, "n": model.n}
    if isinstance(model, RtnModel):
        nets, meta = model_checkpoint(model.rpn)
        nets["rtn"] = model.net
        meta["kind"] = "rtn"
        return nets, meta
    if isinstance(model, FuturePredictor):
        nets, meta = model_checkpoint(model.rtn) if model.rtn is not None else ({}, {})
        nets["sampler"] = model.sampler
        if model.fitter is not None:
            nets["fitter"] = model.fitter
        meta.update(kind=model.kind, predictor=True, class_id=model.class_id,
                    observe=model.observe, horizon=model.horizon, K=model.K,
                    frame_size=model.frame_size, with_prior=model.with_prior,
                    bayesian=model.bayesian)
        return nets, meta
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def model_bytes(model) -> bytes:
    nets, meta = model_checkpoint(model)
    return checkpoint_bytes(nets, meta)


def save_model(model, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def model_from_bytes(data: bytes):
    nets, meta = parse_checkpoint(data)
    kind = meta.get("kind")
    rpn = RpnModel(nets["rpn"], meta["class_id"], meta["frame_size"], meta["n"]) if "rpn" in nets else None
    rtn = RtnModel(nets["rtn"], rpn) if "rtn" in nets else None
    if meta.get("predictor"):
        return FuturePredictor(kind, nets["sampler"], nets.get("fitter"), meta["class_id"],
                               meta["observe"], meta["horizon"], meta["K"], meta["frame_size"],
                               meta["with_prior"], rtn, meta["bayesian"])
    if kind == "rtn":
        return rtn
    if kind == "rpn":
        return rpn
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())


def log_text(log) -> str:
    """Training log as ``step,k,loss`` lines."""
    lines = ["step,k,loss"] + [f"{s},{k},{loss:.9g}" for s, k, loss in log]
    return "\n".join(lines) + "\n"


def write_log(log, path) -> None:
    Path(path).write_text(log_text(log))
