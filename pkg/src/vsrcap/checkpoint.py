"""Checkpoints: named parameter arrays, shape metadata, config fingerprint."""

from __future__ import annotations

from pathlib import Path

import torch

from .errors import CheckpointMismatch

_FORMAT = 1


def save_checkpoint(path, module: torch.nn.Module, fingerprint: str,
                    extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = module.state_dict()
    payload = {
        "format": _FORMAT,
        "fingerprint": fingerprint,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "state": state,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, module: torch.nn.Module, fingerprint: str) -> dict:
    """Load parameters into module; refuse on fingerprint or shape mismatch."""
    path = Path(path)
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("fingerprint") != fingerprint:
        raise CheckpointMismatch(
            f"{path}: checkpoint fingerprint {payload.get('fingerprint')!r} does not "
            f"match the current configuration ({fingerprint!r})")
    state = payload["state"]
    own = module.state_dict()
    if set(state) != set(own):
        missing = sorted(set(own) - set(state))
        surplus = sorted(set(state) - set(own))
        raise CheckpointMismatch(f"{path}: parameter names differ "
                                 f"(missing {missing}, surplus {surplus})")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(own[name].shape):
            raise CheckpointMismatch(
                f"{path}: shape of {name} is {tuple(tensor.shape)}, "
                f"expected {tuple(own[name].shape)}")
    module.load_state_dict(state)
    return payload.get("extra", {})
