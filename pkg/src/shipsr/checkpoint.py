"""Self-describing checkpoint container shared by all trained components."""

from pathlib import Path

import torch

FORMAT_VERSION = 1


def save_container(path, kind: str, config: dict, state: dict, **extra) -> None:
    """Write a versioned checkpoint: config snapshot, parameter blobs, and
    any component-specific payload (schedule, taxonomy, rng state)."""
    payload = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "state": state,
        "torch_rng_state": torch.get_rng_state(),
    }
    payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_container(path, kind: str) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version is None:
        raise ValueError(f"checkpoint {path} has no version field")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if payload.get("kind") != kind:
        raise ValueError(f"checkpoint {path} is a {payload.get('kind')!r} container, expected {kind!r}")
    return payload
