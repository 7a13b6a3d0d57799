"""
Network checkpoints: a torch state dict plus a JSON sidecar.

``save_checkpoint(net, 'runs/x/best', ...)`` writes ``runs/x/best.pt`` and
``runs/x/best.json``; the sidecar holds {config, epoch, rng_seed, metrics}.
"""

from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import structlog
import torch

from retseg.ai.saunet import SAUNet, build_saunet
from retseg.utilities.config import SAUNetConfig
from retseg.utilities.exceptions import CheckpointError
from retseg.utilities.io import atomic_write_json, read_json

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]


def checkpoint_paths(path: PathLike) -> Tuple[Path, Path]:
    """Return (weights, sidecar) paths for a checkpoint stem or either file."""
    path = Path(path)
    if path.suffix in ('.pt', '.json'):
        path = path.with_suffix('')
    return path.with_name(path.name + '.pt'), path.with_name(path.name + '.json')


def save_checkpoint(
    net: SAUNet,
    path: PathLike,
    epoch: int,
    rng_seed: int,
    metrics: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write weights and sidecar; returns the weights path."""
    weights, sidecar = checkpoint_paths(path)
    weights.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu().clone() for k, v in net.state_dict().items()}
    tmp = weights.with_name(f'.{weights.name}.tmp')
    torch.save(state, tmp)
    tmp.replace(weights)
    atomic_write_json(sidecar, {
        'config': net.config.to_dict(),
        'epoch': epoch,
        'rng_seed': rng_seed,
        'metrics': metrics or {},
    })
    logger.debug('checkpoint_saved', path=str(weights), epoch=epoch)
    return weights


def read_checkpoint_metadata(path: PathLike) -> Dict[str, Any]:
    weights, sidecar = checkpoint_paths(path)
    if not weights.exists() or not sidecar.exists():
        raise CheckpointError(f"Checkpoint not found: {weights}", str(weights))
    return read_json(sidecar)


def config_from_metadata(metadata: Dict[str, Any], path: Optional[str] = None) -> SAUNetConfig:
    known = {f.name for f in fields(SAUNetConfig)}
    raw = metadata.get('config') or {}
    unknown = set(raw) - known
    if unknown:
        raise CheckpointError(f"Checkpoint config has unknown fields: {sorted(unknown)}", path)
    return SAUNetConfig(**raw)


def check_compatible(saved: SAUNetConfig, expected: SAUNetConfig, path: Optional[str] = None) -> None:
    """Raise CheckpointError unless the two network configs agree field by field."""
    saved_dict, expected_dict = saved.to_dict(), expected.to_dict()
    diff = sorted(k for k in expected_dict if saved_dict.get(k) != expected_dict[k])
    if diff:
        raise CheckpointError(
            f"Checkpoint config differs from the network config in: {', '.join(diff)}",
            path,
        )


def load_checkpoint(path: PathLike, expected_config: Optional[SAUNetConfig] = None) -> SAUNet:
    """
    Rebuild a network from a checkpoint, in eval mode.

    Raises:
        CheckpointError: If files are missing, unreadable or the config differs
    """
    weights, _ = checkpoint_paths(path)
    metadata = read_checkpoint_metadata(path)
    config = config_from_metadata(metadata, str(weights))
    if expected_config is not None:
        check_compatible(config, expected_config, str(weights))

    net = build_saunet(config)
    try:
        state = torch.load(weights, map_location='cpu', weights_only=True)
        net.load_state_dict(state)
    except (RuntimeError, OSError, EOFError) as exc:
        raise CheckpointError(f"Cannot load checkpoint {weights}: {exc}", str(weights))
    net.eval()
    logger.debug('checkpoint_loaded', path=str(weights), epoch=metadata.get('epoch'))
    return net


def load_weights_into(net: SAUNet, path: PathLike) -> SAUNet:
    """Copy checkpoint parameters into an existing network after a config check."""
    loaded = load_checkpoint(path, expected_config=net.config)
    net.load_state_dict(loaded.state_dict())
    return net
