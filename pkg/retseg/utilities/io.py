"""
File helpers: atomic JSON writes and PNG/TIF/GIF image IO.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Union

import numpy as np
from PIL import Image

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write text to path through a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def dumps_json(payload: Any) -> str:
    """Deterministic JSON: sorted keys, fixed indent, trailing newline."""
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + '\n'


def atomic_write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, dumps_json(payload))


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding='utf-8'))


def read_rgb(path: PathLike) -> np.ndarray:
    """Read an image as H x W x 3 float32 in [0, 1]."""
    with Image.open(path) as img:
        img.load()
        array = np.asarray(img.convert('RGB'), dtype=np.float32)
    return array / 255.0


def read_mask(path: PathLike) -> np.ndarray:
    """Read a mask image and binarize it (> half range -> 1) as uint8."""
    with Image.open(path) as img:
        img.load()
        array = np.asarray(img.convert('L'), dtype=np.uint8)
    return (array > 127).astype(np.uint8)


def write_rgb(path: PathLike, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)
    return path


def write_mask(path: PathLike, mask: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(data).save(path)
    return path


def write_probability_png16(path: PathLike, probability: np.ndarray) -> Path:
    """Store a probability map in [0, 1] as a 16-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(np.asarray(probability, dtype=np.float64) * 65535.0), 0, 65535)
    Image.fromarray(data.astype(np.uint16)).save(path)
    return path


def read_probability_png16(path: PathLike) -> np.ndarray:
    with Image.open(path) as img:
        img.load()
        array = np.asarray(img, dtype=np.float64)
    return (array / 65535.0).astype(np.float32)
