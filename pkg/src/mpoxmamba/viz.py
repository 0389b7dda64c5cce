"""Heatmap rendering: colormap and alpha-blended overlays for CAM output."""

from __future__ import annotations

from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

from .model import bilinear_resize


def heat_colormap(values: np.ndarray) -> np.ndarray:
    """Map [0,1] scores to a blue-cyan-yellow-red ramp, uint8 [.., 3]."""
    v = np.clip(values, 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return (np.stack([r, g, b], axis=-1) * 255.0 + 0.5).astype(np.uint8)


def overlay_heatmap(image: np.ndarray, cam: np.ndarray, alpha: float = 0.4) -> np.ndarray:
    """Blend a CAM over an RGB image: alpha*heat + (1-alpha)*image.

    ``image`` is uint8 [H, W, 3]; ``cam`` is any [h, w] float map in [0,1]
    and is resized to the image dimensions first.
    """
    h, w = image.shape[:2]
    resized = bilinear_resize(cam.astype(np.float64), (h, w))
    heat = heat_colormap(resized).astype(np.float64)
    blended = alpha * heat + (1.0 - alpha) * image.astype(np.float64)
    return np.clip(blended + 0.5, 0, 255).astype(np.uint8)


def save_overlay_png(image_path: Union[str, Path], cam: np.ndarray,
                     out_path: Union[str, Path], alpha: float = 0.4) -> Tuple[int, int]:
    """Write the blended overlay at the input image's own dimensions."""
    with Image.open(image_path) as img:
        rgb = np.asarray(img.convert("RGB"))
    blended = overlay_heatmap(rgb, cam, alpha=alpha)
    Image.fromarray(blended).save(out_path, format="PNG")
    return blended.shape[1], blended.shape[0]
