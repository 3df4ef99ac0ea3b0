"""Mask and image file IO: 8-bit indexed PNG with a JSON palette sidecar."""

import json
import numpy as np
from pathlib import Path
from PIL import Image

# distinct display colors for up to 16 classes
PALETTE = [
    (0, 0, 0), (224, 187, 162), (255, 255, 255), (66, 134, 244),
    (196, 64, 64), (90, 60, 40), (255, 200, 40), (40, 220, 200),
    (160, 60, 200), (120, 200, 60), (240, 120, 180), (60, 90, 160),
    (200, 200, 80), (100, 100, 100), (20, 140, 90), (240, 90, 30),
]


def save_mask_png(mask, path, class_names=None):
    mask = np.asarray(mask, dtype=np.uint8)
    img = Image.fromarray(mask, mode="P")
    flat = [c for rgb in PALETTE for c in rgb]
    img.putpalette(flat + [0] * (768 - len(flat)))
    path = Path(path)
    img.save(path)
    sidecar = {
        "palette": PALETTE[: int(mask.max()) + 1],
        "class_names": list(class_names) if class_names else None,
    }
    path.with_suffix(".palette.json").write_text(json.dumps(sidecar, indent=2))


def load_mask_png(path):
    return np.array(Image.open(path), dtype=np.uint8)


def save_rgb_png(rgb, path):
    """rgb is (3, H, W) float in [0,1]."""
    arr = np.clip(np.asarray(rgb), 0.0, 1.0)
    img = (arr.transpose(1, 2, 0) * 255).round().astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path)


def rgb_png_bytes(rgb) -> bytes:
    """PNG-encode a (3, H, W) float image in memory."""
    import io
    arr = np.clip(np.asarray(rgb), 0.0, 1.0)
    img = (arr.transpose(1, 2, 0) * 255).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_rgb_png(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)
