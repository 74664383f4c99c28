"""Image file loading: 8-bit PNG or the raw float wire format (count=1)."""
from __future__ import annotations

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from . import wire
from .classifiers import Image
from .errors import MalformedImage
from .masks import ImageGeometry

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def load_image(path: str) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(PNG_MAGIC)] == PNG_MAGIC:
        try:
            pil = PILImage.open(path)
        except UnidentifiedImageError as exc:
            raise MalformedImage(f"{path}: {exc}") from exc
        arr = np.asarray(pil)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.dtype != np.uint8:
            raise MalformedImage(f"{path}: only 8-bit PNGs are supported")
        pixels = arr.astype(np.float32) / 255.0
    elif data[:4] == wire.MAGIC:
        batch = wire.decode_request(data)
        if batch.shape[0] != 1:
            raise MalformedImage(f"{path}: raw image file must contain exactly 1 image")
        pixels = batch[0]
    else:
        raise MalformedImage(f"{path}: neither PNG nor raw float image")
    h, w, c = pixels.shape
    return Image(ImageGeometry(height=h, width=w, channels=c), pixels)


def save_raw_image(img: Image, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(wire.encode_request(img.pixels[None, ...]))


def save_png_image(img: Image, path: str) -> None:
    arr = np.rint(img.pixels * 255).astype(np.uint8)
    if arr.shape[2] == 1:
        pil = PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(arr, mode="RGB")
    pil.save(path, format="PNG")
