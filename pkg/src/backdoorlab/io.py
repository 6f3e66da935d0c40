"""File formats: raw float tensors, dataset directories, PNG, CIFAR-10 batches.

Raw tensor files carry the magic "BFT1", then H, W, C as unsigned 32-bit
little-endian integers, then H*W*C IEEE-754 float32 little-endian values.
A dataset on disk is a directory of tensor files plus a manifest.json listing
num_classes and one {file, label, provenance} entry per sample, in order.
"""

import base64
import io as _io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .images import Dataset, Image, LabeledSample, Provenance

TENSOR_MAGIC = b"BFT1"


class FormatError(ValueError):
    """Malformed or truncated file content."""


def image_to_bytes(img: Image) -> bytes:
    h, w, c = img.shape
    header = TENSOR_MAGIC + struct.pack("<III", h, w, c)
    return header + img.data.astype("<f4").tobytes()


def image_from_bytes(blob: bytes) -> Image:
    if len(blob) < 16:
        raise FormatError("tensor blob shorter than header")
    if blob[:4] != TENSOR_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {TENSOR_MAGIC!r}")
    h, w, c = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * h * w * c
    if len(blob) != expected:
        raise FormatError(f"tensor blob has {len(blob)} bytes, expected {expected}")
    arr = np.frombuffer(blob[16:], dtype="<f4").reshape(h, w, c)
    return Image(arr)


def write_image(img: Image, path) -> None:
    Path(path).write_bytes(image_to_bytes(img))


def read_image(path) -> Image:
    return image_from_bytes(Path(path).read_bytes())


def save_dataset(data: Dataset, directory) -> None:
    """Write one tensor file per sample plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    width = max(4, len(str(len(data) - 1)))
    for i, s in enumerate(data):
        fname = f"sample_{i:0{width}d}.bft"
        write_image(s.image, directory / fname)
        entries.append({"file": fname, "label": s.label, "provenance": s.provenance.value})
    manifest = {"num_classes": data.num_classes, "name": data.name, "samples": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    samples = []
    for entry in manifest["samples"]:
        img = read_image(directory / entry["file"])
        samples.append(LabeledSample(img, int(entry["label"]), Provenance(entry["provenance"])))
    return Dataset(tuple(samples), int(manifest["num_classes"]), manifest.get("name", ""))


# --- PNG (8-bit, for human inspection; scaled x255, rounded half-up) ---

def image_to_uint8(img: Image) -> np.ndarray:
    return np.floor(img.data.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def _to_pil(img: Image) -> PILImage.Image:
    arr = image_to_uint8(img)
    if img.channels == 1:
        return PILImage.fromarray(arr[:, :, 0], mode="L")
    return PILImage.fromarray(arr, mode="RGB")


def write_png(img: Image, path) -> None:
    _to_pil(img).save(Path(path), format="PNG")


def png_bytes(img: Image) -> bytes:
    buf = _io.BytesIO()
    _to_pil(img).save(buf, format="PNG")
    return buf.getvalue()


def png_base64(img: Image) -> str:
    return base64.b64encode(png_bytes(img)).decode("ascii")


def read_png(path) -> Image:
    pil = PILImage.open(Path(path))
    if pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB")
    arr = np.asarray(pil, dtype=np.float32) / np.float32(255.0)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return Image(arr)


def write_heatmap_png(reference: Image, perturbed: Image, path) -> None:
    """Grayscale map of |perturbed - reference|, max over channels, normalized
    to the image's own peak (all-zero difference renders black)."""
    diff = np.abs(perturbed.data.astype(np.float64) - reference.data.astype(np.float64))
    heat = diff.max(axis=2)
    peak = heat.max()
    if peak > 0:
        heat = heat / peak
    write_png(Image(heat.astype(np.float32)[:, :, None]), path)


# --- CIFAR-10 binary batches ---

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixel bytes
CIFAR_SIDE = 32
CIFAR_CLASSES = 10


def decode_cifar10_bytes(blob: bytes, name: str = "cifar10") -> Dataset:
    """Decode records of one label byte followed by 32x32 R, G, B planes."""
    if len(blob) == 0:
        raise FormatError("empty CIFAR-10 batch")
    if len(blob) % CIFAR_RECORD_BYTES != 0:
        raise FormatError(
            f"truncated CIFAR-10 batch: {len(blob)} bytes is not a multiple of {CIFAR_RECORD_BYTES}"
        )
    n = len(blob) // CIFAR_RECORD_BYTES
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n, CIFAR_RECORD_BYTES)
    labels = raw[:, 0]
    bad = np.nonzero(labels >= CIFAR_CLASSES)[0]
    if bad.size:
        raise FormatError(f"record {bad[0]} has label byte {labels[bad[0]]} > 9")
    planes = raw[:, 1:].reshape(n, 3, CIFAR_SIDE, CIFAR_SIDE)
    pixels = planes.transpose(0, 2, 3, 1).astype(np.float32) / np.float32(255.0)
    samples = tuple(
        LabeledSample(Image(pixels[i]), int(labels[i]), Provenance.CLEAN) for i in range(n)
    )
    return Dataset(samples, CIFAR_CLASSES, name=name)


def load_cifar10_batch(path) -> Dataset:
    path = Path(path)
    return decode_cifar10_bytes(path.read_bytes(), name=path.stem)
