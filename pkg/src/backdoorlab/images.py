"""Image tensors, labeled datasets, norms, and the box/ball projection.

Images are dense float32 tensors of shape (H, W, C) with values in [0, 1],
channel-last and row-major. Every value type here is immutable after
construction, so instances can be shared freely across threads.
"""

import enum
from dataclasses import dataclass

import numpy as np


class DimensionMismatch(ValueError):
    """Two images that must share (H, W, C) do not."""


class Provenance(str, enum.Enum):
    CLEAN = "clean"
    POISONED = "poisoned"
    RECOVERED = "recovered"


@dataclass(frozen=True)
class Image:
    """A single image: float32 array of shape (H, W, C), C in {1, 3}, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"image must have shape (H, W, C), got {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1 or c not in (1, 3):
            raise ValueError(f"bad image dimensions {arr.shape}; channels must be 1 or 3")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"image values outside [0, 1]: min={arr.min():.6g} max={arr.max():.6g}"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr, clip: bool = False) -> "Image":
        """Build an Image from any array-like, optionally clipping into [0, 1]."""
        arr = np.asarray(arr, dtype=np.float32)
        if clip:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def same_shape(self, other: "Image") -> bool:
        return self.data.shape == other.data.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True)
class LabeledSample:
    image: Image
    label: int
    provenance: Provenance = Provenance.CLEAN

    def __post_init__(self):
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")
        object.__setattr__(self, "provenance", Provenance(self.provenance))


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of samples sharing dimensions, with K classes."""

    samples: tuple
    num_classes: int
    name: str = ""

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise ValueError("dataset must be non-empty")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        shape = samples[0].image.shape
        for i, s in enumerate(samples):
            if s.image.shape != shape:
                raise DimensionMismatch(
                    f"sample {i} has shape {s.image.shape}, expected {shape}"
                )
            if s.label >= self.num_classes:
                raise ValueError(f"sample {i} label {s.label} >= num_classes {self.num_classes}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i) -> LabeledSample:
        return self.samples[i]

    @property
    def image_shape(self) -> tuple:
        return self.samples[0].image.shape

    def replace_samples(self, samples) -> "Dataset":
        return Dataset(tuple(samples), self.num_classes, self.name)


def _check_same_shape(a: Image, b: Image):
    if a.data.shape != b.data.shape:
        raise DimensionMismatch(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def linf_distance(a: Image, b: Image) -> float:
    """Max absolute per-element gap between two same-shaped images."""
    _check_same_shape(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.max(np.abs(diff)))


def l2_distance(a: Image, b: Image) -> float:
    """Euclidean norm of the flattened difference, accumulated in float64."""
    _check_same_shape(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.sqrt(np.sum(diff * diff)))


def clip_to_ball_and_range(x: np.ndarray, center: np.ndarray, eps: float) -> np.ndarray:
    """Array-level projection: clamp to [center-eps, center+eps], then to [0, 1].

    The ball clip runs first; the value-range clip wins on conflict. Operates
    in float32 and is idempotent.
    """
    eps32 = np.float32(eps)
    out = np.clip(x, center - eps32, center + eps32)
    return np.clip(out, np.float32(0.0), np.float32(1.0))


def project_ball_and_range(x: Image, center: Image, eps: float) -> Image:
    """Project an image onto the eps-ball (sup norm) around center, inside [0, 1]."""
    _check_same_shape(x, center)
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return Image(clip_to_ball_and_range(x.data, center.data, eps))


def gen_synthetic_identities(
    num_classes: int,
    per_class: int,
    dims: tuple,
    noise_sigma: float,
    seed: int,
) -> Dataset:
    """Generate a toy identity dataset: one random prototype per class plus
    per-sample Gaussian perturbation, clipped to [0, 1].

    Deterministic for a fixed seed. With noise_sigma = 0 every sample of a
    class equals its prototype exactly.
    """
    if num_classes < 1 or per_class < 1:
        raise ValueError("num_classes and per_class must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    h, w, c = dims
    rng = np.random.default_rng(seed)
    # all prototypes are drawn before any sample noise, so synthetic_prototypes
    # can reproduce them for any per_class/noise_sigma
    protos = [rng.random((h, w, c), dtype=np.float32) for _ in range(num_classes)]
    samples = []
    for k in range(num_classes):
        for _ in range(per_class):
            if noise_sigma > 0:
                noise = rng.standard_normal((h, w, c), dtype=np.float32) * np.float32(noise_sigma)
                arr = np.clip(protos[k] + noise, 0.0, 1.0)
            else:
                arr = protos[k]
            samples.append(LabeledSample(Image(arr), k, Provenance.CLEAN))
    return Dataset(tuple(samples), num_classes, name=f"synthetic-{num_classes}x{per_class}")


def synthetic_prototypes(num_classes: int, dims: tuple, seed: int) -> list:
    """The per-class prototype images gen_synthetic_identities draws for this seed."""
    h, w, c = dims
    rng = np.random.default_rng(seed)
    return [Image(rng.random((h, w, c), dtype=np.float32)) for _ in range(num_classes)]


def class_means(data: Dataset) -> list:
    """Per-class pixel-mean prototypes, one Image per class index."""
    h, w, c = data.image_shape
    sums = np.zeros((data.num_classes, h, w, c), dtype=np.float64)
    counts = np.zeros(data.num_classes, dtype=np.int64)
    for s in data:
        sums[s.label] += s.image.data
        counts[s.label] += 1
    means = []
    for k in range(data.num_classes):
        if counts[k] == 0:
            means.append(Image(np.full((h, w, c), 0.5, dtype=np.float32)))
        else:
            means.append(Image((sums[k] / counts[k]).astype(np.float32)))
    return means
