"""Reconstruction metrics for spiking autoencoders and image synthesis.

``spike_mse`` compares spike counts of two rasters; ``normalized_mse``
compares an image with a spike-count map after z-scoring both, which makes
the comparison insensitive to the (arbitrary) scale of spike counts.
Functions accept either :class:`SpikeRaster` objects or count vectors.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, StructuralError
from .spike_core import SpikeRaster


def _counts(x):
    if isinstance(x, SpikeRaster):
        return x.counts().astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _check_width(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise StructuralError(f"width mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def spike_mse(input_raster, output_raster):
    """Mean over neurons of the squared difference of spike counts."""
    a, b = _counts(input_raster), _counts(output_raster)
    _check_width(a, b)
    return float(np.mean((a - b) ** 2))


def zscore(x):
    """Standardise along the last axis; constant rows become all-zero.

    A row counts as constant when its spread is within rounding error of its
    magnitude, so ``c * x + d`` of a constant ``x`` is still recognised.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    scale = np.abs(x).max(axis=-1, keepdims=True) if x.size else np.zeros_like(sd)
    varies = sd > 64 * np.finfo(np.float64).eps * scale
    safe = np.where(varies, sd, 1.0)
    return np.where(varies, (x - mu) / safe, 0.0)


def normalized_mse(image, output):
    """MSE between z-scored image and z-scored spike-count map.

    Works row-wise on ``[n, width]`` inputs and returns one value per row.
    """
    a, b = np.asarray(image, dtype=np.float64), _counts(output)
    _check_width(a, b)
    err = np.mean((zscore(a) - zscore(b)) ** 2, axis=-1)
    return float(err) if np.ndim(err) == 0 else err


def min_class_mse(generated, candidates, label):
    """Lowest normalized MSE between ``generated`` and any candidate with ``label``.

    ``candidates`` is an :class:`~spikeae.data_io.ImageSet` or a
    ``(pixels, labels)`` pair with pixels shaped ``[n, width]`` or
    ``[n, h, w]``.
    """
    pixels, labels = _unpack_candidates(candidates)
    pool = pixels[labels == label]
    if len(pool) == 0:
        raise ConsistencyError(f"no candidate image with label {label}")
    return float(np.min(normalized_mse(pool, _counts(generated)[None, :])))


def _unpack_candidates(candidates):
    if hasattr(candidates, "pixels"):
        pixels, labels = candidates.pixels, candidates.labels
    else:
        pixels, labels = candidates
    pixels = np.asarray(pixels, dtype=np.float64)
    pixels = pixels.reshape(len(pixels), -1)
    return pixels, np.asarray(labels)


def class_mse_table(generated, candidates, classes=None):
    """``[n, n_classes]`` matrix of min_class_mse for every sample and class.

    ``argmin`` along axis 1 gives the nearest-class assignment.
    """
    pixels, labels = _unpack_candidates(candidates)
    gen = zscore(_counts(generated))
    classes = np.unique(labels) if classes is None else np.asarray(classes)
    table = np.empty((len(gen), len(classes)))
    for k, c in enumerate(classes):
        pool = zscore(pixels[labels == c])
        if len(pool) == 0:
            raise ConsistencyError(f"no candidate image with label {c}")
        # mean((a-b)^2) = (|a|^2 + |b|^2 - 2 a.b) / width for each pair
        width = gen.shape[1]
        d = (np.sum(gen**2, axis=1)[:, None] + np.sum(pool**2, axis=1)[None, :] - 2.0 * gen @ pool.T) / width
        table[:, k] = np.maximum(d, 0.0).min(axis=1)
    return table, classes


@dataclass
class EvalReport:
    spike_mse: float
    pixel_mse: float
    n_samples: int
    per_class_mse: np.ndarray = field(default_factory=lambda: np.full(10, np.nan))

    def as_row(self):
        return [self.n_samples, self.spike_mse, self.pixel_mse] + [float(v) for v in self.per_class_mse]


def evaluate_counts(images, in_counts, out_counts, labels=None, n_classes=10):
    """Build an :class:`EvalReport` from images and spike-count maps."""
    images = np.asarray(images, dtype=np.float64)
    n = len(images)
    if n == 0:
        raise ConsistencyError("cannot evaluate an empty dataset")
    s = np.mean((np.asarray(in_counts, float) - np.asarray(out_counts, float)) ** 2, axis=1)
    p = normalized_mse(images, out_counts)
    per_class = np.full(n_classes, np.nan)
    if labels is not None:
        labels = np.asarray(labels)
        for c in range(n_classes):
            sel = labels == c
            if sel.any():
                per_class[c] = float(np.mean(p[sel]))
    return EvalReport(spike_mse=float(np.mean(s)), pixel_mse=float(np.mean(p)), n_samples=n, per_class_mse=per_class)
