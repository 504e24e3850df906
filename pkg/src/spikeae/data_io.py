"""Dataset readers/writers, synthetic spectrograms, audio-image pairing and checkpoints.

Binary formats handled here:

* IDX (MNIST / Fashion-MNIST distribution): big-endian, magic ``0x00000803``
  for ``uint8`` images and ``0x00000801`` for ``uint8`` labels.
* SPC1 spectrograms: ``b"SPC1"``, ``u16`` version (1), ``u32`` n,
  ``u32`` n_channels, ``u32`` n_frames, ``f32`` global_min, ``f32``
  global_max, then ``n * n_channels * n_frames`` raw ``f32`` values, all
  little-endian.  Labels are not part of the format; they travel in an IDX
  label file next to it.
* SAEC checkpoints: ``b"SAEC"``, ``u16`` version (1), ``u32`` layer count,
  per layer ``u32 n_out, u32 n_in, f32 alpha, f32 v_th``, then every
  layer's weights as row-major ``f32``, then ``u32`` length + UTF-8 JSON of
  the training config.  Little-endian.
* PGM (P5) greyscale images for reconstructions and synthesized digits.
"""

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, DataIOError, FormatError, StructuralError
from .network import SpikingNetwork, TrainConfig
from .seeding import stream
from .spike_core import LifLayer, NeuronConfig

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SPC1_MAGIC = b"SPC1"
SPC1_VERSION = 1
SAEC_MAGIC = b"SAEC"
SAEC_VERSION = 1

_SPC1_HEADER = struct.Struct("<4sHIIIff")
_SAEC_HEADER = struct.Struct("<4sHI")
_SAEC_LAYER = struct.Struct("<IIff")


@dataclass
class ImageSet:
    pixels: np.ndarray  # uint8 [n, height, width]
    labels: np.ndarray  # uint8 [n]

    @property
    def n(self):
        return len(self.pixels)

    @property
    def height(self):
        return self.pixels.shape[1]

    @property
    def width(self):
        return self.pixels.shape[2]

    def flat(self):
        """Pixels scaled to [0, 1] as ``[n, height * width]`` float32."""
        return (self.pixels.reshape(self.n, -1) / np.float32(255.0)).astype(np.float32)

    def subset(self, idx):
        return ImageSet(self.pixels[idx], self.labels[idx])

    def __len__(self):
        return self.n


@dataclass
class SpectrogramSet:
    values: np.ndarray  # float32 [n, n_channels, n_frames] in [0, 1]
    labels: np.ndarray  # uint8 [n]

    @property
    def n(self):
        return len(self.values)

    @property
    def n_channels(self):
        return self.values.shape[1]

    @property
    def n_frames(self):
        return self.values.shape[2]

    def flat(self):
        return self.values.reshape(self.n, -1)

    def subset(self, idx):
        return SpectrogramSet(self.values[idx], self.labels[idx])

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class PairedSample:
    audio_index: int
    image_index: int
    label: int


def _read_bytes(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if not data:
        raise DataIOError(f"{path} is empty")
    return data


def _parse_idx(data, path, magic, ndim):
    header = struct.Struct(">" + "I" * (1 + ndim))
    if len(data) < header.size:
        raise DataIOError(f"{path}: truncated IDX header")
    fields = header.unpack_from(data)
    if fields[0] != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    dims = fields[1:]
    size = int(np.prod(dims))
    if len(data) - header.size < size:
        raise DataIOError(f"{path}: truncated IDX payload ({len(data) - header.size} of {size} bytes)")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header.size).reshape(dims).copy()


def load_idx_images(path):
    return _parse_idx(_read_bytes(path), path, IDX_IMAGES_MAGIC, 3)


def load_idx_labels(path):
    return _parse_idx(_read_bytes(path), path, IDX_LABELS_MAGIC, 1)


def load_idx(images_path, labels_path):
    pixels = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(pixels) != len(labels):
        raise ConsistencyError(f"{len(pixels)} images but {len(labels)} labels")
    return ImageSet(pixels, labels)


def save_idx_images(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3:
        raise StructuralError("IDX images must be [n, rows, cols]")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *pixels.shape))
        f.write(pixels.tobytes())


def save_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def save_idx(images_path, labels_path, images):
    save_idx_images(images_path, images.pixels)
    save_idx_labels(labels_path, images.labels)


def normalize_spectrogram_values(raw, vmin, vmax):
    """Linear map of raw magnitudes onto [0, 1]; a constant file maps to zeros."""
    raw = np.asarray(raw, dtype=np.float32)
    if not vmax > vmin:
        return np.zeros_like(raw)
    out = (raw - np.float32(vmin)) / (np.float32(vmax) - np.float32(vmin))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def read_spc1_raw(path):
    """Raw (unnormalized) values and the stored min/max of an SPC1 file."""
    data = _read_bytes(path)
    if len(data) < _SPC1_HEADER.size:
        raise DataIOError(f"{path}: truncated SPC1 header")
    magic, version, n, n_ch, n_fr, vmin, vmax = _SPC1_HEADER.unpack_from(data)
    if magic != SPC1_MAGIC:
        raise FormatError(f"{path}: bad SPC1 magic {magic!r}")
    if version != SPC1_VERSION:
        raise FormatError(f"{path}: unsupported SPC1 version {version}")
    count = n * n_ch * n_fr
    if len(data) - _SPC1_HEADER.size < 4 * count:
        raise DataIOError(f"{path}: truncated SPC1 payload")
    raw = np.frombuffer(data, dtype="<f4", count=count, offset=_SPC1_HEADER.size)
    return raw.reshape(n, n_ch, n_fr).astype(np.float32), vmin, vmax


def load_spectrograms(path, labels_path=None):
    raw, vmin, vmax = read_spc1_raw(path)
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if len(labels) != len(raw):
            raise ConsistencyError(f"{len(raw)} spectrograms but {len(labels)} labels")
    else:
        labels = np.zeros(len(raw), dtype=np.uint8)
    return SpectrogramSet(normalize_spectrogram_values(raw, vmin, vmax), labels)


def save_spectrograms(path, raw_values, labels=None, labels_path=None):
    """Write raw spectrogram magnitudes ``[n, n_channels, n_frames]`` as SPC1.

    The stored min/max are taken over the whole file.
    """
    raw = np.asarray(raw_values, dtype="<f4")
    if raw.ndim != 3:
        raise StructuralError("spectrograms must be [n, n_channels, n_frames]")
    vmin = float(raw.min()) if raw.size else 0.0
    vmax = float(raw.max()) if raw.size else 0.0
    with open(path, "wb") as f:
        f.write(_SPC1_HEADER.pack(SPC1_MAGIC, SPC1_VERSION, *raw.shape, vmin, vmax))
        f.write(raw.tobytes())
    if labels is not None:
        save_idx_labels(labels_path or _default_labels_path(path), labels)


def _default_labels_path(path):
    return os.fspath(path) + ".labels"


def class_templates(n_classes, n_channels, n_frames, template_seed=0):
    """Deterministic per-class spectrogram templates ``[n_classes, n_channels, n_frames]``.

    Each class excites its own handful of frequency channels, each with a
    smooth Gaussian envelope at a class-specific time and width.
    """
    out = np.zeros((n_classes, n_channels, n_frames), dtype=np.float64)
    frames = np.arange(n_frames)
    n_active = max(1, min(n_channels, round(n_channels / 6)))
    for c in range(n_classes):
        rng = stream(template_seed, f"template-{c}")
        channels = rng.choice(n_channels, size=n_active, replace=False)
        for ch in channels:
            centre = rng.uniform(0.15, 0.85) * n_frames
            width = rng.uniform(0.06, 0.2) * n_frames
            amp = rng.uniform(0.6, 1.0)
            out[c, ch] += amp * np.exp(-0.5 * ((frames - centre) / width) ** 2)
    return np.clip(out, 0.0, 1.0)


def synth_spectrograms(n_classes, per_class, n_channels, n_frames, rng, jitter=0.25, noise=0.05, template_seed=0):
    """Synthetic labelled spectrograms standing in for recorded speech.

    Sample = class template x (1 + jitter * N(0, 1) per channel) + noise *
    N(0, 1) per bin, clipped to [0, 1].  Samples are ordered by class.
    """
    templates = class_templates(n_classes, n_channels, n_frames, template_seed)
    n = n_classes * per_class
    labels = np.repeat(np.arange(n_classes, dtype=np.uint8), per_class)
    values = np.zeros((n, n_channels, n_frames), dtype=np.float32)
    if n == 0:
        return SpectrogramSet(values, labels)
    gain = 1.0 + jitter * rng.standard_normal((n, n_channels, 1))
    noise_term = noise * rng.standard_normal((n, n_channels, n_frames))
    values[:] = np.clip(templates[labels] * gain + noise_term, 0.0, 1.0)
    return SpectrogramSet(values, labels)


def build_pairs(audio_labels, image_labels, mode, rng):
    """Pair every audio sample with an image of the same class.

    Mode ``"A"`` gives every class one designated image (the first image of
    that class in a seeded shuffle).  Mode ``"B"`` gives every audio sample
    its own image, drawn without replacement within the class while the
    class still has unused images.
    """
    audio_labels = np.asarray(getattr(audio_labels, "labels", audio_labels))
    image_labels = np.asarray(getattr(image_labels, "labels", image_labels))
    mode = str(mode).upper()
    if mode not in ("A", "B"):
        raise ValueError(f"pairing mode must be 'A' or 'B', got {mode!r}")
    order = rng.permutation(len(image_labels))
    by_class = {}
    for idx in order:
        by_class.setdefault(int(image_labels[idx]), []).append(int(idx))
    missing = sorted({int(c) for c in audio_labels} - set(by_class))
    if missing:
        raise ConsistencyError(f"no images for classes {missing}")
    pairs = []
    used = {c: 0 for c in by_class}
    for a, c in enumerate(audio_labels):
        c = int(c)
        pool = by_class[c]
        if mode == "A":
            img = pool[0]
        else:
            img = pool[used[c] % len(pool)]
            used[c] += 1
        pairs.append(PairedSample(audio_index=a, image_index=img, label=c))
    return pairs


def save_checkpoint(path, net, cfg=None):
    """Serialise a network (and its training config) to the SAEC format."""
    cfg_blob = json.dumps(cfg.to_dict() if cfg is not None else {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_SAEC_HEADER.pack(SAEC_MAGIC, SAEC_VERSION, len(net.layers)))
        for layer in net.layers:
            f.write(_SAEC_LAYER.pack(layer.n_out, layer.n_in, layer.cfg.alpha, layer.cfg.v_th))
        for layer in net.layers:
            f.write(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(cfg_blob)))
        f.write(cfg_blob)


def load_checkpoint(path):
    """Read an SAEC checkpoint; returns ``(SpikingNetwork, TrainConfig or None)``."""
    data = _read_bytes(path)
    if len(data) < _SAEC_HEADER.size:
        raise ConsistencyError(f"{path}: truncated checkpoint header")
    magic, version, n_layers = _SAEC_HEADER.unpack_from(data)
    if magic != SAEC_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != SAEC_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = _SAEC_HEADER.size
    if len(data) < offset + n_layers * _SAEC_LAYER.size:
        raise ConsistencyError(f"{path}: truncated layer table")
    specs = []
    for _ in range(n_layers):
        specs.append(_SAEC_LAYER.unpack_from(data, offset))
        offset += _SAEC_LAYER.size
    layers = []
    for n_out, n_in, alpha, v_th in specs:
        nbytes = 4 * n_out * n_in
        if len(data) < offset + nbytes:
            raise ConsistencyError(f"{path}: truncated weight block")
        w = np.frombuffer(data, dtype="<f4", count=n_out * n_in, offset=offset).reshape(n_out, n_in)
        offset += nbytes
        cfg = NeuronConfig(alpha=_short_float(alpha), v_th=_short_float(v_th))
        layers.append(LifLayer(w.astype(np.float32), cfg))
    if len(data) < offset + 4:
        raise ConsistencyError(f"{path}: missing config block")
    (length,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if len(data) != offset + length:
        raise ConsistencyError(f"{path}: config block size mismatch")
    try:
        cfg_dict = json.loads(data[offset:offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable config block") from exc
    train_cfg = TrainConfig.from_dict(cfg_dict) if cfg_dict else None
    try:
        net = SpikingNetwork(layers)
    except StructuralError as exc:
        raise ConsistencyError(f"{path}: {exc}") from exc
    return net, train_cfg


def _short_float(x):
    """Shortest decimal that round-trips through float32 (0.1f -> 0.1)."""
    return float(np.format_float_positional(np.float32(x), unique=True))


def to_gray(counts):
    """Rescale non-negative counts linearly so the maximum maps to 255."""
    counts = np.asarray(counts, dtype=np.float64)
    peak = counts.max() if counts.size else 0.0
    if peak <= 0:
        return np.zeros(counts.shape, dtype=np.uint8)
    return np.clip(np.rint(counts * (255.0 / peak)), 0, 255).astype(np.uint8)


def write_pgm(path, image, shape=(28, 28)):
    """Write counts (any non-negative scale) as a binary P5 PGM."""
    img = np.asarray(image)
    if img.ndim == 1:
        img = img.reshape(shape)
    gray = to_gray(img)
    with open(path, "wb") as f:
        f.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def read_pgm(path):
    data = _read_bytes(path)
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    payload = parts[4]
    if len(payload) < width * height:
        raise DataIOError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8, count=width * height).reshape(height, width)


def contact_sheet(images, rows, cols, shape=(28, 28), gap=1):
    """Tile images (each rescaled on its own) into one ``uint8`` grid, row-major."""
    h, w = shape
    sheet = np.zeros((rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap), dtype=np.uint8)
    for k, img in enumerate(images[: rows * cols]):
        r, c = divmod(k, cols)
        y, x = r * (h + gap), c * (w + gap)
        sheet[y:y + h, x:x + w] = to_gray(np.asarray(img).reshape(shape))
    return sheet
