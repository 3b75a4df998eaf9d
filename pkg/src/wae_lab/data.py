"""Datasets: IDX files, synthetic 2D distributions, prior sampling, splits.

Randomness is always drawn from a *named stream*: a generator seeded by
``(seed, stream id)``.  Toggling one consumer (say, input noise) never shifts
the draws seen by another (say, minibatch order).
"""

from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

STREAMS = {
    "data": 0,
    "prior": 1,
    "weights": 2,
    "noise": 3,
    "eval": 4,
    "split": 5,
    "synthetic": 6,
    "reparam": 7,
    "pretrain": 8,
}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAMS:
        raise ConfigError(f"unknown RNG stream {name!r}; valid: {sorted(STREAMS)}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), STREAMS[name]])))


# --- IDX ----------------------------------------------------------------------

class IdxFormatError(DataError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class DimensionMismatchError(IdxFormatError):
    pass


IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# IDX type code -> big-endian numpy dtype
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {dt.str.replace("|", ">"): code for code, dt in _IDX_TYPES.items()}


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(buf: bytes) -> np.ndarray:
    """Decode an IDX byte string into an array (big-endian dtype preserved)."""
    if len(buf) < 4:
        raise TruncatedFileError("file too short for magic number", len(buf))
    zero, code, ndim = struct.unpack(">HBB", buf[:4])
    if zero != 0 or code not in _IDX_TYPES or ndim == 0:
        raise BadMagicError(f"bad magic number 0x{struct.unpack('>I', buf[:4])[0]:08X}", 0)
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise TruncatedFileError(f"header needs {header_end} bytes, file has {len(buf)}", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header_end])
    dtype = _IDX_TYPES[code]
    need = header_end + int(np.prod(dims)) * dtype.itemsize
    if len(buf) < need:
        raise TruncatedFileError(f"header promises {need} bytes, file has {len(buf)}", len(buf))
    return np.frombuffer(buf, dtype=dtype, count=int(np.prod(dims)), offset=header_end).reshape(dims)


def read_idx(path) -> np.ndarray:
    return parse_idx(_read_bytes(path))


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder(">") if array.dtype.itemsize > 1 else array.dtype
    key = np.dtype(dtype).str.replace("|", ">")
    if key not in _IDX_CODES:
        raise ConfigError(f"dtype {array.dtype} has no IDX type code")
    header = struct.pack(">HBB", 0, _IDX_CODES[key], array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=dtype).tobytes()


def write_idx(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_idx(array))


@dataclass
class Dataset:
    examples: np.ndarray
    train: np.ndarray = None
    test: np.ndarray = None
    provenance: str = ""
    labels: np.ndarray | None = None
    image_shape: tuple | None = None

    def __post_init__(self):
        self.examples = np.asarray(self.examples, dtype=np.float64)
        n = len(self.examples)
        if self.train is None:
            self.train = np.arange(n)
        if self.test is None:
            self.test = np.arange(0)
        self.train = np.asarray(self.train, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        if np.intersect1d(self.train, self.test).size:
            raise DataError("train and test splits overlap")
        if self.train.size + self.test.size != n or np.union1d(self.train, self.test).size != n:
            raise DataError("splits must cover every example exactly once")

    def __len__(self):
        return len(self.examples)

    @property
    def d_x(self) -> int:
        return self.examples.shape[1]

    @property
    def train_x(self) -> np.ndarray:
        return self.examples[self.train]

    @property
    def test_x(self) -> np.ndarray:
        return self.examples[self.test]


def load_mnist_idx(images_path, labels_path=None, image_shape=(28, 28)) -> Dataset:
    """Read MNIST-style IDX files into a :class:`Dataset` with pixels in [0, 1].

    ``image_shape=None`` accepts any rows x cols.
    """
    buf = _read_bytes(images_path)
    if len(buf) >= 4 and struct.unpack(">I", buf[:4])[0] != IMAGES_MAGIC:
        raise BadMagicError(f"expected image magic 0x{IMAGES_MAGIC:08X}, "
                            f"got 0x{struct.unpack('>I', buf[:4])[0]:08X}", 0)
    images = parse_idx(buf)
    if image_shape is not None and tuple(images.shape[1:]) != tuple(image_shape):
        raise DimensionMismatchError(
            f"image dims {tuple(images.shape[1:])} differ from expected {tuple(image_shape)}", 8)

    labels = None
    if labels_path is not None:
        lbuf = _read_bytes(labels_path)
        if len(lbuf) >= 4 and struct.unpack(">I", lbuf[:4])[0] != LABELS_MAGIC:
            raise BadMagicError(f"expected label magic 0x{LABELS_MAGIC:08X}, "
                                f"got 0x{struct.unpack('>I', lbuf[:4])[0]:08X}", 0)
        labels = parse_idx(lbuf)
        if labels.shape[0] != images.shape[0]:
            raise DimensionMismatchError(
                f"{labels.shape[0]} labels for {images.shape[0]} images", 4)
        labels = labels.astype(np.int64)

    count = images.shape[0]
    x = images.reshape(count, -1).astype(np.float64) / 255.0
    return Dataset(x, provenance=f"idx:{Path(images_path).name}", labels=labels,
                   image_shape=tuple(images.shape[1:]))


def find_mnist_files(directory) -> tuple[Path, Path | None]:
    directory = Path(directory)
    if directory.is_file():
        return directory, None
    for stem in ("train-images-idx3-ubyte", "train-images.idx3-ubyte"):
        for suffix in ("", ".gz"):
            images = directory / (stem + suffix)
            if images.exists():
                labels = directory / (stem.replace("images", "labels").replace("idx3", "idx1") + suffix)
                return images, labels if labels.exists() else None
    raise DataError(f"no MNIST training images found in {directory}")


def mnist_subset(directory, train_count=2048, test_count=512, seed=0) -> Dataset:
    """First ``train_count + test_count`` training images, split at random."""
    images, labels = find_mnist_files(directory)
    full = load_mnist_idx(images, labels)
    total = train_count + test_count
    if total > len(full):
        raise DataError(f"requested {total} images, file holds {len(full)}")
    sub = Dataset(full.examples[:total], provenance=f"{full.provenance}[:{total}]",
                  labels=None if full.labels is None else full.labels[:total],
                  image_shape=full.image_shape)
    return split(sub, test_count / total, seed)


# --- synthetic ------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "gaussian_mixture"
    mode_count: int = 8
    mode_std: float = 0.1
    radius: float = 2.0
    sample_count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian_mixture", "swiss_roll"):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if self.sample_count < 1:
            raise ConfigError("sample_count must be >= 1")
        if self.mode_std <= 0:
            raise ConfigError("mode_std must be > 0")


def sample_gaussian_mixture(spec: SyntheticSpec) -> Dataset:
    rng = rng_stream(spec.seed, "synthetic")
    angles = 2 * np.pi * np.arange(spec.mode_count) / spec.mode_count
    centers = spec.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    modes = rng.integers(spec.mode_count, size=spec.sample_count)
    x = centers[modes] + spec.mode_std * rng.standard_normal((spec.sample_count, 2))
    return Dataset(x, provenance=f"mixture:{_spec_str(spec)}", labels=modes)


def sample_swiss_roll(spec: SyntheticSpec) -> Dataset:
    rng = rng_stream(spec.seed, "synthetic")
    t = 1.5 * np.pi * (1 + 2 * rng.random(spec.sample_count))
    x = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) * (spec.radius / (4.5 * np.pi))
    x += spec.mode_std * rng.standard_normal(x.shape)
    return Dataset(x, provenance=f"swiss:{_spec_str(spec)}")


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    if spec.kind == "swiss_roll":
        return sample_swiss_roll(spec)
    return sample_gaussian_mixture(spec)


def _spec_str(spec: SyntheticSpec) -> str:
    return (f"modes={spec.mode_count},std={spec.mode_std},radius={spec.radius},"
            f"count={spec.sample_count},seed={spec.seed}")


_SPEC_KEYS = {"modes": "mode_count", "std": "mode_std", "radius": "radius",
              "count": "sample_count", "seed": "seed"}


def parse_synthetic_spec(kind: str, text: str) -> SyntheticSpec:
    """Parse ``modes=8,std=0.1,radius=2,count=1000,seed=0`` (any subset)."""
    kwargs = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, _, value = part.partition("=")
        if key not in _SPEC_KEYS:
            raise ConfigError(f"unknown synthetic key {key!r}; valid: {sorted(_SPEC_KEYS)}")
        field_name = _SPEC_KEYS[key]
        kwargs[field_name] = int(value) if field_name in ("mode_count", "sample_count", "seed") else float(value)
    return SyntheticSpec(kind=kind, **kwargs)


def write_csv(path, dataset: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        cols = [f"x{i}" for i in range(dataset.d_x)]
        writer.writerow(cols + (["mode"] if dataset.labels is not None else []))
        for i, row in enumerate(dataset.examples):
            extra = [int(dataset.labels[i])] if dataset.labels is not None else []
            writer.writerow([repr(float(v)) for v in row] + extra)


def read_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    has_mode = header[-1] == "mode"
    values = np.array([[float(v) for v in (r[:-1] if has_mode else r)] for r in body])
    labels = np.array([int(r[-1]) for r in body]) if has_mode else None
    return Dataset(values, provenance=f"csv:{os.path.basename(path)}", labels=labels)


# --- prior and splits -----------------------------------------------------------

def sample_prior(prior, count: int, seed: int | np.random.Generator) -> np.ndarray:
    """``count x d_z`` draws from N(0, sigma_z2 I)."""
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, "prior")
    return np.sqrt(prior.sigma_z2) * rng.standard_normal((count, prior.d_z))


def split(dataset: Dataset, test_fraction: float, seed: int) -> Dataset:
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise DataError(f"split of {n} examples at fraction {test_fraction} leaves an empty side")
    order = rng_stream(seed, "split").permutation(n)
    return Dataset(dataset.examples, train=np.sort(order[n_test:]), test=np.sort(order[:n_test]),
                   provenance=dataset.provenance, labels=dataset.labels, image_shape=dataset.image_shape)
