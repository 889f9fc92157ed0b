"""Synthetic temporal tasks and loading of pre-binned tensor datasets."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IngestionError
from .formats import read_tstn, write_tstn

TASKS = ("pulse_position", "moving_bar")
MANIFEST = "labels.csv"


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Parameters of a generated dataset.

    For ``pulse_position`` a class owns one (timestep, band) pair: class ``k``
    lights up timestep ``k % T`` inside horizontal band ``k // T``. With
    ``class_count <= T`` there is a single band covering the whole frame.
    """

    task: str = "pulse_position"
    T: int = 8
    C: int = 1
    H: int = 8
    W: int = 8
    class_count: int = 8
    noise_std: float = 0.0
    samples_per_class: int = 10
    seed: int = 0
    amplitude: float = 1.0
    bar_width: int = 2

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if min(self.T, self.C, self.H, self.W) < 1:
            raise ConfigError("T, C, H, W must be >= 1")
        if self.class_count < 1 or self.samples_per_class < 0:
            raise ConfigError("class_count must be >= 1 and samples_per_class >= 0")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTaskSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown dataset fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    samples: list = field(default_factory=list)  # (float32 [T,C,H,W], label)
    split: str = "train"
    class_count: int | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def sample_shape(self) -> tuple | None:
        return self.samples[0][0].shape if self.samples else None

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack into ``X [N,T,C,H,W]`` and ``y [N]``."""
        if not self.samples:
            return np.zeros((0,), dtype=np.float32), np.zeros((0,), dtype=np.int64)
        X = np.stack([s for s, _ in self.samples])
        y = np.array([l for _, l in self.samples], dtype=np.int64)
        return X, y

    def digest(self) -> str:
        h = hashlib.sha256()
        for x, label in self.samples:
            h.update(np.ascontiguousarray(x, dtype="<f4").tobytes())
            h.update(int(label).to_bytes(4, "little"))
        return h.hexdigest()


def _rng(spec: SyntheticTaskSpec, split: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, TASKS.index(spec.task), 0 if split == "train" else 1]))


def gen_pulse_position(spec: SyntheticTaskSpec, split: str = "train") -> Dataset:
    T, C, H, W, K = spec.T, spec.C, spec.H, spec.W, spec.class_count
    bands = math.ceil(K / T)
    if bands > H:
        raise ConfigError(f"pulse_position with {K} classes needs {bands} bands but H={H} "
                          f"(class_count must be <= T*H)")
    rng = _rng(spec, split)
    edges = np.linspace(0, H, bands + 1).round().astype(int)
    samples = []
    for _ in range(spec.samples_per_class):
        for k in range(K):
            x = np.zeros((T, C, H, W), dtype=np.float32)
            t, b = k % T, k // T
            x[t, :, edges[b]:edges[b + 1], :] = spec.amplitude
            if spec.noise_std:
                x += rng.normal(0.0, spec.noise_std, x.shape).astype(np.float32)
            samples.append((x, k))
    return Dataset(samples, split, K)


BAR_DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0))  # right, left, down, up as (drow, dcol)


def gen_moving_bar(spec: SyntheticTaskSpec, split: str = "train") -> Dataset:
    """A square bar starts centred and moves one pixel per timestep (wrapping)."""
    T, C, H, W, K = spec.T, spec.C, spec.H, spec.W, spec.class_count
    if K > len(BAR_DIRECTIONS):
        raise ConfigError(f"moving_bar supports at most 4 classes, got {K}")
    bw = spec.bar_width
    if bw > min(H, W):
        raise ConfigError(f"bar_width {bw} exceeds frame {H}x{W}")
    rng = _rng(spec, split)
    r0, c0 = H // 2 - bw // 2, W // 2 - bw // 2
    samples = []
    for _ in range(spec.samples_per_class):
        for k in range(K):
            dr, dc = BAR_DIRECTIONS[k]
            x = np.zeros((T, C, H, W), dtype=np.float32)
            for t in range(T):
                rows = (r0 + dr * t + np.arange(bw)) % H
                cols = (c0 + dc * t + np.arange(bw)) % W
                x[t, :, rows[:, None], cols[None, :]] = spec.amplitude
            if spec.noise_std:
                x += rng.normal(0.0, spec.noise_std, x.shape).astype(np.float32)
            samples.append((x, k))
    return Dataset(samples, split, K)


GENERATORS = {"pulse_position": gen_pulse_position, "moving_bar": gen_moving_bar}


def generate(spec: SyntheticTaskSpec, split: str = "train") -> Dataset:
    return GENERATORS[spec.task](spec, split)


def load_tensor_dataset(dir_path, split: str = "train", class_count: int | None = None) -> Dataset:
    """Load TSTN files listed in ``labels.csv`` (header ``filename,label``)."""
    root = Path(dir_path)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise IngestionError(f"missing manifest {manifest}")
    with manifest.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["filename", "label"]:
            raise IngestionError(f"{manifest}: header must be 'filename,label', got {reader.fieldnames}")
        rows = list(reader)
    samples = []
    shape = None
    for row in rows:
        name = row["filename"]
        path = root / name
        try:
            label = int(row["label"])
        except (TypeError, ValueError):
            raise IngestionError(f"{name}: label {row['label']!r} is not an integer") from None
        if label < 0 or (class_count is not None and label >= class_count):
            raise IngestionError(f"{name}: label {label} out of range")
        if not path.is_file():
            raise IngestionError(f"{name}: file not found")
        try:
            x = read_tstn(path)
        except FormatError as exc:
            raise IngestionError(f"{name}: {exc}") from exc
        if shape is None:
            shape = x.shape
        elif x.shape != shape:
            raise IngestionError(f"{name}: shape {x.shape} differs from {shape}")
        samples.append((x, label))
    if class_count is None and samples:
        class_count = max(l for _, l in samples) + 1
    return Dataset(samples, split, class_count)


def save_tensor_dataset(dataset: Dataset, dir_path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(dataset))))
    with (root / MANIFEST).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["filename", "label"])
        for i, (x, label) in enumerate(dataset):
            name = f"sample_{i:0{width}d}.tstn"
            write_tstn(root / name, x)
            w.writerow([name, int(label)])
