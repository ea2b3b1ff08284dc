"""Paired-image datasets: directory scanning, augmentation, prefetching.

A dataset is a directory with ``input/`` and ``target/`` subdirectories
whose files pair up by filename stem. Patch sampling derives all of its
randomness from (seed, iteration, sample), so a training run draws the
same sequence no matter how many prefetch workers run or where a resumed
run picks up.
"""

import logging
import threading
from collections import OrderedDict, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import Image, load_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")


class DatasetError(RuntimeError):
    """The dataset directory cannot supply any usable pairs."""


class PairError(RuntimeError):
    """A specific pair is unusable; the message names the file."""


@dataclass
class PairRecord:
    identifier: str
    input_path: Path
    target_path: Path


@dataclass
class ImagePair:
    identifier: str
    input: Image
    target: Image

    def __post_init__(self):
        if self.input.pixels.shape != self.target.pixels.shape:
            raise PairError(
                f"pair {self.identifier!r}: input is "
                f"{self.input.width}x{self.input.height} but target is "
                f"{self.target.width}x{self.target.height}")


@dataclass
class AugmentSpec:
    """Random square crop plus optional flips and right-angle rotations."""

    crop_size: int = 512
    enable_flip: bool = True
    enable_rotation: bool = True


def scan_dataset(root, layout: str = "paired-dirs") -> list[PairRecord]:
    """List pairs under ``root`` in deterministic lexicographic stem order.

    Unmatched files are reported and excluded, never silently dropped.
    """
    if layout != "paired-dirs":
        raise ValueError(f"unknown dataset layout {layout!r}")
    root = Path(root)
    input_dir = root / "input"
    target_dir = root / "target"
    if not input_dir.is_dir() or not target_dir.is_dir():
        raise DatasetError(f"{root} must contain input/ and target/ directories")

    def index(directory: Path) -> dict[str, Path]:
        files = {}
        for path in directory.iterdir():
            if path.suffix.lower() in IMAGE_SUFFIXES:
                files[path.stem] = path
        return files

    inputs = index(input_dir)
    targets = index(target_dir)
    records = []
    for stem in sorted(set(inputs) | set(targets)):
        if stem not in inputs:
            log.warning("target/%s has no matching input; skipping", targets[stem].name)
            continue
        if stem not in targets:
            log.warning("input/%s has no matching target; skipping", inputs[stem].name)
            continue
        records.append(PairRecord(stem, inputs[stem], targets[stem]))
    if not records:
        raise DatasetError(f"no usable image pairs under {root}")
    return records


def load_pair(record: PairRecord) -> ImagePair:
    a = load_image(record.input_path)
    b = load_image(record.target_path)
    if a.pixels.shape != b.pixels.shape:
        raise PairError(
            f"{record.input_path.name}: input is {a.width}x{a.height} "
            f"but target is {b.width}x{b.height}")
    return ImagePair(record.identifier, a, b)


def reflect_pad_to(pixels: np.ndarray, min_h: int, min_w: int) -> np.ndarray:
    """Reflect-pad (H, W, 3) pixels up to at least the given extents."""
    h, w = pixels.shape[:2]
    pad_h = max(0, min_h - h)
    pad_w = max(0, min_w - w)
    if not pad_h and not pad_w:
        return pixels
    top, left = pad_h // 2, pad_w // 2
    return np.pad(pixels, ((top, pad_h - top), (left, pad_w - left), (0, 0)),
                  mode="reflect")


def sample_patch(pair: ImagePair, spec: AugmentSpec,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw one aligned (input, target) patch pair, shape (crop, crop, 3).

    The crop origin, flips, and rotation are drawn from ``rng`` and applied
    identically to both images. Images smaller than the crop are
    reflect-padded first (flagged in the log).
    """
    size = spec.crop_size
    src = pair.input.pixels
    tgt = pair.target.pixels
    if src.shape[0] < size or src.shape[1] < size:
        log.warning("pair %s (%dx%d) is smaller than crop %d; reflect-padding",
                    pair.identifier, src.shape[1], src.shape[0], size)
        src = reflect_pad_to(src, size, size)
        tgt = reflect_pad_to(tgt, size, size)
    y = int(rng.integers(0, src.shape[0] - size + 1))
    x = int(rng.integers(0, src.shape[1] - size + 1))
    a = src[y:y + size, x:x + size]
    b = tgt[y:y + size, x:x + size]
    if spec.enable_flip:
        if rng.integers(0, 2):
            a, b = a[:, ::-1], b[:, ::-1]
        if rng.integers(0, 2):
            a, b = a[::-1], b[::-1]
    if spec.enable_rotation:
        k = int(rng.integers(0, 4))
        if k:
            a, b = np.rot90(a, k), np.rot90(b, k)
    return np.ascontiguousarray(a), np.ascontiguousarray(b)


def sample_rng(seed: int, iteration: int, sample: int) -> np.random.Generator:
    """The canonical RNG for one drawn sample of one iteration."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), iteration, sample)))


class SampleStream:
    """Deterministic augmented-batch stream with optional prefetch workers.

    Batch i depends only on (seed, i), so worker count never changes the
    sample sequence; workers only overlap the decode and crop work.
    Batches are (B, 3, crop, crop) float32 NCHW arrays.
    """

    def __init__(self, records: list[PairRecord], spec: AugmentSpec, seed: int,
                 batch_size: int = 1, workers: int = 0, cache_pairs: int = 64):
        if not records:
            raise DatasetError("sample stream needs at least one pair")
        self.records = records
        self.spec = spec
        self.seed = seed
        self.batch_size = batch_size
        self.workers = workers
        self._cache: OrderedDict[str, ImagePair] = OrderedDict()
        self._cache_pairs = cache_pairs
        self._lock = threading.Lock()

    def _pair(self, index: int) -> ImagePair:
        record = self.records[index]
        with self._lock:
            pair = self._cache.get(record.identifier)
            if pair is not None:
                self._cache.move_to_end(record.identifier)
                return pair
        pair = load_pair(record)
        with self._lock:
            self._cache[record.identifier] = pair
            while len(self._cache) > self._cache_pairs:
                self._cache.popitem(last=False)
        return pair

    def batch(self, iteration: int) -> tuple[np.ndarray, np.ndarray]:
        inputs = []
        targets = []
        for j in range(self.batch_size):
            rng = sample_rng(self.seed, iteration, j)
            pair = self._pair(int(rng.integers(0, len(self.records))))
            a, b = sample_patch(pair, self.spec, rng)
            inputs.append(a.transpose(2, 0, 1))
            targets.append(b.transpose(2, 0, 1))
        return np.stack(inputs), np.stack(targets)

    def batches(self, start: int, stop: int):
        """Yield batches for iterations [start, stop) in order."""
        if self.workers <= 1:
            for i in range(start, stop):
                yield self.batch(i)
            return
        depth = self.workers * 2
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            pending = deque()
            submit = start
            while submit < min(start + depth, stop):
                pending.append(pool.submit(self.batch, submit))
                submit += 1
            while pending:
                result = pending.popleft().result()
                if submit < stop:
                    pending.append(pool.submit(self.batch, submit))
                    submit += 1
                yield result
