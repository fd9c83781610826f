"""Temporal pattern irregularity over binary-code histograms (TCP).

Every frame arrives as a grid of integer codes (one k-bit code per cell).
Overlapping temporal blocks are cut along the sequence; for each cell the
block's code histogram is scored by its squared deviation from the dominant
code. Maps are normalised per video, the background is suppressed, and the
result can be upsampled, fused with optical-flow energy and masked by motion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ValidationError

BACKGROUND_THRESHOLD = 0.1


@dataclass(frozen=True)
class BlockSpec:
    length: int = 14
    overlap: int = 13

    def __post_init__(self):
        if self.length < 1 or not 0 <= self.overlap < self.length:
            raise ConfigError(f"need length >= 1 and 0 <= overlap < length, got {self}")

    @property
    def stride(self) -> int:
        return self.length - self.overlap


@dataclass(frozen=True)
class Block:
    start: int
    length: int

    @property
    def middle(self) -> int:
        return self.start + self.length // 2

    @property
    def frames(self) -> range:
        return range(self.start, self.start + self.length)


@dataclass(frozen=True)
class FusionWeights:
    alpha: float = 0.5  # optical-flow weight
    beta: float = 0.5  # TCP weight

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigError(f"fusion weights must be non-negative with positive sum: {self}")


def build_blocks(n_frames: int, spec: BlockSpec) -> list[Block]:
    """Sliding blocks with stride ``length - overlap``; empty if the video is too short."""
    if n_frames < spec.length:
        return []
    count = (n_frames - spec.length) // spec.stride + 1
    return [Block(i * spec.stride, spec.length) for i in range(count)]


def block_histograms(codes: np.ndarray, block: Block, n_bins: int) -> np.ndarray:
    """Per-cell code counts for one block: array (rows, cols, n_bins) summing to block length."""
    seg = np.asarray(codes)[block.start:block.start + block.length]
    rows, cols = seg.shape[1:]
    hist = np.zeros((rows * cols, n_bins), dtype=np.int64)
    cell = np.broadcast_to(np.arange(rows * cols), (len(seg), rows * cols))
    np.add.at(hist, (cell.ravel(), seg.reshape(len(seg), -1).ravel()), 1)
    return hist.reshape(rows, cols, n_bins)


def tcp_measure(h, support=None) -> float:
    """Sum over bins of the squared difference to the dominant (mode) bin.

    ``support`` is an optional boolean mask selecting the bins that enter the
    sum; the mode is taken over the same bins, lowest index on ties.
    """
    h = np.asarray(h, dtype=np.float64)
    if support is not None:
        h = h[np.asarray(support, dtype=bool)]
    if h.size == 0 or h.sum() <= 0:
        raise ValidationError("empty histogram")
    return float(np.sum((h - h[np.argmax(h)]) ** 2))


def _tcp_many(hist: np.ndarray) -> np.ndarray:
    # vectorised tcp_measure over the last axis
    h = hist.astype(np.float64)
    mode = np.take_along_axis(h, np.argmax(h, axis=-1)[..., None], axis=-1)
    return np.sum((h - mode) ** 2, axis=-1)


def observed_support(codes: np.ndarray, n_bins: int) -> np.ndarray:
    """Bins used anywhere in the video."""
    support = np.zeros(n_bins, dtype=bool)
    support[np.unique(np.asarray(codes))] = True
    return support


def tcp_maps(codes: np.ndarray, spec: BlockSpec, n_bins: int,
             support: str = "observed") -> tuple[list[Block], np.ndarray]:
    """Raw TCP value of every cell of every block.

    ``codes`` has shape (T, rows, cols). Returns the blocks and an array of
    shape (n_blocks, rows, cols); block ``b`` describes frame ``blocks[b].middle``.
    ``support`` is ``"observed"`` (bins seen in this video) or ``"all"``.
    """
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 3:
        raise ValidationError(f"codes must be (T, rows, cols), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= n_bins):
        raise ValidationError(f"codes outside 0..{n_bins - 1}")
    blocks = build_blocks(len(codes), spec)
    if support == "observed":
        mask = observed_support(codes, n_bins)
    elif support == "all":
        mask = np.ones(n_bins, dtype=bool)
    else:
        raise ConfigError(f"unknown support {support!r}")
    out = np.empty((len(blocks),) + codes.shape[1:])
    for b, block in enumerate(blocks):
        out[b] = _tcp_many(block_histograms(codes, block, n_bins)[..., mask])
    return blocks, out


def normalize_maps(maps: np.ndarray) -> np.ndarray:
    """Divide a whole video's maps by their global maximum."""
    maps = np.asarray(maps, dtype=np.float64)
    peak = maps.max() if maps.size else 0.0
    if peak <= 0:
        warnings.warn("all-zero maps left unnormalized", RuntimeWarning, stacklevel=2)
        return maps.copy()
    return maps / peak


def subtract_background(maps: np.ndarray, threshold: float = BACKGROUND_THRESHOLD) -> np.ndarray:
    maps = np.asarray(maps, dtype=np.float64)
    return np.where(maps < threshold, 0.0, maps)


def tcp_map(raw: np.ndarray, threshold: float = BACKGROUND_THRESHOLD) -> np.ndarray:
    """Normalised, background-suppressed maps for one video."""
    return subtract_background(normalize_maps(raw), threshold)


def upsample(cell_map: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-cell replication of a (rows, cols) map onto a (height, width) pixel grid."""
    cell_map = np.asarray(cell_map)
    rows, cols = cell_map.shape[-2:]
    r = (np.arange(height) * rows) // height
    c = (np.arange(width) * cols) // width
    return cell_map[..., r[:, None], c[None, :]]


def cell_sums(pixel_map: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Sum a (height, width) map over the cells of a rows x cols grid."""
    pixel_map = np.asarray(pixel_map, dtype=np.float64)
    h, w = pixel_map.shape
    r = (np.arange(h) * rows) // h
    c = (np.arange(w) * cols) // w
    out = np.zeros((rows, cols))
    np.add.at(out, (r[:, None], c[None, :]), pixel_map)
    return out


def block_flow(flow_magnitudes: Sequence[np.ndarray], blocks: Sequence[Block],
               rows: int, cols: int) -> np.ndarray:
    """Per-cell optical-flow magnitude summed over each block's frames.

    ``flow_magnitudes[t]`` is the pixel magnitude of the flow between frames
    t and t+1; frames without flow contribute nothing.
    """
    per_frame = [cell_sums(m, rows, cols) for m in flow_magnitudes]
    out = np.zeros((len(blocks), rows, cols))
    for b, block in enumerate(blocks):
        for t in block.frames:
            if t < len(per_frame):
                out[b] += per_frame[t]
    return out


def fuse(tcp: np.ndarray, flow_mag: np.ndarray, w: FusionWeights = FusionWeights()) -> np.ndarray:
    """``alpha * flow + beta * tcp``, element-wise."""
    tcp = np.asarray(tcp, dtype=np.float64)
    flow_mag = np.asarray(flow_mag, dtype=np.float64)
    if tcp.shape != flow_mag.shape:
        raise ValidationError(f"grid mismatch: tcp {tcp.shape} vs flow {flow_mag.shape}")
    return w.alpha * flow_mag + w.beta * tcp


def motion_mask(values: np.ndarray, flow_magnitude: np.ndarray) -> np.ndarray:
    """Keep values only where the flow magnitude is positive."""
    values = np.asarray(values, dtype=np.float64)
    flow_magnitude = np.asarray(flow_magnitude)
    if values.shape != flow_magnitude.shape:
        raise ValidationError(f"size mismatch: {values.shape} vs {flow_magnitude.shape}")
    return np.where(flow_magnitude > 0, values, 0.0)
