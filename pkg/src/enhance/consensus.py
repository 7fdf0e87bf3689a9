"""Consensus rank image: the vote-weighted positional rank aggregator.

The state stores the consensus as a strict permutation of ``1..P`` (one rank
per canvas pixel) together with a real-valued vote per pixel.  Each observed
image re-orders only the pixels under its mask, by sorting a vote-weighted
average of the current within-mask rank and the image's tied rank, then
handing back the same set of rank values in the new order.  Display values
are attached only at render time, by histogram matching.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateMask,
    FormatError,
    IntegrityError,
    MaskNotFull,
    ShapeMismatch,
)
from .rankcore import make_rng, tied_ranks

__all__ = [
    "Canvas",
    "ConsensusState",
    "ObservedImage",
    "init_random",
    "init_from_image",
    "update",
    "merge",
    "is_frozen",
    "render",
    "histogram_weights",
    "save_state",
    "load_state",
]


@dataclass(frozen=True)
class Canvas:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ShapeMismatch(f"canvas must be at least 1x1, got {self.width}x{self.height}")

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        """Row-major ``(height, width)`` array shape."""
        return (self.height, self.width)


@dataclass(eq=False)
class ConsensusState:
    canvas: Canvas
    ranks: np.ndarray  # int64, a permutation of 1..P
    votes: np.ndarray  # float64, >= 0

    def __eq__(self, other):
        if not isinstance(other, ConsensusState):
            return NotImplemented
        return (
            self.canvas == other.canvas
            and np.array_equal(self.ranks, other.ranks)
            and self.votes.tobytes() == other.votes.tobytes()
        )

    def copy(self) -> "ConsensusState":
        return ConsensusState(self.canvas, self.ranks.copy(), self.votes.copy())

    def is_permutation(self) -> bool:
        P = self.canvas.size
        return self.ranks.size == P and np.array_equal(
            np.sort(self.ranks), np.arange(1, P + 1, dtype=np.int64)
        )


@dataclass
class ObservedImage:
    """Registered data values on the canvas grid with their footprint mask.

    ``values`` and ``mask`` are flat, row-major arrays of length P.  Entries
    outside the mask are ignored.  ``weights`` defaults to 1 everywhere.
    """

    canvas: Canvas
    values: np.ndarray
    mask: np.ndarray
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        P = self.canvas.size
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.mask = np.asarray(self.mask, dtype=bool).ravel()
        if self.values.size != P or self.mask.size != P:
            raise ShapeMismatch("values and mask must have one entry per canvas pixel")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
            if self.weights.size != P:
                raise ShapeMismatch("weights must have one entry per canvas pixel")
            w = self.weights[self.mask]
            if not (np.isfinite(w).all() and (w > 0).all()):
                raise ValueError("weights must be finite and positive inside the mask")

    @classmethod
    def full(cls, values, canvas: Canvas | None = None) -> "ObservedImage":
        """An image covering the whole canvas; 2-D input fixes the canvas."""
        values = np.asarray(values, dtype=np.float64)
        if canvas is None:
            if values.ndim != 2:
                raise ShapeMismatch("canvas required for flat values")
            canvas = Canvas(values.shape[1], values.shape[0])
        return cls(canvas, values.ravel(), np.ones(canvas.size, dtype=bool))

    @property
    def num_masked(self) -> int:
        return int(np.count_nonzero(self.mask))

    def masked_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.num_masked, dtype=np.float64)
        return self.weights[self.mask]


def init_random(canvas: Canvas, seed: int) -> ConsensusState:
    """Uniformly random (seeded) permutation of ``1..P`` with zero votes."""
    P = canvas.size
    ranks = make_rng(seed).permutation(P).astype(np.int64) + 1
    return ConsensusState(canvas, ranks, np.zeros(P, dtype=np.float64))


def init_from_image(image: ObservedImage, seed: int) -> ConsensusState:
    """Consensus ranked by the image's values; ties resolved by a seeded shuffle."""
    if not image.mask.all():
        raise MaskNotFull("initial image must cover the whole canvas")
    P = image.canvas.size
    tiebreak = make_rng(seed).permutation(P)
    order = np.lexsort((tiebreak, image.values))
    ranks = np.empty(P, dtype=np.int64)
    ranks[order] = np.arange(1, P + 1, dtype=np.int64)
    return ConsensusState(image.canvas, ranks, np.zeros(P, dtype=np.float64))


def update(state: ConsensusState, image: ObservedImage) -> ConsensusState:
    """Fold one observed image into the consensus; returns a new state.

    Inside the mask, each pixel's score is the vote-weighted mean of its
    current within-mask consensus rank and its tied rank in the image.  The
    rank values already held by the masked pixels are reassigned to them in
    ascending score order (ties keep the current consensus order), and the
    image weights are added to the votes.  Cost is O(n log n) in the number
    of masked pixels.
    """
    if image.canvas != state.canvas:
        raise ShapeMismatch(f"canvas mismatch: {image.canvas} vs {state.canvas}")
    idx = np.flatnonzero(image.mask)
    n = idx.size
    if n < 2:
        raise DegenerateMask(f"need at least 2 masked pixels, got {n}")

    held = state.ranks[idx]
    # the consensus is tie-free, so its within-mask ranks are a plain inverse argsort
    c_order = np.argsort(held)
    r_c = np.empty(n, dtype=np.float64)
    r_c[c_order] = np.arange(1, n + 1, dtype=np.float64)
    r_d = tied_ranks(image.values[idx])
    v = state.votes[idx]
    w = image.masked_weights()
    score = (v * r_c + w * r_d) / (v + w)

    # stable sort of the scores laid out in r_c order: ties keep the consensus order
    new_order = c_order[np.argsort(score[c_order], kind="stable")]
    ranks = state.ranks.copy()
    ranks[idx[new_order]] = held[c_order]
    votes = state.votes.copy()
    votes[idx] = v + w
    return ConsensusState(state.canvas, ranks, votes)


def merge(a: ConsensusState, b: ConsensusState) -> ConsensusState:
    """Combine two consensus states by vote-weighted rank averaging.

    Where both votes are zero the plain mean rank is used.  Ties in the
    averaged score go to the lower pixel index, which makes the merge
    commutative.
    """
    if a.canvas != b.canvas:
        raise ShapeMismatch(f"canvas mismatch: {a.canvas} vs {b.canvas}")
    ra = a.ranks.astype(np.float64)
    rb = b.ranks.astype(np.float64)
    total = a.votes + b.votes
    unvoted = total == 0
    safe_total = np.where(unvoted, 1.0, total)
    score = np.where(unvoted, (ra + rb) / 2.0, (a.votes * ra + b.votes * rb) / safe_total)
    order = np.argsort(score, kind="stable")
    P = a.canvas.size
    ranks = np.empty(P, dtype=np.int64)
    ranks[order] = np.arange(1, P + 1, dtype=np.int64)
    return ConsensusState(a.canvas, ranks, total)


def is_frozen(state: ConsensusState) -> bool:
    """True once every pixel carries at least P votes.

    Beyond this point a unit-weight image can no longer change the ordering
    when votes are uniform: its largest possible rank gap, P - 1, is smaller
    than the consensus weight.
    """
    return bool(state.votes.min() >= state.canvas.size)


def render(state: ConsensusState, source) -> np.ndarray:
    """Histogram-match the consensus: rank k gets the k-th smallest source value.

    Returns a ``(height, width)`` array whose value multiset equals ``source``.
    """
    src = np.sort(np.asarray(source).ravel(), kind="stable")
    if src.size != state.canvas.size:
        raise ShapeMismatch(f"histogram source has {src.size} values, canvas has {state.canvas.size}")
    return src[state.ranks - 1].reshape(state.canvas.shape)


def histogram_weights(image: ObservedImage) -> np.ndarray:
    """Experimental per-pixel weights ``1 / h(d)**2``, rescaled to mean 1.

    ``h`` is the fraction of masked pixels sharing each exact value, so
    pixels in heavily populated (clipped or quantized) bins are trusted
    less.  Pixels outside the mask get weight 0.
    """
    idx = np.flatnonzero(image.mask)
    if idx.size < 2:
        raise DegenerateMask(f"need at least 2 masked pixels, got {idx.size}")
    vals = image.values[idx]
    _, inverse, counts = np.unique(vals, return_inverse=True, return_counts=True)
    h = counts[inverse] / idx.size
    raw = 1.0 / h**2
    out = np.zeros(image.canvas.size, dtype=np.float64)
    out[idx] = raw / raw.mean()
    return out


# state file: little-endian, "ENHC", u32 version, u32 width, u32 height,
# then P u64 ranks and P f64 votes, no padding
_MAGIC = b"ENHC"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def save_state(state: ConsensusState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, state.canvas.width, state.canvas.height))
        fh.write(state.ranks.astype("<u8").tobytes())
        fh.write(state.votes.astype("<f8").tobytes())


def load_state(path) -> ConsensusState:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("file shorter than header")
    magic, version, width, height = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}")
    if width < 1 or height < 1:
        raise FormatError(f"bad canvas {width}x{height}")
    P = width * height
    if len(data) != _HEADER.size + 16 * P:
        raise FormatError(f"expected {_HEADER.size + 16 * P} bytes, got {len(data)}")
    off = _HEADER.size
    ranks = np.frombuffer(data, dtype="<u8", count=P, offset=off)
    votes = np.frombuffer(data, dtype="<f8", count=P, offset=off + 8 * P)
    if ranks.max() > P:
        raise IntegrityError("rank value out of range")
    state = ConsensusState(
        Canvas(width, height), ranks.astype(np.int64), votes.astype(np.float64)
    )
    if not state.is_permutation():
        raise IntegrityError("rank array is not a permutation of 1..P")
    if not (np.isfinite(state.votes).all() and (state.votes >= 0).all()):
        raise IntegrityError("votes must be finite and non-negative")
    return state
