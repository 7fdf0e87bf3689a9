"""Simplified plate solving onto a flat canvas.

Pipeline: detect stars (robust noise estimate, local maxima, quadratic
centroids), hash four-star asterisms into a similarity-invariant 4-D code,
look codes up in an index built from a reference catalog, verify each
proposed similarity transform against the remaining stars, and finally
resample the image onto the canvas by nearest neighbour.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import kvfile
from .consensus import Canvas, ObservedImage
from .errors import DegenerateQuad, NoSolution, ShapeMismatch, TooFewStars

log = logging.getLogger(__name__)

__all__ = [
    "StarList",
    "QuadHash",
    "QuadIndex",
    "SimilarityTransform",
    "SolveParams",
    "estimate_noise",
    "detect_stars",
    "quad_hash",
    "quad_codes",
    "build_index",
    "solve",
    "fit_similarity",
    "resample",
    "read_sidecar",
    "write_sidecar",
]


class StarList:
    """Stars as an ``(n, 3)`` array of ``x, y, flux``, brightest first."""

    def __init__(self, stars=()):
        arr = np.asarray(stars, dtype=np.float64).reshape(-1, 3)
        if arr.size and not np.isfinite(arr).all():
            raise ValueError("star coordinates must be finite")
        if arr.size and (arr[:, 2] <= 0).any():
            raise ValueError("star flux must be positive")
        order = np.argsort(-arr[:, 2], kind="stable")
        self.data = arr[order]

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i):
        return self.data[i]

    @property
    def xy(self) -> np.ndarray:
        return self.data[:, :2]

    @property
    def flux(self) -> np.ndarray:
        return self.data[:, 2]

    def brightest(self, n: int) -> "StarList":
        return StarList(self.data[:n])

    @classmethod
    def read(cls, path) -> "StarList":
        """Plain text, one ``x y flux`` triple per line; ``#`` starts a comment."""
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    rows.append([float(t) for t in line.replace(",", " ").split()[:3]])
        return cls(rows)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# x y flux\n")
            for x, y, f in self.data:
                fh.write(f"{float(x)!r} {float(y)!r} {float(f)!r}\n")


@dataclass(frozen=True)
class SimilarityTransform:
    """``canvas = scale * R(rotation) @ image + (dx, dy)``; rotation in radians."""

    scale: float = 1.0
    rotation: float = 0.0
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def _a(self) -> complex:
        return self.scale * complex(math.cos(self.rotation), math.sin(self.rotation))

    @classmethod
    def from_complex(cls, a: complex, b: complex) -> "SimilarityTransform":
        """From the complex form ``w = a*z + b``."""
        return cls(abs(a), math.atan2(a.imag, a.real), b.real, b.imag)

    def apply(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        z = xy[..., 0] + 1j * xy[..., 1]
        w = self._a * z + complex(self.dx, self.dy)
        return np.stack([w.real, w.imag], axis=-1)

    def inverse(self) -> "SimilarityTransform":
        a_inv = 1.0 / self._a
        return SimilarityTransform.from_complex(a_inv, -a_inv * complex(self.dx, self.dy))

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """``self ∘ inner``: apply ``inner`` first."""
        a = self._a * inner._a
        b = self._a * complex(inner.dx, inner.dy) + complex(self.dx, self.dy)
        return SimilarityTransform.from_complex(a, b)

    @property
    def rotation_deg(self) -> float:
        return math.degrees(self.rotation)


def write_sidecar(transform: SimilarityTransform, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"scale={float(transform.scale)!r}\n")
        fh.write(f"rotation_deg={math.degrees(transform.rotation)!r}\n")
        fh.write(f"dx={float(transform.dx)!r}\n")
        fh.write(f"dy={float(transform.dy)!r}\n")


def read_sidecar(path) -> SimilarityTransform:
    vals = kvfile.as_dict(kvfile.load(path))
    missing = {"scale", "rotation_deg", "dx", "dy"} - vals.keys()
    if missing:
        raise ValueError(f"sidecar {path} missing keys: {sorted(missing)}")
    return SimilarityTransform(
        float(vals["scale"]),
        math.radians(float(vals["rotation_deg"])),
        float(vals["dx"]),
        float(vals["dy"]),
    )


# ---------------------------------------------------------------------------
# star detection

# design matrix of f = a + b x + c y + d x^2 + e xy + f y^2 on the 3x3 patch
_PY, _PX = np.mgrid[-1:2, -1:2]
_QUAD_DESIGN = np.stack(
    [np.ones(9), _PX.ravel(), _PY.ravel(), _PX.ravel() ** 2, (_PX * _PY).ravel(), _PY.ravel() ** 2],
    axis=1,
)
_QUAD_PINV = np.linalg.pinv(_QUAD_DESIGN)


def estimate_noise(image) -> float:
    """Per-pixel Gaussian sigma from horizontally adjacent differences.

    The median of ``|x[i+1] - x[i]|`` times 1.4826 estimates the sigma of the
    differences, which is sqrt(2) times the per-pixel sigma.
    """
    img = np.asarray(image, dtype=np.float64)
    diffs = np.abs(np.diff(img, axis=1))
    return float(1.4826 * np.median(diffs) / math.sqrt(2.0))


def _refine(patch: np.ndarray) -> tuple[float, float, float]:
    a, b, c, d, e, f = _QUAD_PINV @ patch.ravel()
    det = 4 * d * f - e * e
    # a true maximum needs a negative-definite Hessian
    if det <= 0 or d >= 0:
        return 0.0, 0.0, float(patch[1, 1])
    ox = (-2 * f * b + e * c) / det
    oy = (-2 * d * c + e * b) / det
    if ox * ox + oy * oy > 1.0:
        return 0.0, 0.0, float(patch[1, 1])
    peak = a + b * ox + c * oy + d * ox * ox + e * ox * oy + f * oy * oy
    return float(ox), float(oy), float(peak)


def detect_stars(image, max_stars: int = 200, nsigma: float = 8.0) -> StarList:
    """Find significant local maxima and centroid them.

    Background is the image median; a candidate must be a 3x3 local maximum
    exceeding ``background + nsigma * noise``.  Plateaus yield one candidate.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ShapeMismatch(f"image must be at least 3x3, got shape {img.shape}")
    background = float(np.median(img))
    sigma = estimate_noise(img)
    threshold = background + nsigma * sigma

    peaks = (img == ndimage.maximum_filter(img, size=3, mode="nearest")) & (img > threshold)
    peaks[0, :] = peaks[-1, :] = False
    peaks[:, 0] = peaks[:, -1] = False
    labels, count = ndimage.label(peaks, structure=np.ones((3, 3)))
    if count == 0:
        return StarList()
    # one representative per plateau: the first pixel in row-major order
    flat = labels.ravel()
    hit = np.flatnonzero(flat)
    _, first = np.unique(flat[hit], return_index=True)
    rows, cols = np.unravel_index(hit[first], img.shape)

    stars = []
    for r, c in zip(rows, cols):
        ox, oy, peak = _refine(img[r - 1 : r + 2, c - 1 : c + 2])
        flux = peak - background
        if flux <= 0:
            flux = img[r, c] - background
        stars.append((c + ox, r + oy, flux))
    return StarList(stars).brightest(max_stars)


# ---------------------------------------------------------------------------
# geometric hashing


@dataclass(frozen=True)
class QuadHash:
    code: tuple[float, float, float, float]
    star_ids: tuple[int, int, int, int]


# C and D must lie within this radius of the baseline midpoint, in units
# where |AB| = sqrt(2); the default is the circle with diameter AB.  Codes
# are also confined to [CODE_MIN, CODE_MAX], which trims the slivers of
# that circle poking past the box.
DEFAULT_ACCEPT_RADIUS = math.sqrt(2.0) / 2.0
CODE_MIN, CODE_MAX = -0.2, 1.2


_PAIRS = np.array(list(itertools.combinations(range(4), 2)))
# for each baseline pair, the two remaining members in ascending order
_OTHERS = np.array([[k for k in range(4) if k not in pair] for pair in _PAIRS])


def quad_codes(points, accept_radius: float = DEFAULT_ACCEPT_RADIUS):
    """Vectorised :func:`quad_hash` over an ``(m, 4, 2)`` stack of quads.

    Returns ``(codes, order, valid)``: ``codes`` is ``(m, 4)``, ``order`` is
    ``(m, 4)`` giving the canonical A, B, C, D as indices into each quad,
    and ``valid`` flags quads that are not degenerate.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4, 2)
    m = pts.shape[0]
    z = pts[..., 0] + 1j * pts[..., 1]
    dist = np.abs(z[:, _PAIRS[:, 0]] - z[:, _PAIRS[:, 1]])
    best = np.argmax(dist, axis=1)  # first maximum, in combinations order
    rows = np.arange(m)
    ia, ib = _PAIRS[best, 0], _PAIRS[best, 1]
    ic, id_ = _OTHERS[best, 0], _OTHERS[best, 1]
    za, zb, zc, zd = z[rows, ia], z[rows, ib], z[rows, ic], z[rows, id_]

    valid = dist.min(axis=1) > 0
    base = np.where(valid, zb - za, 1.0)
    scale = (1 + 1j) / base
    wc = (zc - za) * scale
    wd = (zd - za) * scale
    centre = 0.5 + 0.5j
    valid &= (np.abs(wc - centre) <= accept_radius) & (np.abs(wd - centre) <= accept_radius)

    flip = wc.real + wd.real > 1
    ia, ib = np.where(flip, ib, ia), np.where(flip, ia, ib)
    wc = np.where(flip, (1 + 1j) - wc, wc)
    wd = np.where(flip, (1 + 1j) - wd, wd)
    swap = wc.real > wd.real
    ic, id_ = np.where(swap, id_, ic), np.where(swap, ic, id_)
    wc, wd = np.where(swap, wd, wc), np.where(swap, wc, wd)

    codes = np.stack([wc.real, wc.imag, wd.real, wd.imag], axis=1)
    valid &= ((codes >= CODE_MIN) & (codes <= CODE_MAX)).all(axis=1)
    order = np.stack([ia, ib, ic, id_], axis=1)
    return codes, order, valid


def quad_hash(points, ids=(0, 1, 2, 3), accept_radius: float = DEFAULT_ACCEPT_RADIUS) -> QuadHash:
    """Similarity-invariant code of four points.

    The most separated pair (A, B) is mapped to (0, 0) and (1, 1) by
    ``z -> (z - A)(1 + i)/(B - A)``; the code is the mapped positions of the
    other two stars.  The result is made canonical by swapping A/B so that
    ``xC + xD <= 1`` and then C/D so that ``xC <= xD``.  C and D must lie
    within ``accept_radius`` of (0.5, 0.5), the circle on diameter AB by
    default, and every code entry within ``[CODE_MIN, CODE_MAX]``.
    """
    codes, order, valid = quad_codes(np.asarray(points, dtype=np.float64).reshape(1, 4, 2), accept_radius)
    if not valid[0]:
        raise DegenerateQuad("coincident points, or C/D outside the acceptance circle")
    sid = tuple(int(ids[k]) for k in order[0])
    return QuadHash(tuple(float(c) for c in codes[0]), sid)


def _quads_by_brightness(n: int):
    """All 4-subsets of ``range(n)`` ordered by their faintest member."""
    for last in range(3, n):
        for trio in itertools.combinations(range(last), 3):
            yield (*trio, last)


def _quad_array(n: int) -> np.ndarray:
    quads = np.fromiter(itertools.chain.from_iterable(_quads_by_brightness(n)), dtype=np.int64)
    return quads.reshape(-1, 4)


@dataclass
class QuadIndex:
    codes: np.ndarray  # (m, 4)
    star_ids: np.ndarray  # (m, 4) catalog indices, canonical A, B, C, D order
    tree: cKDTree = field(repr=False)

    def __len__(self):
        return self.codes.shape[0]

    def lookup(self, code, radius: float) -> list[int]:
        """Entries whose code lies within Euclidean ``radius`` of ``code``."""
        if len(self) == 0:
            return []
        return sorted(self.tree.query_ball_point(np.asarray(code, dtype=np.float64), radius))


def build_index(catalog: StarList, max_quads: int = 30000, max_stars: int | None = 30) -> QuadIndex:
    """Hash catalog quads, brightest stars first, up to ``max_quads`` entries.

    Only the ``max_stars`` brightest catalog stars take part (all when None).
    """
    if len(catalog) < 4:
        raise TooFewStars(f"need at least 4 catalog stars, got {len(catalog)}")
    n = len(catalog) if max_stars is None else max(4, min(max_stars, len(catalog)))
    quads = _quad_array(n)
    codes, order, valid = quad_codes(catalog.xy[quads])
    codes = codes[valid][:max_quads]
    ids = np.take_along_axis(quads, order, axis=1)[valid][:max_quads]
    return QuadIndex(codes, ids, cKDTree(codes if len(codes) else np.zeros((0, 4))))


# ---------------------------------------------------------------------------
# solving


@dataclass
class SolveParams:
    image_width: float
    image_height: float
    code_tolerance: float = 0.01
    match_radius: float = 2.0
    accept_fraction: float = 0.5
    min_matches: int = 10
    max_detected: int = 20
    max_proposals: int = 5000


def fit_similarity(src, dst) -> SimilarityTransform:
    """Least-squares similarity mapping ``src`` points onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    z = src[:, 0] + 1j * src[:, 1]
    w = dst[:, 0] + 1j * dst[:, 1]
    zm, wm = z.mean(), w.mean()
    zc, wc = z - zm, w - wm
    denom = np.vdot(zc, zc).real
    if denom <= 0:
        raise DegenerateQuad("source points coincide")
    a = np.vdot(zc, wc) / denom
    if a == 0:
        raise DegenerateQuad("degenerate fit")
    return SimilarityTransform.from_complex(complex(a), complex(wm - a * zm))


def _verify(transform, detected_xy, tree, catalog_xy, params: SolveParams):
    """Match catalog stars predicted inside the image to detected stars.

    Returns ``(catalog_idx, detected_idx, n_predicted)`` for the matches.
    """
    pred = transform.inverse().apply(catalog_xy)
    inside = (
        (pred[:, 0] >= -0.5)
        & (pred[:, 0] <= params.image_width - 0.5)
        & (pred[:, 1] >= -0.5)
        & (pred[:, 1] <= params.image_height - 0.5)
    )
    cat_idx = np.flatnonzero(inside)
    if cat_idx.size == 0:
        return cat_idx, cat_idx, 0
    dist, det_idx = tree.query(pred[cat_idx], distance_upper_bound=params.match_radius)
    ok = np.isfinite(dist)
    cat_idx, det_idx = cat_idx[ok], det_idx[ok]
    # one detection may only confirm one catalog star
    _, uniq = np.unique(det_idx, return_index=True)
    return cat_idx[uniq], det_idx[uniq], int(inside.sum())


def solve(detected: StarList, index: QuadIndex, catalog: StarList, params: SolveParams) -> SimilarityTransform:
    """Recover the image-to-canvas similarity, or raise :class:`NoSolution`.

    Detected quads are visited brightest first.  Each index hit proposes a
    transform from its four correspondences; a proposal is accepted when at
    least ``accept_fraction`` of the catalog stars it predicts inside the
    image have a detected star within ``match_radius`` and the match count
    reaches ``min_matches`` (or every predicted star, if fewer).  The
    accepted transform is refit on all matched pairs.
    """
    if len(detected) < 4:
        raise TooFewStars(f"need at least 4 detected stars, got {len(detected)}")
    det_xy = detected.xy
    cat_xy = catalog.xy
    tree = cKDTree(det_xy)
    proposals = 0
    n = min(params.max_detected, len(detected))
    quads = _quad_array(n)
    codes, order, valid = quad_codes(det_xy[quads])
    ids = np.take_along_axis(quads, order, axis=1)
    for code, quad in zip(codes[valid], ids[valid]):
        for entry in index.lookup(code, params.code_tolerance):
            proposals += 1
            if proposals > params.max_proposals:
                raise NoSolution(f"proposal budget of {params.max_proposals} exhausted")
            src = det_xy[quad]
            dst = cat_xy[index.star_ids[entry]]
            try:
                guess = fit_similarity(src, dst)
            except DegenerateQuad:
                continue
            cat_m, det_m, n_pred = _verify(guess, det_xy, tree, cat_xy, params)
            needed = min(params.min_matches, n_pred)
            if n_pred == 0 or cat_m.size < needed or cat_m.size < params.accept_fraction * n_pred:
                continue
            refined = fit_similarity(det_xy[det_m], cat_xy[cat_m])
            log.debug("accepted proposal %d: %d/%d matches", proposals, cat_m.size, n_pred)
            return refined
    raise NoSolution(f"no proposal verified after {proposals} lookups")


# ---------------------------------------------------------------------------
# resampling


def resample(image, transform: SimilarityTransform, canvas: Canvas) -> ObservedImage:
    """Nearest-neighbour pull of ``image`` onto the canvas grid.

    Pixel centres sit at integer coordinates.  Each canvas pixel is mapped
    through the inverse transform; if the rounded source location falls
    inside the image the value is copied and the mask set.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    rows, cols = np.indices(canvas.shape)
    src = transform.inverse().apply(np.stack([cols, rows], axis=-1).astype(np.float64))
    u = np.floor(src[..., 0] + 0.5).astype(np.int64)
    v = np.floor(src[..., 1] + 0.5).astype(np.int64)
    mask = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    values = np.zeros(canvas.shape, dtype=np.float64)
    values[mask] = img[v[mask], u[mask]]
    return ObservedImage(canvas, values.ravel(), mask.ravel())
