"""Synthetic sky scenes and corrupted observations of them.

An observation is produced as ``tone_map(geometry(truth) + noise)``: the
truth is sampled into a camera frame through a similarity transform, Gaussian
noise is added, and a random monotone tone map (gamma, gain, offset,
clipping, quantization) is applied.  The frame is then registered back onto
the truth canvas, yielding an :class:`ObservedImage` whose mask is the frame
footprint.  ``noise_mode="post"`` instead adds the noise after the tone map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kvfile
from .consensus import Canvas, ObservedImage
from .errors import DegenerateMask
from .rankcore import make_rng
from .register import SimilarityTransform, StarList, resample

__all__ = [
    "Feature",
    "SceneSpec",
    "ToneMap",
    "ObservationSpec",
    "SynthRecipe",
    "make_sky",
    "observe",
    "observe_frame",
    "random_tonemap",
    "random_observation",
    "feature_footprint",
]


@dataclass(frozen=True)
class Feature:
    """Gaussian blob ``amplitude * exp(-r^2 / (2 extent^2))``."""

    cx: float
    cy: float
    extent: float
    amplitude: float


@dataclass
class SceneSpec:
    canvas: Canvas
    num_stars: int = 0
    flux_slope: float = 2.0  # p(f) ~ f**-slope
    flux_min: float = 0.05
    flux_max: float = 2.0
    background: float = 0.1
    ramp_x: float = 0.0  # background rises by this much across the width
    ramp_y: float = 0.0
    features: list[Feature] = field(default_factory=list)
    psf_sigma: float = 1.5
    seed: int = 0
    # explicit (x, y, flux) stars, rendered in addition to the random ones
    stars: list[tuple[float, float, float]] = field(default_factory=list)
    # random stars avoid discs (cx, cy, radius); keeps faint features clean
    star_exclusion: list[tuple[float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.psf_sigma < 0:
            raise ValueError("psf_sigma must be >= 0")
        if any(f.amplitude <= 0 for f in self.features):
            raise ValueError("feature amplitudes must be positive")


def _sample_flux(rng, n, slope, fmin, fmax):
    u = rng.random(n)
    if abs(slope - 1.0) < 1e-12:
        return fmin * (fmax / fmin) ** u
    e = 1.0 - slope
    return (fmin**e + u * (fmax**e - fmin**e)) ** (1.0 / e)


def _add_star(img, x, y, flux, sigma):
    h, w = img.shape
    if sigma == 0:
        c, r = int(math.floor(x + 0.5)), int(math.floor(y + 0.5))
        if 0 <= r < h and 0 <= c < w:
            img[r, c] += flux
        return
    rad = int(math.ceil(5 * sigma))
    r0, r1 = max(0, int(y) - rad), min(h, int(y) + rad + 2)
    c0, c1 = max(0, int(x) - rad), min(w, int(x) + rad + 2)
    if r0 >= r1 or c0 >= c1:
        return
    rr, cc = np.mgrid[r0:r1, c0:c1]
    img[r0:r1, c0:c1] += flux * np.exp(-((cc - x) ** 2 + (rr - y) ** 2) / (2 * sigma**2))


def make_sky(spec: SceneSpec) -> tuple[np.ndarray, StarList]:
    """Render the noiseless truth image and return it with its star catalog.

    Star ``flux`` is the PSF peak amplitude above the background.
    """
    canvas = spec.canvas
    rows, cols = np.indices(canvas.shape, dtype=np.float64)
    img = np.full(canvas.shape, float(spec.background))
    if spec.ramp_x:
        img += spec.ramp_x * cols / max(canvas.width - 1, 1)
    if spec.ramp_y:
        img += spec.ramp_y * rows / max(canvas.height - 1, 1)
    for f in spec.features:
        img += f.amplitude * np.exp(-((cols - f.cx) ** 2 + (rows - f.cy) ** 2) / (2 * f.extent**2))

    rng = make_rng(spec.seed)
    stars = [tuple(s) for s in spec.stars]
    placed = 0
    while placed < spec.num_stars:
        x = rng.uniform(0, canvas.width - 1)
        y = rng.uniform(0, canvas.height - 1)
        flux = float(_sample_flux(rng, 1, spec.flux_slope, spec.flux_min, spec.flux_max)[0])
        if any((x - cx) ** 2 + (y - cy) ** 2 < r * r for cx, cy, r in spec.star_exclusion):
            continue
        stars.append((x, y, flux))
        placed += 1
    for x, y, flux in stars:
        _add_star(img, x, y, flux, spec.psf_sigma)
    return img, StarList(stars)


def feature_footprint(canvas: Canvas, feature: Feature, inner: float = 0.0, outer: float = 1.0) -> np.ndarray:
    """Boolean mask of ``inner*extent <= r <= outer*extent`` around a feature."""
    rows, cols = np.indices(canvas.shape, dtype=np.float64)
    r = np.hypot(cols - feature.cx, rows - feature.cy)
    return (r >= inner * feature.extent) & (r <= outer * feature.extent)


@dataclass(frozen=True)
class ToneMap:
    """``quantize(clip(gain * sign(x)|x|**gamma + offset, lo, hi))``.

    Quantized output is the integer level ``0..levels-1`` as float.
    """

    gamma: float = 1.0
    gain: float = 1.0
    offset: float = 0.0
    lo: float = -math.inf
    hi: float = math.inf
    levels: int | None = None

    def __post_init__(self):
        if not (self.gamma > 0 and self.gain > 0):
            raise ValueError("gamma and gain must be positive")
        if not self.lo < self.hi:
            raise ValueError("clip range must satisfy lo < hi")
        if self.levels is not None:
            if self.levels < 2:
                raise ValueError("levels must be >= 2")
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
                raise ValueError("quantization needs a finite clip range")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = self.gain * np.sign(x) * np.abs(x) ** self.gamma + self.offset
        y = np.clip(y, self.lo, self.hi)
        if self.levels is not None:
            y = np.floor((y - self.lo) / (self.hi - self.lo) * (self.levels - 1) + 0.5)
        return y


def random_tonemap(seed: int, levels: int | None = 256) -> ToneMap:
    """Random display-style tone map for inputs roughly in ``[0, 1]``.

    gamma ~ U[0.4, 2.5]; gain log-uniform on [0.25, 4]; offset = gain * U[-0.1, 0.1];
    black point ``lo = 0``; white point ``hi = gain * (t**gamma + u)`` with
    t ~ U[0.6, 1.0], so the brightest part of the input saturates and, for a
    negative offset, the darkest part clips to black.
    """
    rng = make_rng(seed)
    gamma = float(rng.uniform(0.4, 2.5))
    gain = float(math.exp(rng.uniform(-math.log(4.0), math.log(4.0))))
    offset = gain * float(rng.uniform(-0.1, 0.1))
    white = float(rng.uniform(0.6, 1.0))
    hi = gain * white**gamma + offset
    return ToneMap(gamma, gain, offset, 0.0, hi, levels)


@dataclass
class ObservationSpec:
    """One corrupted view of the truth.

    ``crop = (x0, y0, w, h)`` sets the camera frame size and its origin on
    the canvas; ``transform`` maps frame pixels to crop-relative canvas
    coordinates (identity for an axis-aligned cutout).  The whole mapped
    frame must land inside the source image.
    """

    crop: tuple[int, int, int, int]
    tonemap: ToneMap = field(default_factory=ToneMap)
    noise_sigma: float = 0.0
    transform: SimilarityTransform = field(default_factory=SimilarityTransform)
    seed: int = 0
    noise_mode: str = "pre"

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noise_mode not in ("pre", "post"):
            raise ValueError("noise_mode must be 'pre' or 'post'")

    def frame_to_canvas(self) -> SimilarityTransform:
        x0, y0, _, _ = self.crop
        return SimilarityTransform(dx=x0, dy=y0).compose(self.transform)


def observe_frame(truth, spec: ObservationSpec) -> tuple[np.ndarray, SimilarityTransform]:
    """The unregistered camera frame and its frame-to-canvas transform."""
    truth = np.asarray(truth, dtype=np.float64)
    H, W = truth.shape
    x0, y0, w, h = spec.crop
    if w <= 0 or h <= 0:
        raise DegenerateMask("empty crop")
    if x0 < 0 or y0 < 0 or x0 >= W or y0 >= H:
        raise ValueError(f"crop origin {spec.crop[:2]} outside the {W}x{H} source")
    to_canvas = spec.frame_to_canvas()
    rows, cols = np.indices((h, w))
    xy = to_canvas.apply(np.stack([cols, rows], axis=-1).astype(np.float64))
    c = np.floor(xy[..., 0] + 0.5).astype(np.int64)
    r = np.floor(xy[..., 1] + 0.5).astype(np.int64)
    if c.min() < 0 or r.min() < 0 or c.max() >= W or r.max() >= H:
        raise ValueError("transformed frame leaves the source extent")
    frame = truth[r, c]

    rng = make_rng(spec.seed)
    noise = rng.normal(0.0, spec.noise_sigma, size=frame.shape) if spec.noise_sigma > 0 else 0.0
    if spec.noise_mode == "pre":
        frame = spec.tonemap(frame + noise)
    else:
        frame = spec.tonemap(frame) + noise
    return frame, to_canvas


def observe(truth, spec: ObservationSpec) -> ObservedImage:
    """Corrupted observation registered back onto the truth canvas."""
    truth = np.asarray(truth)
    frame, to_canvas = observe_frame(truth, spec)
    canvas = Canvas(truth.shape[1], truth.shape[0])
    obs = resample(frame, to_canvas, canvas)
    if obs.num_masked == 0:
        raise DegenerateMask("observation footprint misses the canvas")
    return obs


def random_observation(
    canvas: Canvas,
    seed: int,
    coverage: tuple[float, float] = (0.6, 1.0),
    noise_sigma: float = 0.0,
    levels: int | None = 256,
    noise_mode: str = "pre",
) -> ObservationSpec:
    """Axis-aligned cutout covering a random fraction of the canvas area."""
    rng = make_rng(seed)
    frac = rng.uniform(*coverage)
    # split the area fraction between the two axes, each axis at least `frac`
    fx = float(np.exp(rng.uniform(math.log(frac), 0.0)))
    fy = min(1.0, frac / fx)
    w = max(2, int(round(fx * canvas.width)))
    h = max(2, int(round(fy * canvas.height)))
    w, h = min(w, canvas.width), min(h, canvas.height)
    x0 = int(rng.integers(0, canvas.width - w + 1))
    y0 = int(rng.integers(0, canvas.height - h + 1))
    tone_seed, noise_seed = (int(s) for s in rng.integers(0, 2**63, size=2))
    return ObservationSpec(
        crop=(x0, y0, w, h),
        tonemap=random_tonemap(tone_seed, levels),
        noise_sigma=noise_sigma,
        seed=noise_seed,
        noise_mode=noise_mode,
    )


@dataclass
class SynthRecipe:
    """A scene plus a recipe for a batch of random observations of it.

    Serialized as ``key=value`` text; ``feature=cx,cy,extent,amplitude`` may
    repeat.
    """

    scene: SceneSpec
    num_observations: int = 20
    noise_sigma: float = 0.02
    levels: int | None = 256
    coverage_min: float = 0.6
    coverage_max: float = 1.0
    noise_mode: str = "pre"
    max_rotation_deg: float = 0.0
    scale_min: float = 1.0
    scale_max: float = 1.0

    _SCENE_FLOATS = ("flux_slope", "flux_min", "flux_max", "background", "ramp_x", "ramp_y", "psf_sigma")

    def to_text(self) -> str:
        s = self.scene
        items = [("width", s.canvas.width), ("height", s.canvas.height), ("num_stars", s.num_stars)]
        items += [(k, repr(float(getattr(s, k)))) for k in self._SCENE_FLOATS]
        items.append(("seed", s.seed))
        items += [("feature", ",".join(repr(float(t)) for t in (f.cx, f.cy, f.extent, f.amplitude))) for f in s.features]
        items += [("star", ",".join(repr(float(t)) for t in star)) for star in s.stars]
        items += [("star_exclusion", ",".join(repr(float(t)) for t in disc)) for disc in s.star_exclusion]
        items += [
            ("num_observations", self.num_observations),
            ("noise_sigma", repr(float(self.noise_sigma))),
            ("levels", "none" if self.levels is None else self.levels),
            ("coverage_min", repr(float(self.coverage_min))),
            ("coverage_max", repr(float(self.coverage_max))),
            ("noise_mode", self.noise_mode),
            ("max_rotation_deg", repr(float(self.max_rotation_deg))),
            ("scale_min", repr(float(self.scale_min))),
            ("scale_max", repr(float(self.scale_max))),
        ]
        return kvfile.dump(items)

    @classmethod
    def from_text(cls, text: str) -> "SynthRecipe":
        items = kvfile.parse(text)
        d = kvfile.as_dict(items)

        def tuples(key):
            return [tuple(float(t) for t in v.split(",")) for v in kvfile.get_all(items, key)]

        scene = SceneSpec(
            canvas=Canvas(int(d.get("width", 256)), int(d.get("height", 256))),
            num_stars=int(d.get("num_stars", 0)),
            seed=int(d.get("seed", 0)),
            features=[Feature(*t) for t in tuples("feature")],
            stars=tuples("star"),
            star_exclusion=tuples("star_exclusion"),
            **{k: float(d[k]) for k in cls._SCENE_FLOATS if k in d},
        )
        levels = d.get("levels", "256")
        return cls(
            scene=scene,
            num_observations=int(d.get("num_observations", 20)),
            noise_sigma=float(d.get("noise_sigma", 0.02)),
            levels=None if levels.lower() == "none" else int(levels),
            coverage_min=float(d.get("coverage_min", 0.6)),
            coverage_max=float(d.get("coverage_max", 1.0)),
            noise_mode=d.get("noise_mode", "pre"),
            max_rotation_deg=float(d.get("max_rotation_deg", 0.0)),
            scale_min=float(d.get("scale_min", 1.0)),
            scale_max=float(d.get("scale_max", 1.0)),
        )

    def observation_specs(self) -> list[ObservationSpec]:
        """Deterministic observation specs derived from the scene seed."""
        canvas = self.scene.canvas
        rng = make_rng(self.scene.seed ^ 0x5EED)
        specs = []
        for _ in range(self.num_observations):
            sub_seed = int(rng.integers(0, 2**63))
            spec = random_observation(
                canvas,
                sub_seed,
                (self.coverage_min, self.coverage_max),
                self.noise_sigma,
                self.levels,
                self.noise_mode,
            )
            if self.max_rotation_deg or self.scale_min != 1.0 or self.scale_max != 1.0:
                spec = _with_geometry(spec, canvas, rng, self.max_rotation_deg, self.scale_min, self.scale_max)
            specs.append(spec)
        return specs


def _with_geometry(spec, canvas, rng, max_rot_deg, smin, smax):
    """Shrink the cutout and add a rotation/scale that keeps it on the canvas."""
    rot = math.radians(rng.uniform(-max_rot_deg, max_rot_deg))
    scale = float(rng.uniform(smin, smax))
    x0, y0, w, h = spec.crop
    # frame is w x h camera pixels covering scale*w x scale*h canvas pixels,
    # rotated about the frame centre; fit it inside the crop rectangle
    c, s = abs(math.cos(rot)), abs(math.sin(rot))
    fw = fh = max(2, int(min(w, h) / (scale * (c + s))) - 1)
    a = scale * complex(math.cos(rot), math.sin(rot))
    centre_frame = complex((fw - 1) / 2, (fh - 1) / 2)
    centre_crop = complex((w - 1) / 2, (h - 1) / 2)
    b = centre_crop - a * centre_frame
    tf = SimilarityTransform.from_complex(a, b)
    return ObservationSpec(
        crop=(x0, y0, fw, fh),
        tonemap=spec.tonemap,
        noise_sigma=spec.noise_sigma,
        transform=tf,
        seed=spec.seed,
        noise_mode=spec.noise_mode,
    )


@dataclass
class SolveTrial:
    catalog: StarList
    detected: StarList
    truth: SimilarityTransform  # image -> catalog frame
    image_size: tuple[float, float]


def make_solve_trial(
    seed: int,
    num_catalog: int = 200,
    field_size: float = 1000.0,
    visible: float = 0.6,
    jitter: float = 0.2,
    spurious: float = 0.4,
    scale_range: tuple[float, float] = (0.5, 2.0),
) -> SolveTrial:
    """Catalog plus a detected star list seen through a random similarity.

    The square image covers about ``visible`` of the catalog field area.
    Detected positions get Gaussian ``jitter`` (image pixels), and
    ``spurious * n_visible`` fake detections are mixed in with fluxes from
    the same distribution.
    """
    rng = make_rng(seed)
    xy = rng.uniform(0, field_size, size=(num_catalog, 2))
    flux = _sample_flux(rng, num_catalog, 2.0, 1.0, 100.0)
    catalog = StarList(np.column_stack([xy, flux]))

    scale = float(rng.uniform(*scale_range))
    rotation = float(rng.uniform(0, 2 * math.pi))
    side = field_size * math.sqrt(visible) / scale
    a = scale * complex(math.cos(rotation), math.sin(rotation))
    centre_img = complex(side / 2, side / 2)
    centre_field = complex(field_size / 2, field_size / 2)
    truth = SimilarityTransform.from_complex(a, centre_field - a * centre_img)

    img_xy = truth.inverse().apply(catalog.xy)
    inside = ((img_xy >= 0) & (img_xy < side)).all(axis=1)
    seen = img_xy[inside] + rng.normal(0, jitter, size=(int(inside.sum()), 2))
    n_fake = int(round(spurious * inside.sum()))
    fake = rng.uniform(0, side, size=(n_fake, 2))
    fake_flux = _sample_flux(rng, n_fake, 2.0, 1.0, 100.0)
    detected = StarList(
        np.vstack([np.column_stack([seen, catalog.flux[inside]]), np.column_stack([fake, fake_flux])])
    )
    return SolveTrial(catalog, detected, truth, (side, side))
