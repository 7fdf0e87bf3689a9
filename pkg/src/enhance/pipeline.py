"""Batch orchestration: register inputs, fold them into consensus states,
render, and score the result.

Inputs are processed in a fixed order (sorted paths, or an explicit order
file), since the consensus update is order dependent.  Registered images
are not kept in memory; they are re-decoded and resampled on each pass.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kvfile
from .consensus import (
    Canvas,
    ConsensusState,
    ObservedImage,
    histogram_weights,
    init_from_image,
    init_random,
    render,
    update,
)
from .errors import (
    ConfigError,
    DecodeError,
    DegenerateInput,
    DegenerateMask,
    EmptyRun,
    NoSolution,
    ShapeMismatch,
    TooFewStars,
)
from .imageio import decode_image, luminance
from .rankcore import kendall_tau, kendall_tau_sampled, make_rng
from .register import (
    SimilarityTransform,
    SolveParams,
    StarList,
    build_index,
    detect_stars,
    read_sidecar,
    resample,
    solve,
)

log = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".transform"
CHANNEL_NAMES = {1: ("L",), 3: ("R", "G", "B")}


@dataclass
class RunConfig:
    width: int
    height: int
    inputs: list[str]
    order_file: str | None = None
    channel_mode: str = "luminance"  # or "per-channel"
    init_mode: str = "from-image"  # or "random"
    seed: int = 0
    solve_mode: str = "sidecar"  # or "solve"
    catalog: str | None = None
    weight_mode: str = "unit"  # or "histogram"
    skip_uninformative: bool = False
    render_source: str = "mean"  # or "equalized"
    reference: str | None = None
    tau_image_pairs: int = 200
    tau_pixel_pairs: int = 100_000
    tau_exact: bool = False
    state_out: str | None = None
    render_out: str | None = None
    report_out: str | None = None

    _CHOICES = {
        "channel_mode": ("luminance", "per-channel"),
        "init_mode": ("random", "from-image"),
        "solve_mode": ("solve", "sidecar"),
        "weight_mode": ("unit", "histogram"),
        "render_source": ("mean", "equalized"),
    }

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("canvas width and height must be >= 1")
        for key, allowed in self._CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.solve_mode == "solve" and not self.catalog:
            raise ConfigError("solve_mode=solve requires a catalog")
        if self.tau_image_pairs < 0 or self.tau_pixel_pairs < 1:
            raise ConfigError("tau budgets must be positive")

    @property
    def canvas(self) -> Canvas:
        return Canvas(self.width, self.height)

    def ordered_inputs(self) -> list[str]:
        if self.order_file:
            lines = Path(self.order_file).read_text().splitlines()
            return [ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")]
        return sorted(self.inputs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        """Read a ``key=value`` config; relative paths resolve against its directory.

        ``input=`` may repeat; ``inputs=`` takes a comma-separated list and
        ``input_glob=`` a glob pattern.
        """
        path = Path(path)
        try:
            items = kvfile.load(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        base = path.parent
        d = kvfile.as_dict(items)

        def p(value):
            return str((base / value).resolve()) if value else None

        inputs = [p(v) for v in kvfile.get_all(items, "input")]
        for v in kvfile.get_all(items, "inputs"):
            inputs += [p(t.strip()) for t in v.split(",") if t.strip()]
        for pattern in kvfile.get_all(items, "input_glob"):
            inputs += [str(q.resolve()) for q in base.glob(pattern)]

        known = set(cls.__dataclass_fields__) | {"input", "inputs", "input_glob"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = dict(
                width=int(d["width"]),
                height=int(d["height"]),
                inputs=inputs,
                order_file=p(d.get("order_file")),
                channel_mode=d.get("channel_mode", "luminance"),
                init_mode=d.get("init_mode", "from-image"),
                seed=int(d.get("seed", 0)),
                solve_mode=d.get("solve_mode", "sidecar"),
                catalog=p(d.get("catalog")),
                weight_mode=d.get("weight_mode", "unit"),
                skip_uninformative=kvfile.parse_bool(d.get("skip_uninformative", "false")),
                render_source=d.get("render_source", "mean"),
                reference=p(d.get("reference")),
                tau_image_pairs=int(d.get("tau_image_pairs", 200)),
                tau_pixel_pairs=int(d.get("tau_pixel_pairs", 100_000)),
                tau_exact=kvfile.parse_bool(d.get("tau_exact", "false")),
                state_out=p(d.get("state_out")),
                render_out=p(d.get("render_out")),
                report_out=p(d.get("report_out")),
            )
        except KeyError as exc:
            raise ConfigError(f"missing required key {exc.args[0]!r}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if kw["order_file"] is None and not inputs:
            raise ConfigError("no inputs given")
        return cls(**kw)


# ---------------------------------------------------------------------------
# baseline


def weighted_average_baseline(images: Sequence[ObservedImage]) -> tuple[np.ndarray, np.ndarray]:
    """Mask-weighted mean of the inputs.

    Returns flat ``(average, coverage)``; pixels no image covers are 0 and
    ``coverage`` is False there.
    """
    if len(images) == 0:
        raise ValueError("need at least one image")
    canvas = images[0].canvas
    total = np.zeros(canvas.size)
    count = np.zeros(canvas.size)
    for img in images:
        if img.canvas != canvas:
            raise ShapeMismatch(f"canvas mismatch: {img.canvas} vs {canvas}")
        total[img.mask] += img.values[img.mask]
        count[img.mask] += 1
    covered = count > 0
    avg = np.zeros(canvas.size)
    avg[covered] = total[covered] / count[covered]
    return avg, covered


def is_uninformative(image: ObservedImage) -> bool:
    vals = image.values[image.mask]
    return vals.size == 0 or bool(vals.min() == vals.max())


def combine_observations(
    images: Sequence[ObservedImage],
    init: ConsensusState,
    skip_uninformative: bool = False,
) -> tuple[ConsensusState, int]:
    """Fold images into ``init`` in sequence; returns ``(state, n_applied)``."""
    state = init
    applied = 0
    for img in images:
        if skip_uninformative and is_uninformative(img):
            continue
        try:
            state = update(state, img)
        except DegenerateMask as exc:
            log.warning("skipping image: %s", exc)
            continue
        applied += 1
    return state, applied


# ---------------------------------------------------------------------------
# metrics


@dataclass
class ChannelMetrics:
    channel: str
    mean_inter_image_tau: float | None = None
    mean_image_to_consensus_tau: float | None = None
    consensus_vs_reference_tau: float | None = None
    weighted_average_vs_reference_tau: float | None = None
    per_image_tau_vs_reference: list[float | None] = field(default_factory=list)


@dataclass
class MetricsReport:
    images_in: int
    images_used: int
    images_skipped: int
    inputs_used: list[str] = field(default_factory=list)
    channels: list[ChannelMetrics] = field(default_factory=list)
    tau_method: str = "sampled"

    def __post_init__(self):
        if self.images_in != self.images_used + self.images_skipped:
            raise ValueError("image accounting does not add up")


class _TauMeter:
    """Sampled (or exact) tau with a deterministic seed stream."""

    def __init__(self, pixel_pairs: int, seed: int, exact: bool = False):
        self.pixel_pairs = pixel_pairs
        self.exact = exact
        self._rng = make_rng(seed)

    def __call__(self, a, b) -> float | None:
        sub_seed = int(self._rng.integers(0, 2**63))
        try:
            if self.exact:
                return kendall_tau(a, b)
            return kendall_tau_sampled(a, b, self.pixel_pairs, sub_seed)[0]
        except DegenerateInput:
            return None


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def channel_metrics(
    name: str,
    images: Sequence[ObservedImage],
    state: ConsensusState,
    average: np.ndarray,
    covered: np.ndarray,
    reference: np.ndarray | None,
    image_pairs: int,
    meter: _TauMeter,
    seed: int,
) -> ChannelMetrics:
    m = ChannelMetrics(name)
    ranks = state.ranks.astype(np.float64)
    n = len(images)

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if len(pairs) > image_pairs:
        pick = make_rng(seed).choice(len(pairs), size=image_pairs, replace=False)
        pairs = [pairs[k] for k in sorted(pick)]
    inter = []
    for i, j in pairs:
        a, b = images[i], images[j]
        both = a.mask & b.mask
        if np.count_nonzero(both) >= 2:
            inter.append(meter(a.values[both], b.values[both]))
    m.mean_inter_image_tau = _mean(inter)

    to_consensus = []
    for img in images:
        if img.num_masked >= 2:
            to_consensus.append(meter(img.values[img.mask], ranks[img.mask]))
    m.mean_image_to_consensus_tau = _mean(to_consensus)

    if reference is not None:
        ref = np.asarray(reference, dtype=np.float64).ravel()
        if ref.size != state.canvas.size:
            raise ShapeMismatch("reference image does not match the canvas")
        m.consensus_vs_reference_tau = meter(ranks[covered], ref[covered])
        m.weighted_average_vs_reference_tau = meter(average[covered], ref[covered])
        m.per_image_tau_vs_reference = [
            meter(img.values[img.mask], ref[img.mask]) if img.num_masked >= 2 else None
            for img in images
        ]
    return m


# ---------------------------------------------------------------------------
# registration and lazy loading


@dataclass(frozen=True)
class RegisteredInput:
    path: str
    transform: SimilarityTransform


class _Solver:
    def __init__(self, catalog_path: str):
        self.catalog = StarList.read(catalog_path)
        self.index = build_index(self.catalog)

    def __call__(self, lum: np.ndarray) -> SimilarityTransform:
        detected = detect_stars(lum, max_stars=200)
        params = SolveParams(image_width=lum.shape[1], image_height=lum.shape[0])
        return solve(detected, self.index, self.catalog, params)


class ObservationSeq(Sequence):
    """Registered inputs, re-decoded and resampled on access, for one channel."""

    def __init__(self, registered, canvas, channel, n_channels, weight_mode):
        self.registered = registered
        self.canvas = canvas
        self.channel = channel
        self.n_channels = n_channels
        self.weight_mode = weight_mode

    def __len__(self):
        return len(self.registered)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        reg = self.registered[i]
        channels = decode_image(reg.path)
        if self.n_channels == 1:
            grid = luminance(channels)
        else:
            grid = channels[self.channel] if len(channels) == 3 else channels[0]
        obs = resample(grid, reg.transform, self.canvas)
        if self.weight_mode == "histogram" and obs.num_masked >= 2:
            obs = ObservedImage(obs.canvas, obs.values, obs.mask, histogram_weights(obs))
        return obs


def register_inputs(config: RunConfig) -> tuple[list[RegisteredInput], list[tuple[str, str]]]:
    """Decode and register every input; failures are logged and skipped."""
    solver = _Solver(config.catalog) if config.solve_mode == "solve" else None
    canvas = config.canvas
    used, skipped = [], []
    for path in config.ordered_inputs():
        try:
            lum = luminance(decode_image(path))
            if solver is not None:
                transform = solver(lum)
            else:
                transform = read_sidecar(path + SIDECAR_SUFFIX)
            obs = resample(lum, transform, canvas)
            if obs.num_masked < 2:
                raise DegenerateMask(f"footprint covers {obs.num_masked} canvas pixels")
            if config.skip_uninformative and is_uninformative(obs):
                raise DegenerateMask("no rank information inside the footprint")
        except (DecodeError, OSError, ValueError, NoSolution, TooFewStars, DegenerateMask) as exc:
            log.warning("skipping %s: %s", path, exc)
            skipped.append((path, str(exc)))
            continue
        used.append(RegisteredInput(path, transform))
    return used, skipped


# ---------------------------------------------------------------------------
# end to end


@dataclass
class CombineResult:
    states: list[ConsensusState]
    report: MetricsReport
    renders: list[np.ndarray]
    averages: list[np.ndarray]
    coverage: np.ndarray


def render_source(average: np.ndarray, mode: str) -> np.ndarray:
    if mode == "mean":
        return average
    return np.linspace(0.0, 1.0, average.size)


def run_combine(config: RunConfig) -> CombineResult:
    """Register, combine, render and score one batch; see :class:`RunConfig`."""
    canvas = config.canvas
    registered, skipped = register_inputs(config)
    images_in = len(registered) + len(skipped)
    if not registered:
        raise EmptyRun(f"none of {images_in} inputs could be registered")

    n_channels = 3 if config.channel_mode == "per-channel" else 1
    names = CHANNEL_NAMES[n_channels]
    reference = None
    if config.reference:
        reference = luminance(decode_image(config.reference))
        if reference.shape != canvas.shape:
            raise ConfigError("reference image must have the canvas dimensions")

    states, renders, averages, metrics = [], [], [], []
    coverage = None
    meter = _TauMeter(config.tau_pixel_pairs, config.seed, exact=config.tau_exact)
    for ch in range(n_channels):
        seq = ObservationSeq(registered, canvas, ch, n_channels, config.weight_mode)
        average, coverage = weighted_average_baseline(seq)
        if config.init_mode == "from-image":
            init = init_from_image(ObservedImage.full(average, canvas), config.seed + ch)
        else:
            init = init_random(canvas, config.seed + ch)
        state, _ = combine_observations(seq, init, config.skip_uninformative)
        states.append(state)
        averages.append(average.reshape(canvas.shape))
        renders.append(render(state, render_source(average, config.render_source)))
        metrics.append(
            channel_metrics(
                names[ch], seq, state, average, coverage, reference,
                config.tau_image_pairs, meter, config.seed + 7919 * (ch + 1),
            )
        )

    report = MetricsReport(
        images_in=images_in,
        images_used=len(registered),
        images_skipped=len(skipped),
        inputs_used=[r.path for r in registered],
        channels=metrics,
        tau_method="exact" if config.tau_exact else "sampled",
    )
    return CombineResult(states, report, renders, averages, coverage.reshape(canvas.shape))


def format_report(report: MetricsReport) -> str:
    """Plain-text table followed by a ``[metrics]`` key=value block."""

    def fmt(v):
        return "n/a" if v is None else f"{v:+.4f}"

    cols = ("channel", "inter_image", "image_to_consensus", "consensus_vs_ref", "average_vs_ref")
    lines = [
        f"images: {report.images_in} in, {report.images_used} used, {report.images_skipped} skipped",
        f"kendall tau ({report.tau_method})",
        "  ".join(f"{c:>18}" for c in cols),
    ]
    for m in report.channels:
        row = (
            m.channel,
            fmt(m.mean_inter_image_tau),
            fmt(m.mean_image_to_consensus_tau),
            fmt(m.consensus_vs_reference_tau),
            fmt(m.weighted_average_vs_reference_tau),
        )
        lines.append("  ".join(f"{c:>18}" for c in row))
    lines.append("")
    lines.append("[metrics]")
    kv = [
        ("images_in", report.images_in),
        ("images_used", report.images_used),
        ("images_skipped", report.images_skipped),
        ("tau_method", report.tau_method),
    ]
    for m in report.channels:
        for key in (
            "mean_inter_image_tau",
            "mean_image_to_consensus_tau",
            "consensus_vs_reference_tau",
            "weighted_average_vs_reference_tau",
        ):
            v = getattr(m, key)
            kv.append((f"{m.channel}.{key}", "nan" if v is None else repr(float(v))))
        for path, v in zip(report.inputs_used, m.per_image_tau_vs_reference):
            kv.append((f"{m.channel}.tau_vs_reference[{Path(path).name}]", "nan" if v is None else repr(float(v))))
    lines.append(kvfile.dump(kv).rstrip("\n"))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    """The ``[metrics]`` block of a report as a dict."""
    _, _, block = text.partition("[metrics]\n")
    return kvfile.as_dict(kvfile.parse(block))


def tau_all_finite(report: MetricsReport) -> bool:
    vals = []
    for m in report.channels:
        vals += [
            m.mean_inter_image_tau,
            m.mean_image_to_consensus_tau,
            m.consensus_vs_reference_tau,
            m.weighted_average_vs_reference_tau,
            *m.per_image_tau_vs_reference,
        ]
    return all(v is None or (math.isfinite(v) and -1 <= v <= 1) for v in vals)
