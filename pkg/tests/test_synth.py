import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enhance.consensus import Canvas
from enhance.errors import DegenerateMask
from enhance.rankcore import tied_ranks
from enhance.register import SimilarityTransform
from enhance.synth import (
    Feature,
    ObservationSpec,
    SceneSpec,
    SynthRecipe,
    ToneMap,
    feature_footprint,
    make_sky,
    make_solve_trial,
    observe,
    observe_frame,
    random_observation,
    random_tonemap,
)


# scenes


def test_empty_scene_is_constant():
    truth, cat = make_sky(SceneSpec(Canvas(20, 10), background=0.25))
    assert truth.shape == (10, 20)
    assert np.all(truth == 0.25) and len(cat) == 0


def test_single_star_peak_location():
    truth, cat = make_sky(SceneSpec(Canvas(40, 40), stars=[(10.0, 20.0, 3.0)]))
    r, c = np.unravel_index(np.argmax(truth), truth.shape)
    assert math.hypot(c - 10, r - 20) <= 1
    assert cat.data.tolist() == [[10.0, 20.0, 3.0]]
    assert truth.max() == pytest.approx(0.1 + 3.0)


def test_scene_deterministic_and_exclusion():
    spec = SceneSpec(Canvas(64, 64), num_stars=40, seed=9, star_exclusion=[(32, 32, 15)], features=[Feature(32, 32, 6, 0.2)])
    a, ca = make_sky(spec)
    b, cb = make_sky(spec)
    assert np.array_equal(a, b) and np.array_equal(ca.data, cb.data)
    assert len(ca) == 40
    assert np.all(np.hypot(ca.xy[:, 0] - 32, ca.xy[:, 1] - 32) >= 15)
    assert np.all((ca.flux >= 0.05) & (ca.flux <= 2.0))


def test_scene_validation():
    with pytest.raises(ValueError):
        SceneSpec(Canvas(4, 4), psf_sigma=-1)
    with pytest.raises(ValueError):
        SceneSpec(Canvas(4, 4), features=[Feature(1, 1, 1, 0.0)])


def test_feature_footprint():
    c = Canvas(50, 50)
    f = Feature(25, 25, 10, 1.0)
    inside = feature_footprint(c, f)
    ring = feature_footprint(c, f, 2, 3)
    assert abs(inside.sum() - math.pi * 100) < 40
    assert not (inside & ring).any()


# tone maps


def test_tonemap_monotone_for_random_seeds():
    probe = np.linspace(-0.2, 1.5, 1000)
    for seed in range(200):
        tm = random_tonemap(seed)
        y = tm(probe)
        assert np.all(np.diff(y) >= 0)
        assert 0.4 <= tm.gamma <= 2.5
        assert y.min() >= 0 and y.max() <= 255


def test_tonemap_deterministic_and_varied():
    assert random_tonemap(5) == random_tonemap(5)
    gammas = {random_tonemap(s).gamma for s in range(100)}
    assert len(gammas) >= 99


def test_tonemap_validation():
    with pytest.raises(ValueError):
        ToneMap(gamma=0)
    with pytest.raises(ValueError):
        ToneMap(lo=1, hi=1)
    with pytest.raises(ValueError):
        ToneMap(levels=256)  # infinite clip range


def test_tonemap_quantization_bins():
    tm = ToneMap(gamma=1.0, lo=0.0, hi=1.0, levels=256)
    ramp = np.linspace(0, 1, 5000)
    q = tm(ramp)
    assert len(np.unique(q)) <= 256
    assert np.array_equal(q, np.floor(ramp * 255 + 0.5))
    # ranks tie exactly within a quantization bin
    r = tied_ranks(q)
    for level in np.unique(q)[:10]:
        assert len(np.unique(r[q == level])) == 1


# observations


def test_observe_identity():
    truth, _ = make_sky(SceneSpec(Canvas(30, 20), num_stars=5, seed=1))
    obs = observe(truth, ObservationSpec(crop=(0, 0, 30, 20)))
    assert obs.mask.all()
    assert np.array_equal(obs.values, truth.ravel())


def test_observe_crop_mask():
    truth = np.random.default_rng(0).random((20, 30))
    obs = observe(truth, ObservationSpec(crop=(5, 3, 10, 8)))
    m = obs.mask.reshape(20, 30)
    assert m.sum() == 80 and m[3:11, 5:15].all()
    assert np.array_equal(obs.values.reshape(20, 30)[m], truth[3:11, 5:15].ravel())


def test_observe_errors():
    truth = np.zeros((10, 10))
    with pytest.raises(DegenerateMask):
        observe(truth, ObservationSpec(crop=(0, 0, 0, 5)))
    with pytest.raises(ValueError):
        observe(truth, ObservationSpec(crop=(5, 5, 10, 10)))
    with pytest.raises(ValueError):
        ObservationSpec(crop=(0, 0, 2, 2), noise_sigma=-1)
    with pytest.raises(ValueError):
        ObservationSpec(crop=(0, 0, 2, 2), noise_mode="sideways")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rank_preservation_without_noise(seed):
    truth, _ = make_sky(SceneSpec(Canvas(24, 24), num_stars=6, seed=seed, features=[Feature(12, 12, 4, 0.1)]))
    tm = random_tonemap(seed, levels=None)
    obs = observe(truth, ObservationSpec(crop=(0, 0, 24, 24), tonemap=ToneMap(tm.gamma, tm.gain, tm.offset)))
    assert np.array_equal(tied_ranks(obs.values), tied_ranks(truth.ravel()))


def test_gamma_quantized_ranks_coarsen_truth():
    truth = np.linspace(0, 1, 900).reshape(30, 30)
    obs = observe(truth, ObservationSpec(crop=(0, 0, 30, 30), tonemap=ToneMap(2.2, 1.0, 0.0, 0.0, 1.0, 256)))
    v = obs.values
    # quantization only merges, it never reorders
    assert np.all(np.diff(v) >= 0)
    assert len(np.unique(v)) <= 256


@pytest.mark.parametrize("mode", ["pre", "post"])
def test_noise_realism(mode):
    truth = np.full((1000, 1000), 0.5)
    sigma = 0.03
    spec = ObservationSpec(crop=(0, 0, 1000, 1000), noise_sigma=sigma, seed=17, noise_mode=mode)
    frame, _ = observe_frame(truth, spec)
    diff = (frame - truth).ravel()
    n = diff.size
    assert abs(diff.mean()) <= 5 * sigma / math.sqrt(n)
    assert abs(diff.std() / sigma - 1) <= 0.05


def test_post_noise_added_after_tonemap():
    truth = np.full((50, 50), 0.5)
    tm = ToneMap(2.0, 1.0, 0.0, 0.0, 1.0, 4)  # 0.25 -> level 1
    pre, _ = observe_frame(truth, ObservationSpec((0, 0, 50, 50), tm, 0.01, seed=1, noise_mode="pre"))
    post, _ = observe_frame(truth, ObservationSpec((0, 0, 50, 50), tm, 0.01, seed=1, noise_mode="post"))
    assert np.all(pre == 1.0)
    assert not np.all(post == 1.0)
    assert np.abs(post - 1.0).max() < 0.1


def test_observation_reproducible():
    truth, _ = make_sky(SceneSpec(Canvas(40, 40), num_stars=10, seed=2))
    spec = random_observation(Canvas(40, 40), 77, noise_sigma=0.02)
    a, b = observe(truth, spec), observe(truth, spec)
    assert a.values.tobytes() == b.values.tobytes() and np.array_equal(a.mask, b.mask)


def test_random_observation_coverage():
    c = Canvas(100, 80)
    for seed in range(50):
        x0, y0, w, h = random_observation(c, seed, (0.6, 1.0)).crop
        assert 0 <= x0 and x0 + w <= 100 and 0 <= y0 and y0 + h <= 80
        assert 0.55 <= w * h / c.size <= 1.0


def test_rotated_observation_registers_back():
    truth = np.add.outer(np.arange(60.0), np.arange(80.0) * 100)
    tf = SimilarityTransform.from_complex(1.3 * complex(math.cos(0.4), math.sin(0.4)), complex(30, 5))
    spec = ObservationSpec(crop=(0, 0, 25, 25), transform=tf)
    frame, to_canvas = observe_frame(truth, spec)
    obs = observe(truth, spec)
    assert obs.num_masked > 0
    # every registered value came from the truth pixel it sits on, to within rounding
    rows, cols = np.divmod(np.flatnonzero(obs.mask), 80)
    got = obs.values[obs.mask]
    assert np.all(np.abs(got % 100 - rows) <= 2)
    assert np.all(np.abs(got // 100 - cols) <= 2)


# recipes


def test_recipe_round_trip():
    scene = SceneSpec(
        Canvas(64, 48),
        num_stars=12,
        seed=3,
        features=[Feature(10.5, 20.25, 4.0, 0.01)],
        stars=[(1.5, 2.5, 0.7)],
        star_exclusion=[(10.0, 20.0, 5.0)],
        ramp_x=np.float64(0.1),
    )
    r = SynthRecipe(scene, num_observations=7, noise_sigma=0.05, levels=None, max_rotation_deg=10, scale_min=0.9)
    back = SynthRecipe.from_text(r.to_text())
    assert back == r
    assert "np." not in r.to_text()
    specs = back.observation_specs()
    assert len(specs) == 7
    truth, _ = make_sky(back.scene)
    for spec in specs:
        observe(truth, spec)
    assert [s.seed for s in specs] == [s.seed for s in r.observation_specs()]


def test_solve_trial_shape():
    t = make_solve_trial(3)
    assert len(t.catalog) == 200
    n_true = len(t.detected) / 1.4
    assert 80 <= n_true <= 160
    assert 0.5 <= t.truth.scale <= 2.0
