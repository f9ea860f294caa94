import base64
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lightarena.field import (
    BoundsError, Field, FieldConfigError, TileLayer, VirtualObject, blocked_mask, deposit, deposit_many,
    displayed_labels, field_thumbnail, make_pattern, make_tile_layer_frame, sample_field, sample_field_many,
    step_field,
)


def grid(values, cell=10.0, **kw):
    return Field(np.asarray(values, float), cell, **kw)


# -- deposit -----------------------------------------------------------------

def test_deposit_zero_is_noop():
    f = Field.empty(4, 3, 10.0)
    assert np.array_equal(deposit(f, (15, 15), 0.0).values, f.values)


def test_deposit_single_cell():
    f = deposit(Field.empty(4, 3, 10.0), (25.0, 15.0), 5.0)
    expect = np.zeros((3, 4))
    expect[1, 2] = 5.0
    assert np.array_equal(f.values, expect)
    assert f.mass == 5.0


def test_deposits_add_up():
    f = deposit(deposit(Field.empty(4, 3, 10.0), (1, 1), 2.0), (1, 1), 3.0)
    assert f.values[0, 0] == 5.0


def test_deposit_is_pure():
    f = Field.empty(4, 3, 10.0)
    deposit(f, (1, 1), 2.0)
    assert f.mass == 0


def test_deposit_errors():
    f = Field.empty(4, 3, 10.0)
    with pytest.raises(BoundsError):
        deposit(f, (41, 5), 1.0)
    with pytest.raises(BoundsError):
        deposit(f, (5, -0.1), 1.0)
    with pytest.raises(ValueError):
        deposit(f, (5, 5), -1.0)


def test_deposit_on_far_edge_lands_in_last_cell():
    f = deposit(Field.empty(4, 3, 10.0), (40.0, 30.0), 1.0)
    assert f.values[2, 3] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 40), st.floats(0, 30), st.floats(0, 10)), max_size=20))
def test_deposit_many_matches_sequential(items):
    f = Field.empty(4, 3, 10.0)
    seq = f
    for x, y, a in items:
        seq = deposit(seq, (x, y), a)
    many = deposit_many(f, [(x, y) for x, y, _ in items], [a for *_, a in items])
    np.testing.assert_allclose(many.values, seq.values, rtol=1e-12)
    assert many.mass == pytest.approx(sum(a for *_, a in items))


# -- step --------------------------------------------------------------------

def test_uniform_field_unchanged_by_diffusion():
    f = grid(np.full((5, 6), 4.2), diffusion_d=10.0, dt=1.0)
    assert np.array_equal(step_field(f, 1.0).values, f.values)


def test_impulse_stencil_exact():
    v = np.zeros((5, 5))
    v[2, 2] = 1.0
    f = grid(v, cell=1.0, diffusion_d=0.1, dt=1.0)
    out = step_field(f, 1.0).values
    assert out[2, 2] == 0.6
    assert out[1, 2] == out[3, 2] == out[2, 1] == out[2, 3] == 0.1
    assert out.sum() == pytest.approx(1.0, abs=1e-15)


def test_evaporation_only():
    f = grid(np.ones((3, 4)), diffusion_d=0.0, evaporation_rho=0.5, dt=2.0)
    out = step_field(f, 2.0).values
    assert np.all(out == math.exp(-1.0))
    assert out[0, 0] == pytest.approx(0.367879, abs=1e-6)


def test_reflective_corner():
    v = np.zeros((3, 3))
    v[0, 0] = 1.0
    out = step_field(grid(v, cell=1.0, diffusion_d=0.2), 1.0).values
    # corner has two open faces: 1 - 2*0.2 stays
    assert out[0, 0] == pytest.approx(0.6)
    assert out[0, 1] == out[1, 0] == pytest.approx(0.2)


def test_blocked_cells_exchange_nothing():
    v = np.zeros((3, 5))
    v[1, 1] = 1.0
    blocked = np.zeros((3, 5), bool)
    blocked[:, 2] = True
    f = grid(v, cell=1.0, diffusion_d=0.2, blocked=blocked)
    for _ in range(50):
        f = step_field(f, 1.0)
    assert not f.values[:, 2:].any()
    assert f.mass == pytest.approx(1.0, rel=1e-12)


def test_stability_bound_at_construction():
    with pytest.raises(FieldConfigError, match="0.25"):
        Field.empty(3, 3, 1.0, diffusion_d=0.3, dt=1.0)
    Field.empty(3, 3, 1.0, diffusion_d=0.25, dt=1.0)


def test_step_rejects_bad_dt():
    f = Field.empty(3, 3, 1.0, diffusion_d=0.1)
    with pytest.raises(ValueError):
        step_field(f, 0.0)
    with pytest.raises(ValueError):
        step_field(f, 3.0)


def test_invalid_values_rejected():
    with pytest.raises(FieldConfigError):
        grid([[1.0, -1.0]])
    with pytest.raises(FieldConfigError):
        grid([[1.0, np.nan]])


values_st = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                   elements=st.floats(0, 100, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(values_st, st.floats(0.0, 0.25))
def test_mass_conserved_and_bounds_kept(v, c):
    f = grid(v, cell=1.0, diffusion_d=c)
    m0 = f.mass
    lo, hi = v.min(), v.max()
    for _ in range(20):
        f = step_field(f, 1.0)
        assert np.all(f.values >= 0)
        # maximum principle (with float slack)
        assert f.values.max() <= hi * (1 + 1e-12) + 1e-12
        assert f.values.min() >= lo * (1 - 1e-12) - 1e-12
        lo, hi = f.values.min(), f.values.max()
    assert f.mass == pytest.approx(m0, rel=1e-9, abs=1e-9)


normal_values_st = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                          elements=st.one_of(st.just(0.0), st.floats(1e-6, 100)))


@settings(max_examples=40, deadline=None)
@given(normal_values_st, st.floats(0.01, 2.0), st.floats(0.01, 1.0), st.integers(1, 50))
def test_evaporation_is_exponential(v, rho, dt, k):
    f = grid(v, cell=1.0, evaporation_rho=rho, dt=dt)
    for _ in range(k):
        f = step_field(f, dt)
    np.testing.assert_allclose(f.values, v * math.exp(-rho * dt * k), rtol=1e-9, atol=0)


# -- sampling ----------------------------------------------------------------

def test_sample_at_centre_and_midpoint():
    f = grid([[2.0, 6.0, 1.0], [0.0, 0.0, 0.0]])
    assert sample_field(f, (5, 5)) == 2.0
    assert sample_field(f, (15, 5)) == 6.0
    assert sample_field(f, (10, 5)) == 4.0


def test_sample_clamps_at_border():
    f = grid([[2.0, 6.0], [2.0, 6.0]])
    assert sample_field(f, (0, 0)) == 2.0
    assert sample_field(f, (20, 20)) == 6.0


def test_sample_out_of_bounds():
    f = grid([[1.0]])
    with pytest.raises(BoundsError):
        sample_field(f, (10.1, 5))
    with pytest.raises(BoundsError):
        sample_field_many(f, [1, -1], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 100), st.floats(0, 60), st.floats(0, 40))
def test_uniform_sample_everywhere(c, x, y):
    f = grid(np.full((4, 6), c))
    assert sample_field(f, (x, y)) == pytest.approx(c, rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(values_st, st.data())
def test_sample_lies_between_neighbours(v, data):
    f = grid(v)
    w, h = f.extent
    x = data.draw(st.floats(0, w))
    y = data.draw(st.floats(0, h))
    s = sample_field(f, (x, y))
    assert v.min() - 1e-9 <= s <= v.max() + 1e-9
    assert sample_field_many(f, [x], [y])[0] == s


# -- thumbnail ---------------------------------------------------------------

def test_thumbnail_small_grid_is_exact_quantisation():
    v = np.array([[0.0, 1.0], [2.0, 4.0]])
    t = field_thumbnail(v)
    assert (t["w"], t["h"], t["min"], t["max"]) == (2, 2, 0.0, 4.0)
    assert list(base64.b64decode(t["data"])) == [0, 64, 128, 255]


def test_thumbnail_downsamples_large_grid_by_area():
    v = np.arange(128 * 100, dtype=float).reshape(100, 128)
    t = field_thumbnail(v)
    assert (t["w"], t["h"]) == (64, 64)
    assert t["min"] >= v.min() and t["max"] <= v.max()
    assert len(base64.b64decode(t["data"])) == 64 * 64


def test_thumbnail_constant_is_zeros():
    t = field_thumbnail(np.full((3, 3), 7.0))
    assert set(base64.b64decode(t["data"])) == {0}


# -- tiles -------------------------------------------------------------------

def tiles(amplitude=0.0, mode="flip", seed=5):
    return TileLayer(make_pattern("checker", 8, 6), 128.0, ((20, 20, 20), (200, 200, 200)), amplitude, mode, seed)


def test_zero_amplitude_is_base_pattern():
    t = tiles(0.0)
    for k in (0, 1, 99):
        frame = make_tile_layer_frame(t, k)
        assert np.array_equal(displayed_labels(t, frame), t.pattern)
        assert np.array_equal(frame, np.array(t.base_colors, np.uint8)[t.pattern])


@pytest.mark.parametrize("mode", ["flip", "flicker"])
def test_tile_noise_deterministic(mode):
    a, b = tiles(0.4, mode), tiles(0.4, mode)
    assert np.array_equal(make_tile_layer_frame(a, 17), make_tile_layer_frame(b, 17))
    assert not np.array_equal(make_tile_layer_frame(a, 17), make_tile_layer_frame(a, 18))
    assert not np.array_equal(make_tile_layer_frame(a, 17), make_tile_layer_frame(tiles(0.4, mode, seed=6), 17))


def test_flip_with_probability_one_flips_every_tile():
    t = tiles(1.0)
    for k in range(3):
        assert np.array_equal(displayed_labels(t, make_tile_layer_frame(t, k)), 1 - t.pattern)


def test_flip_rate_matches_amplitude():
    t = TileLayer(make_pattern("checker", 64, 64), 1.0, noise_amplitude=0.2, noise_seed=1)
    flips = [np.mean(displayed_labels(t, make_tile_layer_frame(t, k)) != t.pattern) for k in range(20)]
    assert abs(np.mean(flips) - 0.2) < 0.01


def test_flicker_offsets_bounded():
    t = tiles(0.1, "flicker")
    base = np.array(t.base_colors, int)[t.pattern]
    for k in range(10):
        d = make_tile_layer_frame(t, k).astype(int) - base
        assert np.all(np.abs(d) <= round(0.1 * 255))
        assert np.all(d == d[..., :1])


def test_tile_validation():
    with pytest.raises(ValueError):
        tiles(1.5)
    with pytest.raises(ValueError):
        tiles(0.1, "wobble")
    with pytest.raises(ValueError):
        TileLayer(np.array([[2]]), 1.0)


def test_patterns():
    assert make_pattern("checker", 3, 2).tolist() == [[0, 1, 0], [1, 0, 1]]
    assert make_pattern("stripes", 3, 1).tolist() == [[0, 1, 0]]
    assert make_pattern("halves", 4, 1).tolist() == [[0, 0, 1, 1]]
    r = make_pattern("random", 40, 40, seed=3, fraction=0.25)
    assert np.array_equal(r, make_pattern("random", 40, 40, seed=3, fraction=0.25))
    assert abs(r.mean() - 0.25) < 0.05
    with pytest.raises(ValueError):
        make_pattern("spiral", 2, 2)


def test_tile_of_clamps():
    t = tiles()
    col, row = t.tile_of(np.array([0.0, 127.9, 128.0, 5000.0]), np.array([0.0, 0.0, 300.0, -1.0]))
    assert col.tolist() == [0, 0, 1, 7] and row.tolist() == [0, 0, 2, 0]


# -- objects -----------------------------------------------------------------

def test_object_round_trip_and_contains():
    d = {"id": "food", "shape": "disc", "center": [100, 50], "radius": 20, "effect": "deposit_source", "rate": 2}
    o = VirtualObject.from_dict(d)
    assert VirtualObject.from_dict(o.to_dict()) == o
    assert o.contains(110, 50) and not o.contains(130, 50)
    r = VirtualObject.from_dict({"id": "wall", "shape": "rect", "min": [0, 0], "max": [10, 5], "effect": "blocker"})
    assert r.center == (5.0, 2.5)
    assert r.contains(10, 5) and not r.contains(10.1, 5)


@pytest.mark.parametrize("bad", [
    {"id": "a", "shape": "disc", "center": [0, 0], "radius": 0},
    {"id": "a", "shape": "rect", "min": [0, 0], "max": [0, 5]},
    {"id": "a", "shape": "star"},
    {"id": "a", "shape": "disc", "center": [0, 0], "radius": 1, "rate": -1},
    {"id": "a", "shape": "disc", "center": [0, 0], "radius": 1, "effect": "explode"},
])
def test_object_validation(bad):
    with pytest.raises((ValueError, KeyError)):
        VirtualObject.from_dict(bad)


def test_blocked_mask_uses_cell_centres():
    wall = VirtualObject("w", "rect", (20, 0, 30, 100), effect="blocker")
    mask = blocked_mask([wall, VirtualObject("d", "disc", (0, 0, 5))], 5, 2, 10.0)
    assert mask.tolist() == [[False, False, True, False, False]] * 2
    assert blocked_mask([], 5, 2, 10.0) is None
