import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import disk_bits, disk_rgb
from dermabcd import imaging
from dermabcd.errors import SegmentationError
from dermabcd.imaging import PlanarImage
from dermabcd.segmentation import (SegmentationParams, check_invariants, data_cycle, evolve,
                                   evolve_detailed, grid_from_mask, init_ellipse, region_means,
                                   smoothing_cycle, with_params)

Y_ONLY = SegmentationParams(channel_weights=(1.0,), channels=("Y",))


def y_planes(arr):
    return PlanarImage({"Y": np.asarray(arr, dtype=float)})


def test_init_ellipse_area_matches_brute_force():
    g = init_ellipse(100, 100, 0.65)
    check_invariants(g)
    assert int(g.interior().sum()) == oracles.ellipse_count(100, 100, 0.65)
    assert abs(g.interior().sum() - math.pi * 32.5**2) < 2 * math.pi * 32.5


def test_init_ellipse_full_frame_stays_inside_grid():
    g = init_ellipse(100, 100, 1.0)
    check_invariants(g)
    pts = g.points("out")
    assert pts.min() >= 0 and pts[:, 0].max() < 100 and pts[:, 1].max() < 100


def test_init_ellipse_degenerate():
    with pytest.raises(SegmentationError):
        init_ellipse(10, 10, 0.1)
    with pytest.raises(ValueError):
        init_ellipse(10, 10, 0.0)


@given(st.integers(14, 60), st.integers(14, 60), st.floats(0.3, 1.0))
def test_init_ellipse_invariants(w, h, f):
    if f * min(w, h) / 2 < 2:
        with pytest.raises(SegmentationError):
            init_ellipse(w, h, f)
    else:
        check_invariants(init_ellipse(w, h, f))


@given(arrays(bool, (16, 19)))
def test_grid_from_any_mask_is_valid(bits):
    check_invariants(grid_from_mask(bits))


def test_region_means_exact_partition():
    g = grid_from_mask(disk_bits(30, 30, 14.5, 14.5, 8))
    plane = np.where(g.phi < 0, 0.0, 255.0)
    assert region_means(g, y_planes(plane), (1.0,), ("Y",)) == (0.0, 255.0)


def test_region_means_constant():
    g = init_ellipse(20, 20)
    assert region_means(g, y_planes(np.full((20, 20), 9.0)), (1.0,), ("Y",)) == (9.0, 9.0)


def test_region_means_match_double_loop():
    rng = np.random.default_rng(4)
    g = grid_from_mask(rng.random((8, 8)) < 0.6)
    planes = PlanarImage({c: rng.normal(size=(8, 8)) * 50 for c in "YUV"})
    u = (2 * planes["Y"] + 0.5 * planes["U"] + 1 * planes["V"]) / 3.5
    got = region_means(g, planes, (2.0, 0.5, 1.0))
    assert got == pytest.approx(oracles.region_means_loops(g.phi, u), abs=1e-12)


def test_region_means_collapsed():
    g = grid_from_mask(np.zeros((10, 10), bool))
    with pytest.raises(SegmentationError):
        region_means(g, y_planes(np.zeros((10, 10))), (1.0,), ("Y",))


def bright_disk(w=60, h=60, r=12):
    return np.where(disk_bits(w, h, (w - 1) / 2, (h - 1) / 2, r), 200.0, 30.0)


def test_data_cycle_shrinks_onto_contained_object():
    plane = bright_disk()
    g = init_ellipse(60, 60, 0.9)
    c1, c2 = region_means(g, y_planes(plane), (1.0,), ("Y",))
    # direct evaluation of the speed at the start: every list point sits on
    # background, where F_d < 0, so only outward (shrinking) switches can fire
    u_in = plane.ravel()[g.l_in]
    fd = 1 * (u_in - c2) ** 2 - 2 * (u_in - c1) ** 2
    assert np.all(fd < 0)
    g2, changed = data_cycle(g, y_planes(plane), with_params(Y_ONLY, n_a=1))
    check_invariants(g2)
    assert changed
    assert g2.interior().sum() < g.interior().sum()
    assert not np.any(g2.interior() & ~g.interior())


def test_data_cycle_area_monotone_per_pass():
    plane = bright_disk()
    g = init_ellipse(60, 60, 0.9)
    planes = y_planes(plane)
    p = with_params(Y_ONLY, n_a=1)
    areas = [g.interior().sum()]
    for _ in range(25):
        g, changed = data_cycle(g, planes, p)
        check_invariants(g)
        areas.append(g.interior().sum())
        if not changed:
            break
    assert all(b <= a for a, b in zip(areas, areas[1:]))
    assert areas[-1] < areas[0]


def test_data_cycle_grows_onto_larger_object():
    plane = np.where(disk_bits(60, 60, 29.5, 29.5, 24), 200.0, 30.0)
    g = init_ellipse(60, 60, 0.4)
    g2, changed = data_cycle(g, y_planes(plane), with_params(Y_ONLY, n_a=3))
    assert changed and g2.interior().sum() > g.interior().sum()


def test_data_cycle_constant_image_does_not_move():
    # c1 = c2 = u makes F_d exactly zero, so neither strict rule fires
    g = init_ellipse(30, 30)
    g2, changed = data_cycle(g, y_planes(np.full((30, 30), 77.0)), Y_ONLY)
    assert not changed
    assert np.array_equal(g2.phi, g.phi)


def test_data_cycle_fixed_point_at_step_edge():
    plane = np.zeros((30, 40))
    plane[:, 20:] = 200.0
    g = grid_from_mask(plane > 100)
    g2, changed = data_cycle(g, y_planes(plane), Y_ONLY)
    assert not changed
    assert np.array_equal(g2.phi, g.phi)


def half_plane(h=40, w=40, row=20):
    bits = np.zeros((h, w), bool)
    bits[row:, :] = True
    return bits


def test_smoothing_removes_spike():
    bits = half_plane()
    bits[19, 20] = True
    g = smoothing_cycle(grid_from_mask(bits), with_params(Y_ONLY, n_s=1))
    check_invariants(g)
    assert not g.interior()[19, 20]
    # hand check: the spike's 5x5 neighbourhood is mostly outside
    w = oracles.gaussian_weights(5, 1.0)
    window = bits[17:22, 18:23].astype(float)
    assert (w * window).sum() < 0.5


def test_smoothing_leaves_straight_edge():
    bits = half_plane()
    g0 = grid_from_mask(bits)
    g = smoothing_cycle(g0, with_params(Y_ONLY, n_s=2))
    check_invariants(g)
    # away from the locked frame the edge has no curvature and stays put
    assert np.array_equal(g.phi[:, 8:-8], g0.phi[:, 8:-8])


def test_smoothing_is_gentle_on_disk():
    g = grid_from_mask(disk_bits(60, 60, 29.5, 29.5, 20))
    p = with_params(Y_ONLY, n_s=1)
    for _ in range(5):
        a0 = g.interior().sum()
        g = smoothing_cycle(g, p)
        check_invariants(g)
        assert abs(g.interior().sum() - a0) < 0.02 * a0


@given(arrays(np.uint8, (20, 24)), st.integers(1, 4), st.integers(0, 3))
def test_cycles_preserve_invariants_on_noise(noise, n_a, n_s):
    planes = y_planes(noise.astype(float))
    g = init_ellipse(24, 20, 0.65)
    p = with_params(Y_ONLY, n_a=n_a, n_s=n_s)
    for _ in range(3):
        try:
            g, _ = data_cycle(g, planes, p)
        except SegmentationError:
            return
        check_invariants(g)
        g = smoothing_cycle(g, p)
        check_invariants(g)


def dark_disk_planes():
    img, bits = disk_rgb(200, 200, 50, inside=(40, 40, 40), outside=(200, 200, 200))
    return imaging.preprocess(img), bits


def test_evolve_dark_disk():
    planes, truth = dark_disk_planes()
    res = evolve_detailed(planes, Y_ONLY)
    mask = res.mask.bits
    assert abs(mask.sum() - math.pi * 50**2) <= 0.05 * math.pi * 50**2
    assert res.iterations_used < Y_ONLY.max_evolutions
    # threshold-at-midpoint oracle, then the 2 px band around the circle
    oracle = planes["Y"] < (40 + 200) / 2
    yy, xx = np.mgrid[0:200, 0:200]
    dist = np.hypot(xx - 99.5, yy - 99.5)
    assert np.all(np.abs(dist[mask ^ oracle] - 50) <= 2.0)
    assert np.all(np.abs(dist[mask ^ truth] - 50) <= 2.0)


def test_evolve_is_deterministic_and_respects_frame():
    planes, _ = dark_disk_planes()
    frames = []
    m1, it1 = evolve(planes, SegmentationParams(), lambda it, inside: frames.append(inside))
    m2, it2 = evolve(planes, SegmentationParams())
    assert it1 == it2 and np.array_equal(m1.bits, m2.bits)
    assert 0 < m1.area < m1.bits.size
    for inside in frames:
        assert not inside[:2].any() and not inside[-2:].any()
        assert not inside[:, :2].any() and not inside[:, -2:].any()


def test_evolve_respects_max_evolutions():
    planes, _ = dark_disk_planes()
    res = evolve_detailed(planes, with_params(Y_ONLY, n_a=1, n_s=1, max_evolutions=3))
    assert res.iterations_used <= 3 and not res.converged


def test_evolve_constant_image_fails():
    planes = imaging.preprocess(imaging.RgbImage(np.full((40, 40, 3), 120, np.uint8)))
    with pytest.raises(SegmentationError) as info:
        evolve(planes)
    assert info.value.iteration is not None


def test_evolve_keeps_largest_component():
    plane = np.full((80, 80), 200.0)
    plane[disk_bits(80, 80, 30, 40, 14)] = 30.0
    plane[disk_bits(80, 80, 62, 40, 4)] = 30.0
    mask, _ = evolve(y_planes(plane), Y_ONLY)
    from scipy import ndimage
    _, n = ndimage.label(mask.bits)
    assert n == 1 and mask.bits[40, 30] and not mask.bits[40, 62]


@pytest.mark.parametrize("kwargs", [
    {"lambda1": 0}, {"max_evolutions": 0}, {"channel_weights": (0.0, 0.0, 0.0)},
    {"init_fraction": 1.5}, {"smooth_kernel": (4, 1.0)}, {"channel_weights": (1.0, -1.0, 1.0)},
])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        SegmentationParams(**kwargs)
