import math

import numpy as np
import pytest

from subtiling import (CoverageError, GridPatch, LengthCapError, LengthVector,
                       Tiling1DWindow, TwoSidedWord, alpha_exponent, apply,
                       ball_weight_scan, btile_growth_scan,
                       count_B_tiles_1d, count_B_tiles_ball_2d, default_seed,
                       grid_patch, lemma_length_ratio, orbit_generate,
                       patch_text, prefix_radius, suspension_lengths,
                       tiling_length, window_from_sequence)

from conftest import rng


@pytest.fixture(scope="module")
def cantor_window(cantor):
    x = orbit_generate(cantor, (0, 1), 10)
    return x, suspension_lengths(cantor)


# ---- tile lengths ----

def test_suspension_lengths(cantor, cantor1001, subs):
    xi = suspension_lengths(cantor)
    assert xi.xi_len.tolist() == [1.0, 1.0] and xi.rho == 3.0
    xi2 = suspension_lengths(cantor1001)
    assert xi2.xi_len.tolist() == [1.0, 2.0] and xi2.rho == 3.0
    xi9 = suspension_lengths(subs["sigma2"])
    assert xi9.xi_len.tolist() == [1.0, 1.0] and xi9.rho == 9.0


def test_suspension_rejects_2d(carpet):
    with pytest.raises(ValueError, match="1-d"):
        suspension_lengths(carpet)


def test_tiling_length_basics(cantor1001):
    xi = suspension_lengths(cantor1001)
    assert tiling_length([], xi) == 0.0
    assert tiling_length([1, 0, 0, 1], xi) == 6.0
    assert tiling_length([1], xi) * 3 == tiling_length(apply(cantor1001, np.array([1])), xi)


def test_tiling_length_inflation_identity(subs):
    g = rng(11)
    for name in ("cantor", "cantor1001", "sigma_k2"):
        sub = subs[name]
        xi = suspension_lengths(sub)
        for _ in range(300):
            w = g.integers(0, sub.n_letters, size=g.integers(1, 40))
            lhs = tiling_length(apply(sub, w), xi)
            assert lhs == pytest.approx(xi.rho * tiling_length(w, xi), rel=1e-12)


def test_length_vector_validation():
    with pytest.raises(ValueError):
        LengthVector(np.array([1.0, 0.0]), 3.0)
    with pytest.raises(ValueError):
        tiling_length([0, 2], np.array([1.0, 1.0]))


# ---- 1-d windows ----

def test_window_central_tile(cantor, cantor1001):
    x = orbit_generate(cantor, (0, 1), 3)
    win = window_from_sequence(x, suspension_lengths(cantor))
    assert win.tile_support(0) == (-0.5, 0.5) and win.letter(0) == 1
    x2 = orbit_generate(cantor1001, (0, 1), 3)
    win2 = window_from_sequence(x2, suspension_lengths(cantor1001))
    assert win2.tile_support(0) == (-1.0, 1.0)
    assert win2.tile_support(1) == (1.0, 2.0) and win2.letter(1) == 0


def test_window_boundaries_monotone(cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi, lo=-100, hi=10_000)
    assert (np.diff(win.boundaries) > 0).all()
    assert win.lo == -100 and win.hi == 10_000
    assert win.boundaries[0] == pytest.approx(-100.5)


def test_window_matches_prefix_radius(cantor1001):
    x = orbit_generate(cantor1001, (0, 1), 8)
    xi = suspension_lengths(cantor1001)
    win = window_from_sequence(x, xi, lo=0, hi=2000)
    for k in rng(3).integers(0, 2000, size=50):
        assert win.tile_support(int(k))[1] == pytest.approx(
            prefix_radius(x, xi, int(k)), rel=1e-12)


def test_window_self_similarity(cantor1001):
    sub = cantor1001
    xi = suspension_lengths(sub)
    x = orbit_generate(sub, (0, 1), 6)
    w = x.slice(0, 40)
    sw = apply(sub, w)
    win = window_from_sequence(TwoSidedWord(np.empty(0, dtype=np.uint8), sw), xi)
    edges = np.concatenate([[0], np.cumsum(sub.rule_lengths[w])])
    spans = win.boundaries[edges[1:]] - win.boundaries[edges[:-1]]
    assert np.allclose(spans, xi.rho * xi.xi_len[w], rtol=1e-12)


def test_window_validation():
    with pytest.raises(ValueError, match="one more"):
        Tiling1DWindow(np.array([0, 1]), 0, np.array([0.0, 1.0]))
    with pytest.raises(ValueError, match="contain the index-0"):
        Tiling1DWindow(np.array([0, 1]), 1, np.array([0.5, 1.0, 2.0]))
    with pytest.raises(ValueError, match="increasing"):
        Tiling1DWindow(np.array([0, 1]), 0, np.array([-0.5, -0.5, 1.0]))
    with pytest.raises(ValueError, match="origin"):
        Tiling1DWindow(np.array([0, 1]), 0, np.array([0.5, 1.5, 2.5]))


# ---- B-tile counting on the line ----

def test_count_decades(cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi)
    for n in range(1, 9):
        assert count_B_tiles_1d(win, 3.0 ** n, [1]) == 2 ** n - 1


def test_count_small_t(cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi, lo=-2, hi=30)
    assert count_B_tiles_1d(win, 0.0, [1]) == 0
    assert count_B_tiles_1d(win, 1.4, [1]) == 0
    assert count_B_tiles_1d(win, 2.5, [1]) == 1


def test_count_brute_force(cantor1001):
    x = orbit_generate(cantor1001, (0, 1), 6)
    xi = suspension_lengths(cantor1001)
    win = window_from_sequence(x, xi, lo=-20, hi=500)
    g = rng(7)
    for _ in range(100):
        t = float(g.uniform(0.0, win.boundaries[-1]))
        want = 0
        for i in range(win.lo, win.hi + 1):
            a, b = win.tile_support(i)
            want += int(win.letter(i) == 1 and a >= 0.0 and b <= t)
        assert count_B_tiles_1d(win, t, [1]) == want


def test_count_monotone_in_t(cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi)
    ts = np.sort(rng(13).uniform(0.0, 6000.0, size=60))
    counts = [count_B_tiles_1d(win, float(t), [1]) for t in ts]
    assert (np.diff(counts) >= 0).all()


def test_count_coverage_error(cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi)
    with pytest.raises(CoverageError, match="window covers"):
        count_B_tiles_1d(win, float(win.boundaries[-1]) + 1.0, [1])


def test_count_rejects_bad_args(cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi, lo=-5, hi=5)
    with pytest.raises(ValueError):
        count_B_tiles_1d(win, -1.0, [1])
    with pytest.raises(ValueError):
        count_B_tiles_1d(win, 1.0, [])


# ---- growth scans ----

def test_growth_scan_closed_form(cantor, cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi)
    alpha = alpha_exponent(cantor)
    t = np.array([3.0 ** k for k in range(1, 10)])
    scan = btile_growth_scan(win, alpha, t, [1])
    want = 1.0 - 2.0 ** -np.arange(1, 10)
    assert np.allclose(scan.ratios, want, rtol=1e-12)
    assert scan.k_hat == pytest.approx(1.0 - 2.0 ** -9, rel=1e-12)
    assert (np.diff(scan.running_max) >= 0).all()


def test_growth_scan_denser_grid(cantor, cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi)
    alpha = alpha_exponent(cantor)
    coarse = np.array([3.0 ** k for k in range(1, 10)])
    fine = np.unique(np.concatenate([coarse, np.geomspace(3.0, 3.0 ** 9, 400)]))
    k_c = btile_growth_scan(win, alpha, coarse, [1]).k_hat
    k_f = btile_growth_scan(win, alpha, fine, [1]).k_hat
    assert k_c <= k_f <= k_c + 0.01


def test_growth_scan_all_A_window(cantor):
    x = orbit_generate(cantor, (0, 0), 6)
    win = window_from_sequence(x, suspension_lengths(cantor))
    scan = btile_growth_scan(win, alpha_exponent(cantor), [3.0, 9.0, 27.0], [1])
    assert scan.counts.tolist() == [0, 0, 0]
    assert scan.k_hat == 0.0


def test_growth_scan_csv(cantor, cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi)
    scan = btile_growth_scan(win, alpha_exponent(cantor), [3.0, 9.0], [1])
    lines = scan.csv().splitlines()
    assert lines[0] == "t,count,ratio,running_max"
    assert lines[1] == "3.0,1,0.5,0.5"


def test_growth_scan_rejects_bad_grid(cantor, cantor_window):
    x, xi = cantor_window
    win = window_from_sequence(x, xi)
    a = alpha_exponent(cantor)
    with pytest.raises(ValueError):
        btile_growth_scan(win, a, [9.0, 3.0], [1])
    with pytest.raises(CoverageError):
        btile_growth_scan(win, a, [3.0 ** 12], [1])


# ---- tile-vs-letter length ratio ----

def test_length_ratio_unit_lengths(cantor):
    x = orbit_generate(cantor, (0, 1), 8)
    r = lemma_length_ratio(x, suspension_lengths(cantor), [1, 10, 100, 6000])
    assert (r == 1.0).all()


def test_length_ratio_1001(cantor1001):
    x = orbit_generate(cantor1001, (0, 1), 12)
    xi = suspension_lengths(cantor1001)
    grid = np.array([3 ** k for k in range(1, 13)])
    r = lemma_length_ratio(x, xi, grid)
    assert (np.diff(r[2:]) < 0).all()
    assert r[-1] == pytest.approx(1.0038517916382064, rel=1e-9)
    assert abs(r[-1] - 1.0) < 0.005
    assert lemma_length_ratio(x, xi, [1])[0] == xi[int(x.right[1])]


# ---- 2-d grid patches ----

def test_default_seed(carpet):
    seed = default_seed(carpet)
    assert seed.labels.tolist() == [[1, 1], [1, 1]]
    assert (seed.x_lo, seed.y_top, seed.level, seed.q) == (-1, 1, 0, 3)
    assert seed.covered_radius == 1.0
    assert seed.origin_cell == (0, 0)
    assert seed.cell_center(0, 0) == (-0.5, 0.5)


def test_default_seed_rejects(cantor, carpet):
    with pytest.raises(ValueError, match="2-d"):
        default_seed(cantor)
    with pytest.raises(ValueError, match="alphabet"):
        default_seed(carpet, 7)


def test_grid_patch_one_step(carpet):
    p = grid_patch(carpet, default_seed(carpet), 1)
    assert p.labels.shape == (6, 6)
    assert (p.x_lo, p.y_top, p.level) == (-3, 3, 1)
    assert np.argwhere(p.labels == 0).tolist() == [[1, 1], [1, 4], [4, 1], [4, 4]]


def test_grid_patch_ones_count(carpet):
    seed = default_seed(carpet)
    for n in range(5):
        p = grid_patch(carpet, seed, n)
        assert int((p.labels == 1).sum()) == 4 * 8 ** n


def test_grid_patch_composes(carpet):
    seed = default_seed(carpet)
    twice = grid_patch(carpet, grid_patch(carpet, seed, 1), 1)
    once = grid_patch(carpet, seed, 2)
    assert np.array_equal(twice.labels, once.labels)
    assert (twice.x_lo, twice.y_top, twice.level) == (once.x_lo, once.y_top, once.level)


def test_grid_patch_side_cap(carpet):
    with pytest.raises(LengthCapError, match="level 3"):
        grid_patch(carpet, default_seed(carpet), 3, side_cap=50)


def test_grid_patch_zero_steps(carpet):
    seed = default_seed(carpet)
    p = grid_patch(carpet, seed, 0)
    assert np.array_equal(p.labels, seed.labels) and p.level == 0


# ---- B-tile counting in balls ----

def test_ball_count_corner_radii(carpet):
    p = grid_patch(carpet, default_seed(carpet), 2)
    assert count_B_tiles_ball_2d(p, 0.49, [1]) == 0
    assert count_B_tiles_ball_2d(p, 1.41, [1]) == 0
    assert count_B_tiles_ball_2d(p, math.sqrt(2.0), [1]) == 4


def test_ball_count_solid_patch():
    m = 40
    p = GridPatch(np.ones((2 * m, 2 * m), dtype=np.uint8), x_lo=-m, y_top=m)
    for R in (5.0, 12.0, 30.0):
        n = count_B_tiles_ball_2d(p, R, [1])
        assert math.pi * (R - 2.0) ** 2 <= n <= math.pi * R ** 2


def test_ball_count_growth_rate(carpet):
    p = grid_patch(carpet, default_seed(carpet), 6)
    for R in (27.0, 81.0, 243.0):
        ratio = count_B_tiles_ball_2d(p, 3 * R, [1]) / count_B_tiles_ball_2d(p, R, [1])
        assert abs(ratio - 8.0) <= 0.8


def test_ball_count_coverage_error(carpet):
    p = grid_patch(carpet, default_seed(carpet), 2)
    with pytest.raises(CoverageError, match="inflate to level 4"):
        count_B_tiles_ball_2d(p, 30.0, [1])


def test_ball_weight_scan_matches_counts(carpet):
    p = grid_patch(carpet, default_seed(carpet), 2)
    radii = np.sort(rng(5).uniform(0.0, 9.0, size=50))
    scanned = ball_weight_scan(p, radii, np.array([0.0, 1.0]))
    direct = np.array([count_B_tiles_ball_2d(p, float(r), [1]) for r in radii])
    assert np.array_equal(scanned, direct.astype(float))


def test_ball_weight_scan_general_weights(carpet):
    p = grid_patch(carpet, default_seed(carpet), 2)
    radii = np.array([1.0, 4.0, 9.0])
    both = ball_weight_scan(p, radii, np.array([0.5, 2.0]))
    zeros_only = ball_weight_scan(p, radii, np.array([1.0, 0.0]))
    ones_only = ball_weight_scan(p, radii, np.array([0.0, 1.0]))
    assert np.allclose(both, 0.5 * zeros_only + 2.0 * ones_only, rtol=1e-12)


def test_patch_text(carpet):
    txt = patch_text(grid_patch(carpet, default_seed(carpet), 1))
    lines = txt.splitlines()
    assert lines[0] == "6 6 level=1 x_lo=-3 y_top=3"
    assert lines[1] == "111111" and lines[2] == "101101"
    assert len(lines) == 7
