import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mairkit.scan import (Permutation, ScanSpec, Strategy, apply_scan, build_permutation,
                          continuity_score, four_directions, inverse_scan, locality_box_width,
                          locality_profile, render_svg, shifted_stripe_bounds, stripe_ranges,
                          stripe_widths)
from mairkit.tensor import Tensor

NSS = Strategy.NSS


def perm(strategy, h, w, ws=4, shifted=False, d=0):
    return build_permutation(ScanSpec(strategy, ws, shifted, d), h, w)


def stripe_of(cols, ranges):
    return np.searchsorted([b for _, b in ranges], cols, side="right")


# --- examples ---------------------------------------------------------------

def test_nss_2x2():
    assert perm(NSS, 2, 2, 2).order.tolist() == [0, 1, 3, 2]


def test_nss_4x4_hand_trace():
    assert perm(NSS, 4, 4, 2).order.tolist() == [0, 1, 5, 4, 8, 9, 13, 12,
                                                  14, 15, 11, 10, 6, 7, 3, 2]


def test_z_4x4_is_row_major():
    assert perm(Strategy.Z, 4, 4).order.tolist() == list(range(16))


def test_s_scan_rows_alternate():
    assert perm(Strategy.S, 2, 3).order.tolist() == [0, 1, 2, 5, 4, 3]


def test_local_window_z_within_windows():
    assert perm(Strategy.LOCAL_WINDOW, 4, 4, 2).order.tolist() == [0, 1, 4, 5, 2, 3, 6, 7,
                                                                   8, 9, 12, 13, 10, 11, 14, 15]


def test_nss_stripe_wider_than_grid_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        perm(NSS, 4, 3, 4)


def test_shift_on_non_nss_rejected():
    with pytest.raises(ValueError):
        ScanSpec(Strategy.Z, 4, True)


# --- shifted stripes --------------------------------------------------------

def test_shifted_bounds_examples():
    assert shifted_stripe_bounds(8, 4) == [2, 4, 2]
    assert shifted_stripe_bounds(4, 4) == [2, 2]


def test_shifted_bounds_fallback_warns():
    with pytest.warns(UserWarning):
        assert shifted_stripe_bounds(3, 4) == [3]


def test_shifted_bounds_odd_rejected():
    with pytest.raises(ValueError, match="even"):
        shifted_stripe_bounds(8, 3)


@given(st.integers(1, 64), st.sampled_from([2, 4, 6, 8]))
def test_shifted_widths_sum_to_width(W, ws):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        widths = shifted_stripe_bounds(W, ws)
    assert sum(widths) == W
    assert all(1 <= w <= ws for w in widths)
    if W >= ws:
        assert widths[0] == ws // 2
        assert all(w == ws for w in widths[1:-1])


@pytest.mark.parametrize("W", [8, 12, 16, 10, 30])
def test_shift_covers_every_unshifted_boundary(W):
    ws = 4
    plain = [b for _, b in stripe_ranges(W, ws)][:-1]
    shifted = stripe_ranges(W, ws, shifted=True)
    for boundary in plain:
        assert any(a < boundary < b for a, b in shifted), boundary


# --- invariants on the test grid ---------------------------------------------

GRID = [(h, w) for h in range(1, 10) for w in range(1, 10)]


def all_specs(h, w):
    for s in Strategy:
        for ws in (1, 2, 4):
            shifts = [False, True] if s is NSS and ws % 2 == 0 else [False]
            for shifted in shifts:
                if s is NSS and not shifted and ws > w:
                    continue
                yield ScanSpec(s, ws, shifted)


def test_bijective_everywhere():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for h, w in GRID:
            for spec in all_specs(h, w):
                for p in four_directions(spec, h, w):
                    assert p.is_bijection(), (spec, h, w)


def nss_cases():
    for h, w in GRID:
        for ws in (1, 2, 4):
            for shifted in ([False, True] if ws % 2 == 0 else [False]):
                if not shifted and ws > w:
                    continue
                yield h, w, ws, shifted


def test_nss_within_stripe_adjacency_and_jump_bound():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for h, w, ws, shifted in nss_cases():
            ranges = stripe_ranges(w, ws, shifted) if (not shifted or w >= ws) else [(0, w)]
            for p in four_directions(ScanSpec(NSS, ws, shifted), h, w):
                r, c = p.rows_cols()
                # mirrored directions see mirrored stripes
                cc = c if p.spec.direction < 2 else w - 1 - c
                s = stripe_of(cc, ranges)
                dist = np.abs(np.diff(r)) + np.abs(np.diff(c))
                same = s[1:] == s[:-1]
                assert np.all(dist[same] == 1), (h, w, ws, shifted)
                assert np.all(dist[~same] <= ws), (h, w, ws, shifted)


def nss_jumps(h, w, ws):
    # even row count: each stripe exits on its entry side, so leaving a stripe
    # wider than one column costs a jump; odd row count: exits next to the neighbor
    if h % 2:
        return 0
    return sum(1 for width in stripe_widths(w, ws)[:-1] if width > 1)


def test_nss_continuity_closed_form():
    for h, w in GRID:
        for ws in (1, 2, 4):
            if ws <= w and h * w >= 2:
                expected = 1 - nss_jumps(h, w, ws) / (h * w - 1)
                assert continuity_score(perm(NSS, h, w, ws)) == pytest.approx(expected, abs=1e-15)


def test_continuity_nss_at_least_z():
    # Z pays H-1 row wraps; NSS pays at most one jump per stripe transition
    for h, w in GRID:
        if h < 2 or w < 2:
            continue
        z = continuity_score(perm(Strategy.Z, h, w))
        for ws in (1, 2, 4):
            if ws <= w and nss_jumps(h, w, ws) <= h - 1:
                assert continuity_score(perm(NSS, h, w, ws)) >= z


def test_continuity_wide_flat_grid_favors_z():
    # two rows, four stripes: three stripe jumps against one row wrap
    assert continuity_score(perm(NSS, 2, 8, 2)) == pytest.approx(12 / 15)
    assert continuity_score(perm(Strategy.Z, 2, 8)) == pytest.approx(14 / 15)


def test_s_scan_full_continuity():
    for h, w in GRID:
        if h * w >= 2:
            assert continuity_score(perm(Strategy.S, h, w)) == 1.0


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32, 64])
def test_hilbert_power_of_two_continuity(n):
    assert continuity_score(perm(Strategy.HILBERT, n, n)) == 1.0


def test_continuity_examples():
    assert continuity_score(perm(Strategy.Z, 4, 4)) == 0.8
    assert continuity_score(perm(NSS, 4, 4, 2)) == pytest.approx(14 / 15)


# --- directions -------------------------------------------------------------

def test_direction_relations():
    spec = ScanSpec(NSS, 2)
    d0, d1, d2, d3 = four_directions(spec, 4, 4)
    np.testing.assert_array_equal(d1.order, d0.order[::-1])
    np.testing.assert_array_equal(d3.order, d2.order[::-1])
    r, c = d0.rows_cols()
    np.testing.assert_array_equal(d2.order, r * 4 + (3 - c))


def test_one_by_one_directions_equal():
    assert all(p.order.tolist() == [0] for p in four_directions(ScanSpec(NSS, 1), 1, 1))


def test_direction_corners():
    d0, d1, d2, d3 = four_directions(ScanSpec(NSS, 2), 6, 6)
    assert d0.order[0] == 0                     # top-left start
    assert d2.order[0] == 5                     # top-right start


# --- apply / inverse --------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.sampled_from(list(Strategy)), st.integers(0, 3))
def test_round_trip_bit_identical(h, w, strategy, d):
    ws = min(2, w)
    p = build_permutation(ScanSpec(strategy, ws, False, d), h, w)
    f = np.random.default_rng(h * 10 + w).standard_normal((3, h, w))
    seq = apply_scan(Tensor(f), p)
    assert seq.shape == (3, h * w)
    np.testing.assert_array_equal(inverse_scan(seq, p).data, f)


def test_identity_permutation_is_row_major_flatten():
    f = np.arange(12.0).reshape(1, 3, 4)
    np.testing.assert_array_equal(apply_scan(Tensor(f), perm(Strategy.Z, 3, 4)).data,
                                  f.reshape(1, 12))


def test_constant_feature_gives_constant_sequence():
    f = np.full((2, 4, 4), 7.0)
    assert np.all(apply_scan(Tensor(f), perm(NSS, 4, 4, 2)).data == 7.0)


def test_apply_scan_size_mismatch():
    with pytest.raises(ValueError):
        apply_scan(Tensor(np.zeros((1, 3, 3))), perm(NSS, 4, 4, 2))
    with pytest.raises(ValueError):
        inverse_scan(Tensor(np.zeros((1, 9))), perm(NSS, 4, 4, 2))


# --- locality ---------------------------------------------------------------

def brute_locality(p, n):
    r, c = p.rows_cols()
    return max((np.ptp(r[t:t + n]) + 1) * (np.ptp(c[t:t + n]) + 1) for t in range(len(p) - n + 1))


def test_locality_n1_is_one():
    assert locality_profile(perm(Strategy.HILBERT, 5, 7), 1) == 1


def test_locality_matches_brute_force():
    for strategy in Strategy:
        p = perm(strategy, 6, 8, 2)
        for n in (2, 3, 5, 8, 13):
            assert locality_profile(p, n) == brute_locality(p, n)


def test_locality_examples_8x8():
    z = perm(Strategy.Z, 8, 8)
    assert brute_locality_at(z, 0, 8) == 8            # one full row
    assert locality_profile(z, 8) == brute_locality(z, 8) == 16   # row-wrapping window
    nss = perm(NSS, 8, 8, 2)
    # worst-case width: NSS 4 (across a stripe jump) < Z 8 (across a row wrap)
    assert locality_box_width(nss, 4) == 4
    assert locality_box_width(z, 4) == 8
    assert locality_box_width(nss, 4) < locality_box_width(z, 4)
    # typical window: most NSS windows are 2 wide, aligned Z windows 4 wide
    widths = [np.ptp(nss.rows_cols()[1][t:t + 4]) + 1 for t in range(61)]
    assert np.median(widths) == 2
    assert np.ptp(z.rows_cols()[1][0:4]) + 1 == 4
    # inside one stripe: row-aligned windows cover 4 rows × 2 columns, offset ones 5 × 2
    r, c = nss.rows_cols()
    inside = [t for t in range(len(nss) - 7) if len(set(c[t:t + 8] // 2)) == 1]
    assert brute_locality_at(nss, 0, 8) == 8
    assert max(brute_locality_at(nss, t, 8) for t in inside) == 10
    # a window straddling a stripe jump reaches 4 rows × 4 columns
    assert locality_profile(nss, 8) == brute_locality(nss, 8) == 16


def brute_locality_at(p, t, n):
    r, c = p.rows_cols()
    return (np.ptp(r[t:t + n]) + 1) * (np.ptp(c[t:t + n]) + 1)


def test_nss_more_local_than_s():
    # holds when no stripe jump occurs (odd rows) and no narrow remainder stripe exists
    for h in (1, 3, 5, 7, 9, 11):
        for w in range(3, 25):
            for ws in (1, 2, 4, 8):
                if w > 2 * ws and w % ws == 0:
                    n = 2 * ws
                    assert locality_profile(perm(NSS, h, w, ws), n) <= \
                        locality_profile(perm(Strategy.S, h, w), n), (h, w, ws)


def test_stripe_jump_window_exceeds_s_scan():
    # even rows: a 2·w_s window across a jump spans 2 rows × 2·w_s columns
    assert locality_profile(perm(NSS, 8, 8, 2), 4) == 8
    assert locality_profile(perm(Strategy.S, 8, 8), 4) == 6


def test_locality_window_bounds():
    with pytest.raises(ValueError):
        locality_profile(perm(Strategy.Z, 2, 2), 5)


# --- export -----------------------------------------------------------------

def test_json_round_trip():
    p = perm(NSS, 5, 6, 2, True, 3)
    d = json.loads(p.to_json())
    assert set(d) == {"h", "w", "spec", "order"}
    q = Permutation.from_json(p.to_json())
    np.testing.assert_array_equal(q.order, p.order)
    assert q.spec == p.spec and (q.h, q.w) == (5, 6)


def test_svg_has_one_polyline_per_direction_and_dashed_stripes():
    svg = render_svg(four_directions(ScanSpec(NSS, 2), 4, 6))
    assert svg.count("<polyline") == 4
    assert svg.count("stroke-dasharray") == 2   # boundaries at columns 2 and 4


def test_permutations_are_cached_and_immutable():
    p = perm(NSS, 7, 7, 2)
    assert p is perm(NSS, 7, 7, 2)
    with pytest.raises(ValueError):
        p.order[0] = 3
