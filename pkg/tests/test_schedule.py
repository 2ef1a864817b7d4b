import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmapdiff.core import DimensionError, ParameterError
from bmapdiff.schedule import (
    BMapSpec,
    Cone,
    alpha_schedule,
    build_bmap,
    build_bmap_stack,
    gamma_trajectory,
    per_pixel_snr,
)


def cosine_f(t, T, s=0.008):
    return math.cos((t / T + s) / (1 + s) * math.pi / 2) ** 2


def test_cosine_2000_valid():
    sched = alpha_schedule("cosine", 2000)
    assert sched.alpha_bar.shape == (2001,)
    assert sched.alpha_bar[0] == 1.0
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert np.all((sched.beta[1:] > 0) & (sched.beta[1:] <= 0.999))


def test_linear_single_step():
    sched = alpha_schedule("linear", 1)
    assert sched.beta[1] == 1e-4
    assert sched.alpha_bar[1] == pytest.approx(0.9999, abs=1e-15)


def test_cosine_100_terminal():
    sched = alpha_schedule("cosine", 100)
    oracle = cosine_f(100, 100) / cosine_f(0, 100)
    assert oracle < 1e-3
    assert sched.alpha_bar[100] < 1e-3


def test_cosine_matches_curve_before_clamp():
    T = 100
    sched = alpha_schedule("cosine", T)
    for t in (1, 10, 50, 90):
        assert sched.alpha_bar[t] == pytest.approx(cosine_f(t, T) / cosine_f(0, T), rel=1e-12)


def test_schedule_tables_are_readonly():
    sched = alpha_schedule("cosine", 10)
    with pytest.raises(ValueError):
        sched.alpha_bar[1] = 0.5


def test_schedule_errors():
    with pytest.raises(DimensionError):
        alpha_schedule("cosine", 0)
    with pytest.raises(ParameterError):
        alpha_schedule("quadratic", 10)


def test_gamma_examples():
    assert gamma_trajectory("square-root", 2000, 0.04)[-1] == pytest.approx(0.96, abs=1e-15)
    for kind in ("square-root", "linear"):
        assert gamma_trajectory(kind, 10, 0.3)[0] == 1.0
    assert gamma_trajectory("square-root", 100, 0.04)[25] == pytest.approx(0.98, abs=1e-15)
    assert gamma_trajectory("linear", 100, 0.04)[25] == pytest.approx(0.99, abs=1e-15)


@pytest.mark.parametrize("eps_b", [0.0, 1.0, -0.1, 1.5])
def test_gamma_rejects_eps_b(eps_b):
    with pytest.raises(ParameterError):
        gamma_trajectory("square-root", 10, eps_b)


def test_build_bmap_examples():
    np.testing.assert_array_equal(build_bmap(1.0, BMapSpec(4, 3, 0.04)), np.ones((4, 3)))
    b = build_bmap(0.96, BMapSpec(5, 2, 0.04))
    np.testing.assert_allclose(b[:, 0], [1, 0.99, 0.98, 0.97, 0.96], atol=1e-15)
    b = build_bmap(0.97, BMapSpec(8, 8, 0.03))
    assert b.min() == pytest.approx(0.97) and b.max() == 1.0


def test_build_bmap_range_check():
    spec = BMapSpec(4, 4, 0.04)
    for g in (1.01, 0.95):
        with pytest.raises(ParameterError):
            build_bmap(g, spec)


def test_outside_cone_modes():
    cone = Cone(-4.0, 7.5, 25.0)
    inside = cone.mask(16, 16)
    assert inside.any() and not inside.all()
    row = build_bmap(0.9, BMapSpec(16, 16, 0.1, outside_cone_mode="row-value", cone=cone))
    full = build_bmap(0.9, BMapSpec(16, 16, 0.1))
    np.testing.assert_array_equal(row, full)
    g = build_bmap(0.9, BMapSpec(16, 16, 0.1, cone=cone))
    assert np.all(g[~inside] == 0.9)
    np.testing.assert_array_equal(g[inside], full[inside])
    one = build_bmap(0.9, BMapSpec(16, 16, 0.1, cone=cone, outside_cone_mode="one"))
    assert np.all(one[~inside] == 1.0)


def test_cone_must_touch_grid():
    with pytest.raises(ParameterError):
        BMapSpec(8, 8, 0.1, cone=Cone(-4.0, 100.0, 5.0))


def test_stack_reduction_limit():
    sched = alpha_schedule("cosine", 50)
    stack = build_bmap_stack(sched, BMapSpec(8, 8, 1e-12))
    assert np.abs(stack.B_bar[-1] - 1.0).max() < 1e-8
    assert np.abs(stack.signal_coeff - sched.alpha_bar[:, None, None]).max() < 1e-8


def test_stack_three_step_product():
    stack = build_bmap_stack(alpha_schedule("cosine", 3), BMapSpec(2, 2, 0.3))
    oracle = math.prod(1 - 0.3 * math.sqrt(t / 3) for t in (1, 2, 3))
    np.testing.assert_allclose(stack.B_bar[3, 1], oracle, rtol=1e-14)
    np.testing.assert_array_equal(stack.B_bar[:, 0], 1.0)


def test_top_row_with_cone():
    cone = Cone(-2.0, 7.5, 40.0)
    stack = build_bmap_stack(alpha_schedule("cosine", 10), BMapSpec(16, 16, 0.2, cone=cone))
    top = stack.mask[0]
    assert top.any()
    assert np.all(stack.B_bar[:, 0, top] == 1.0)


def test_snr_examples(default_stack):
    _, stack = default_stack
    for t in (1, 50, 200):
        snr = per_pixel_snr(stack, t)
        assert np.all(np.isfinite(snr)) and np.all(snr > 0)
        assert np.all(snr[0] >= snr[-1])
        assert np.all(np.diff(snr[:, 0]) <= 0)
    flat = build_bmap_stack(alpha_schedule("cosine", 10), BMapSpec(1, 4, 0.5))
    assert np.ptp(per_pixel_snr(flat, 5)) == 0.0


def test_snr_strictly_decreasing_in_t(default_stack):
    _, stack = default_stack
    snr = np.stack([per_pixel_snr(stack, t) for t in range(1, stack.T + 1)])
    assert np.all(np.diff(snr, axis=0) < 0)


def test_snr_index_error(default_stack):
    _, stack = default_stack
    for t in (0, 201):
        with pytest.raises(IndexError):
            per_pixel_snr(stack, t)


@settings(max_examples=40, deadline=None)
@given(
    T=st.integers(1, 120),
    eps_b=st.floats(1e-6, 0.5),
    h=st.integers(1, 12),
    kind=st.sampled_from(["square-root", "linear"]),
    alpha=st.sampled_from(["cosine", "linear"]),
)
def test_stack_invariants(T, eps_b, h, kind, alpha):
    sched = alpha_schedule(alpha, T)
    stack = build_bmap_stack(sched, BMapSpec(h, 3, eps_b, gamma_kind=kind))
    c = stack.signal_coeff[1:]
    assert np.all((c > 0) & (c < 1))
    assert np.all(np.diff(stack.signal_coeff, axis=0) < 0)
    assert np.all(np.diff(stack.B_bar, axis=1) <= 0)
    g = stack.gamma
    assert g[0] == 1.0 and g[-1] == pytest.approx(1 - eps_b) and np.all(np.diff(g) <= 0)
