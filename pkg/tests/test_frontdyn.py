from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbrw.frontdyn import (
    SlopeParams,
    Sigma_of,
    affine_step,
    canonicalize,
    char_poly_A0,
    delta_class,
    fixed_points,
    front_gap_chi,
    gamma_critical,
    in_T,
    inv_beta_is_integer,
    k_of,
    lower_edge,
    matrix_A0,
    matrix_A_minus1,
    matrix_Ai,
    perturbed_wave,
    phase_of,
    profile_from_vector,
    spectral_gap_A0,
    traveling_wave,
    vector_from_profile,
    wave_speed,
    wave_step,
)
from kbrw.logprofile import phi_distance, reproduce_profile, solve_sigma_star


@pytest.mark.parametrize("beta,k", [(0.3, 3), (0.5, 1), (1 / 3, 2), (0.25, 3), (0.7, 1), (1.2, 0), (1.0, 0)])
def test_k_of(beta, k):
    assert k_of(beta) == k


def test_inverse_integer_detection():
    assert inv_beta_is_integer(0.5) and inv_beta_is_integer(1 / 3)
    assert not inv_beta_is_integer(0.3)


def test_slope_set_finite_tail():
    p = SlopeParams(0.3, 0.75)
    assert p.K_cap == 7
    assert p.slope(0) == -1.0 and p.slope(3) == pytest.approx(-0.1)
    assert p.slope(7) == pytest.approx(1.05)
    assert p.slope_index(1.05) == 7 and p.slope_index(0.2) == 4
    assert p.slope_index(0.05) is None
    assert math.isinf(SlopeParams(0.3).K_cap)


def test_wave_luckiest_breakpoints():
    w = traveling_wave(0.4, 0.3)
    xs = w.G.breakpoints()
    expected = np.array([-15 / 8, -5 / 3, -4 / 3, -1.0, -2 / 3, -1 / 3, 0.0])
    assert np.allclose(xs, expected, atol=1e-12)
    assert np.allclose(w.G(xs) * 30, [0, 5, 10, 12, 11, 7, 0], atol=1e-10)
    assert w.phase == "luckiest" and w.nu == pytest.approx(1 / 3)


def test_wave_fittest_breakpoints():
    w = traveling_wave(0.6, 0.3)
    xs = w.G.breakpoints()
    assert np.allclose(xs, [-2.52, -2.12, -1.72, -1.32, -0.92, -0.52, -0.12, 0.0], atol=1e-12)
    assert w.chi == pytest.approx(0.12) and w.phase == "fittest"


def test_wave_finite_left_tail():
    w = traveling_wave(0.6, 0.3, 0.75)
    assert w.G.L == pytest.approx(-2.52, abs=1e-12)
    assert w.residual < 1e-9
    assert in_T(w.G, SlopeParams(0.3, 0.75), 0.6)


def test_first_step_from_fittest_wave():
    w = traveling_wave(0.6, 0.3)
    r = reproduce_profile(w.G, SlopeParams(0.3).tail, 0.6)
    assert r.argmax() == pytest.approx(-1.32, abs=1e-12)
    assert solve_sigma_star(r, 0.6, 0.3) == pytest.approx(0.28, abs=1e-11)


def test_wave_vectors_are_fixed_points():
    for gamma, beta in [(0.4, 0.3), (0.7, 0.3), (0.2, 0.45), (0.6, 0.45)]:
        p = SlopeParams(beta)
        w = traveling_wave(gamma, beta)
        v, U, _ = vector_from_profile(w.G, p, gamma)
        mu_L, mu_F = fixed_points(gamma, p)
        expected, cls = (mu_L, -1) if gamma < gamma_critical(beta) else (mu_F, 0)
        assert np.allclose(v, expected, atol=1e-12)
        assert delta_class(v, gamma, p) == cls
        v1, dU = affine_step(v, gamma, p)
        assert np.allclose(v1, v, atol=1e-12) and dU == pytest.approx(w.nu, abs=1e-12)


def test_sigma_at_luckiest_fixed_point():
    p = SlopeParams(0.3)
    mu_L, _ = fixed_points(0.4, p)
    assert Sigma_of(mu_L, 0.4, p) == pytest.approx(11 / 9, abs=1e-12)


def test_wave_step_matches_affine_shift():
    p = SlopeParams(0.3)
    w = traveling_wave(0.4, 0.3)
    sigma, g1 = wave_step(w.G, 0.4, p)
    v, U, _ = vector_from_profile(w.G, p, 0.4)
    assert sigma == pytest.approx(U + Sigma_of(v, 0.4, p), abs=1e-11)
    assert phi_distance(g1, w.G.shift(w.nu)) < 1e-9


@pytest.mark.parametrize("beta", [0.3, 0.45, 0.15, 0.22])
def test_companion_polynomial_matches_matrix(beta):
    p = SlopeParams(beta)
    eig = np.sort_complex(np.linalg.eigvals(matrix_A0(p)))
    roots = np.sort_complex(np.roots(char_poly_A0(p)))
    assert np.allclose(eig, roots, atol=1e-9)
    assert spectral_gap_A0(p) == pytest.approx(np.max(np.abs(eig)), abs=1e-12)


def test_matrices_shapes_and_rows():
    p = SlopeParams(0.3)
    assert np.allclose(matrix_A_minus1(p).sum(axis=1)[0], 1.0)
    assert matrix_Ai(1, p).shape == (3, 3)
    with pytest.raises(ValueError):
        matrix_Ai(3, p)


def test_phase_flips_at_critical_value():
    gc = gamma_critical(0.3)
    assert phase_of(gc - 1e-6, 0.3) == "luckiest"
    assert phase_of(gc + 1e-6, 0.3) == "fittest"
    assert wave_speed(gc - 1e-9, 0.3) == pytest.approx(wave_speed(gc + 1e-9, 0.3), abs=1e-7)
    assert front_gap_chi(gc, 0.3) == pytest.approx(0.0, abs=1e-12)
    assert front_gap_chi(gc + 0.1, 0.3) > 0


def test_critical_value_at_stability_raises():
    with pytest.raises(ValueError):
        traveling_wave(gamma_critical(0.3), 0.3, for_stability=True)


def test_perturbed_wave_stays_in_class():
    for gamma, beta in [(0.4, 0.3), (0.7, 0.3)]:
        w = traveling_wave(gamma, beta)
        g = perturbed_wave(w, 0.01)
        assert g.sup() == pytest.approx(gamma, abs=1e-12)
        assert in_T(g, SlopeParams(beta), gamma)
        assert 0 < phi_distance(g, w.G) < 0.05


@st.composite
def t_vectors(draw):
    beta = draw(st.sampled_from([0.3, 0.45, 0.7, 0.22]))
    c = draw(st.sampled_from([math.inf, 1.0, 0.5]))
    gamma = draw(st.floats(0.1, 0.9))
    p = SlopeParams(beta, c)
    k = p.k
    w = np.array(draw(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k)))
    v = w / (p.u @ w) * gamma * draw(st.floats(0.05, 0.95))
    ntail = (p.K_cap - k - 1) if p.finite else 6
    tail = draw(st.lists(st.floats(0.01, 1.0), min_size=int(ntail), max_size=int(ntail)))
    gaps = np.concatenate([[gamma - p.u @ v], v, tail])
    x = -np.concatenate([[0.0], np.cumsum(gaps)])
    return canonicalize(x, p), p, gamma


@settings(max_examples=80, deadline=None)
@given(t_vectors())
def test_vector_profile_roundtrip(data):
    x, p, gamma = data
    f = profile_from_vector(x, p)
    assert f.sup() == pytest.approx(gamma, abs=1e-12)
    assert f.L == pytest.approx(lower_edge(x, p), abs=1e-12)
    _, U, x2 = vector_from_profile(f, p, gamma)
    assert U == pytest.approx(x.entries[0], abs=1e-12)
    assert phi_distance(profile_from_vector(x2, p), f) < 1e-10
    assert in_T(f, p, gamma)


@settings(max_examples=80, deadline=None)
@given(t_vectors())
def test_closed_form_threshold(data):
    x, p, gamma = data
    f = profile_from_vector(x, p)
    v, U, _ = vector_from_profile(f, p, gamma)
    r = reproduce_profile(f, p.tail, gamma)
    assert U + Sigma_of(v, gamma, p) == pytest.approx(solve_sigma_star(r, gamma, p.beta), abs=1e-10)
