import math

import numpy as np
import pytest

from polarsep.decompose import (
    CanonicalPair,
    ResidualFields,
    SingularityError,
    canonical_baseline_separate,
    canonical_solve,
    combine_residuals,
    fresnel_inverse_separate,
    quantization_error_bound,
    singular_columns,
    sinusoid_coefficients,
)
from polarsep.imagecore import clip_quantize
from polarsep.optics import brewster, canonical_images, fresnel, malus_project, observe

Q = math.pi / 4


def forward(i_perp, i_par, phi_perp, angles):
    return [malus_project(i_perp, i_par, phi_perp, a) for a in angles]


def test_coefficients_match_brute_force_solve(rng):
    imgs = [rng.random((5, 6, 3)) for _ in range(3)]
    for angles in ([0.0, Q, 2 * Q], [0.4, 0.4 + Q, 0.4 + 2 * Q], [0.1, 0.9, 1.9]):
        mean, c1, c2 = sinusoid_coefficients(imgs, angles)
        m = np.array([[1.0, math.cos(2 * a), math.sin(2 * a)] for a in angles])
        for y, x, k in [(0, 0, 0), (4, 5, 1), (2, 3, 2)]:
            ref = np.linalg.solve(m, [im[y, x, k] for im in imgs])
            np.testing.assert_allclose([mean[y, x, k], c1[y, x, k], c2[y, x, k]], ref, atol=1e-13)


def test_least_squares_with_extra_observation(rng):
    i_perp, i_par = rng.random((4, 4, 1)) + 0.5, rng.random((4, 4, 1)) * 0.4
    angles = [0.1, 0.6, 1.3, 2.2]
    canon = canonical_solve(images=forward(i_perp, i_par, 0.3, angles), angles=angles)
    np.testing.assert_allclose(canon.i_perp, i_perp, atol=1e-12)
    np.testing.assert_allclose(canon.phi_perp, 0.3, atol=1e-12)


def test_degenerate_angles_rejected(rng):
    from polarsep.imagecore import ImageError

    imgs = [rng.random((2, 2, 1))] * 3
    with pytest.raises(ImageError):
        sinusoid_coefficients(imgs, [0.0, math.pi, 2 * math.pi])


def test_round_trip_with_noisy_angles(backend, rng):
    shape = (30, 30, 3)
    i_perp = rng.random(shape) * 0.5 + 0.5
    i_par = rng.random(shape) * 0.4
    phi = rng.uniform(-Q, Q, size=shape[:2])
    angles = [0.2 + i * Q + d for i, d in enumerate(rng.uniform(-0.07, 0.07, 3))]
    canon = canonical_solve(images=forward(i_perp, i_par, phi, angles), angles=angles)
    np.testing.assert_allclose(canon.i_perp, i_perp, atol=1e-10)
    np.testing.assert_allclose(canon.i_par, i_par, atol=1e-10)
    np.testing.assert_allclose(canon.phi_perp[..., 0], phi, atol=1e-9)


def test_unpolarized_pixel_flagged(backend):
    img = np.full((2, 2, 1), 0.3)
    canon = canonical_solve(images=[img] * 3, angles=[0.0, Q, 2 * Q])
    assert canon.undefined.all()
    assert np.all(canon.phi_perp == 0.0)
    np.testing.assert_allclose(canon.i_perp, 0.3)


def test_fresnel_inverse_recovers_layers(rng):
    R, T = rng.random((6, 20, 3)), rng.random((6, 20, 3))
    theta = np.linspace(0.2, 1.3, 20)
    canon = CanonicalPair(*canonical_images(R, T, theta), np.zeros((6, 20, 1)))
    r_hat, t_hat = fresnel_inverse_separate(canon, theta)
    np.testing.assert_allclose(r_hat, R, atol=1e-12)
    np.testing.assert_allclose(t_hat, T, atol=1e-12)


def test_brewster_decouples_reflection(rng):
    R, T = rng.random((4, 4, 1)), rng.random((4, 4, 1))
    i_perp, i_par = canonical_images(R, T, brewster())
    np.testing.assert_allclose(i_par, T / 2, atol=1e-12)
    _, t_other = canonical_images(R * 0.0, T, brewster())
    np.testing.assert_allclose(t_other, i_par, atol=1e-12)


def test_normal_incidence_is_singular(rng):
    canon = CanonicalPair(rng.random((3, 5, 1)), rng.random((3, 5, 1)), np.zeros((3, 5, 1)))
    theta = np.array([0.0, 0.5, 0.01, 0.8, 1.0])
    with pytest.raises(SingularityError) as info:
        fresnel_inverse_separate(canon, theta)
    assert info.value.columns == [0, 2]
    assert singular_columns(theta, 5).tolist() == [0, 2]
    r_hat, t_hat = fresnel_inverse_separate(canon, theta, allow_singular=True)
    assert np.all(r_hat[:, [0, 2]] == 0) and np.all(t_hat[:, [0, 2]] == 0)
    assert np.any(r_hat[:, 1] > 0) or np.any(t_hat[:, 1] > 0)


def test_baseline_values():
    canon = CanonicalPair(np.full((1, 2, 1), 0.4), np.full((1, 2, 1), 0.1), np.zeros((1, 2, 1)))
    r, t = canonical_baseline_separate(canon)
    np.testing.assert_allclose(r, 0.6)
    np.testing.assert_allclose(t, 0.2)


def test_residual_blend_endpoints(rng):
    shape = (5, 5, 3)
    canon = CanonicalPair(rng.random(shape), rng.random(shape), np.zeros((5, 5, 1)))
    rt, tt = rng.random(shape), rng.random(shape)
    r, t = combine_residuals(canon, ResidualFields(rt, tt, np.zeros((5, 5, 1)), np.ones((5, 5, 1))))
    assert np.array_equal(r, canon.i_perp) and np.array_equal(t, tt)


def test_residual_weights_clamped(rng):
    res = ResidualFields(rng.random((2, 2, 1)), rng.random((2, 2, 1)),
                         np.full((2, 2, 1), 1.5), np.full((2, 2, 1), -0.5))
    assert res.xi_perp.max() == 1.0 and res.xi_par.min() == 0.0


def test_quantization_error_within_bound():
    rng = np.random.default_rng(7)
    width = 24
    theta = np.linspace(0.4, 1.2, width)
    bound = quantization_error_bound(theta)
    for _ in range(20):
        R, T = rng.random((32, width, 1)), rng.random((32, width, 1))
        # stay clear of the +-pi/4 label swap
        phi_perp = rng.uniform(-Q + 0.3, Q - 0.3)
        phi0 = rng.uniform(0, math.pi)
        obs = [clip_quantize(observe(R, T, theta, phi_perp, phi0 + i * Q), 8) for i in range(3)]
        canon = canonical_solve(images=obs, angles=[phi0 + i * Q for i in range(3)])
        r_hat, t_hat = fresnel_inverse_separate(canon, theta)
        assert np.all(np.abs(r_hat - R).max(axis=(0, 2)) <= bound)
        assert np.all(np.abs(t_hat - T).max(axis=(0, 2)) <= bound)


def test_bound_grows_toward_singularity():
    b = quantization_error_bound(np.array([0.2, 0.6, 1.0]))
    assert b[0] > b[1] > b[2]
    rs, rp, _ = fresnel(0.6)
    assert b[1] == pytest.approx(2 * (1 + math.sqrt(5)) * (0.5 / 255) * (2 - rs - rp) / (rs - rp))
