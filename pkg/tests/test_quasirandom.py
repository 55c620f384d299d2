import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import qmc

from bayesqp.quasirandom import SobolStream, ball_samples, direction_numbers, sobol


@pytest.mark.parametrize("dim", [1, 2, 5, 17, 64])
def test_matches_scipy_unscrambled(dim):
    ref = qmc.Sobol(dim, scramble=False).random(256)
    np.testing.assert_array_equal(sobol(dim, 256), ref)


def test_one_dimensional_prefix():
    np.testing.assert_array_equal(sobol(1, 8)[:, 0], [0, 0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125])


def test_second_coordinate_prefix():
    np.testing.assert_array_equal(sobol(2, 4)[:, 1], [0, 0.5, 0.25, 0.75])


def test_skip_is_a_suffix():
    np.testing.assert_array_equal(sobol(3, 10, skip=6), sobol(3, 16)[6:])


def test_stream_advances_and_clones():
    s = SobolStream(4)
    a = s.next(5)
    c = s.clone()
    b = s.next(7)
    np.testing.assert_array_equal(np.vstack([a, b]), sobol(4, 12))
    np.testing.assert_array_equal(c.next(7), b)
    assert s.index == 12 and c.index == 12


def test_balanced_base2_blocks():
    # every dyadic interval of length 1/32 holds exactly one of the first 32 points
    X = sobol(6, 32)
    for j in range(6):
        counts = np.bincount((X[:, j] * 32).astype(int), minlength=32)
        assert np.all(counts == 1)


def test_discrepancy_beats_iid():
    X = sobol(3, 256)
    R = np.random.default_rng(0).uniform(size=(256, 3))
    assert qmc.discrepancy(X) < 0.5 * qmc.discrepancy(R)


@pytest.mark.parametrize("bad", [0, 21202])
def test_dimension_range(bad):
    with pytest.raises(ValueError):
        direction_numbers(bad)


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        SobolStream(2, index=-1)
    with pytest.raises(ValueError):
        SobolStream(2).next(-1)


class TestBall:
    def test_inside_ball_and_cube(self):
        center = np.array([0.5, 0.5, 0.5])
        X = ball_samples(center, 0.2, 200, SobolStream(4, 1))
        assert X.shape == (200, 3)
        assert np.all(np.linalg.norm(X - center, axis=1) <= 0.2 + 1e-12)

    def test_clipping_at_corner(self):
        X = ball_samples(np.zeros(2), 0.3, 100, SobolStream(3, 1))
        assert np.all(X >= 0.0) and np.all(X <= 1.0)

    def test_index_zero_maps_to_center(self):
        center = np.array([0.3, 0.6])
        X = ball_samples(center, 0.1, 1, SobolStream(3, 0))
        np.testing.assert_allclose(X[0], center)

    def test_deterministic(self):
        a = ball_samples([0.4, 0.4], 0.1, 16, SobolStream(3, 1))
        b = ball_samples([0.4, 0.4], 0.1, 16, SobolStream(3, 1))
        np.testing.assert_array_equal(a, b)

    def test_radial_distribution(self):
        # radius^d is uniform for a uniform ball, so its mean is 1/2
        d, r = 4, 0.1
        X = ball_samples(np.full(d, 0.5), r, 4096, SobolStream(d + 1, 1))
        u = (np.linalg.norm(X - 0.5, axis=1) / r) ** d
        assert abs(u.mean() - 0.5) < 0.01

    def test_direction_is_isotropic(self):
        d = 3
        X = ball_samples(np.full(d, 0.5), 0.1, 4096, SobolStream(d + 1, 1))
        assert np.all(np.abs((X - 0.5).mean(0)) < 2e-3)

    @pytest.mark.parametrize("kwargs", [{"K": 0}, {"radius": 0.0}])
    def test_invalid(self, kwargs):
        args = {"center": [0.5], "radius": 0.1, "K": 3, "stream": SobolStream(2)}
        args.update(kwargs)
        with pytest.raises(ValueError):
            ball_samples(**args)

    def test_stream_dimension_checked(self):
        with pytest.raises(ValueError):
            ball_samples([0.5, 0.5], 0.1, 3, SobolStream(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(0.01, 0.5), st.integers(1, 64), st.integers(0, 100))
def test_ball_property(d, radius, K, start):
    center = np.random.default_rng(start).uniform(size=d)
    X = ball_samples(center, radius, K, SobolStream(d + 1, start))
    assert np.all(np.linalg.norm(X - center, axis=1) <= radius + 1e-12)
    assert np.all((X >= 0) & (X <= 1))
