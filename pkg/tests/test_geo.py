import math
import warnings

import numpy as np
import pytest

from bayesleak.core import System, validate
from bayesleak.geo import (Grid, beta_from_nu, blahut_arimoto, distance_matrix,
                           laplacian_dataset, make_gowalla_grids, planar_geometric,
                           planar_laplacian_sample, prior_from_checkins, read_checkins,
                           synthetic_checkins, utility, write_checkins)
from bayesleak.measures import bayes_risk

CENTER = (37.755, -122.440)


def small_grids():
    return Grid(CENTER, 150.0, 4), Grid(CENTER, 50.0, 20)


def test_gowalla_grids():
    gi, go = make_gowalla_grids()
    assert gi.size == 400
    assert go.size == 115_600
    assert gi.half_width == 1500.0
    assert go.half_width - gi.half_width == 1050.0
    np.testing.assert_allclose(gi.centers().mean(axis=0), [0.0, 0.0], atol=1e-9)
    odd = Grid(CENTER, 10.0, 5)
    np.testing.assert_array_equal(odd.centers([12]), [[0.0, 0.0]])


def test_grid_roundtrip():
    grid = Grid(CENTER, 150.0, 20)
    rng = np.random.default_rng(0)
    xy = rng.uniform(-1499, 1499, (2000, 2))
    cells = grid.cell_of(xy)
    assert np.all(cells >= 0)
    shift = np.linalg.norm(grid.centers(cells) - xy, axis=1)
    assert shift.max() <= 150.0 * math.sqrt(2) / 2
    np.testing.assert_array_equal(grid.cell_of(grid.centers()), np.arange(grid.size))
    latlon = grid.to_latlon(xy)
    np.testing.assert_allclose(grid.to_planar(latlon[:, 0], latlon[:, 1]), xy, atol=1e-6)
    assert grid.cell_of([[1500.0, 0.0]])[0] == -1


def test_planar_projection_scale():
    grid = Grid(CENTER, 150.0, 20)
    # one degree of latitude is about 111.2 km
    xy = grid.to_planar(CENTER[0] + 0.01, CENTER[1])
    assert xy[0, 1] == pytest.approx(1111.95, abs=0.1)


def test_prior_from_checkins():
    gi, _ = make_gowalla_grids()
    one = np.tile(gi.to_latlon(gi.centers([17])), (5, 1))
    prior, discarded = prior_from_checkins(np.vstack([one, [[0.0, 0.0]]]), gi)
    assert discarded == 1
    assert prior[17] == 1.0 and prior.sum() == 1.0
    with pytest.raises(ValueError):
        prior_from_checkins(np.zeros((0, 2)), gi)


def test_prior_from_uniform_checkins_is_near_uniform():
    gi, _ = make_gowalla_grids()
    rng = np.random.default_rng(1)
    xy = rng.uniform(-1500, 1500, (100_000, 2))
    prior, _ = prior_from_checkins(gi.to_latlon(xy), gi)
    assert 0.5 * np.abs(prior - 1 / 400).sum() < 0.05


def test_checkin_file(tmp_path):
    gi, _ = make_gowalla_grids()
    pts = synthetic_checkins(gi, 50, seed=3)
    path = tmp_path / "c.csv"
    write_checkins(pts, path)
    np.testing.assert_array_equal(read_checkins(path), pts)
    write_checkins(pts, path, header=False)
    np.testing.assert_array_equal(read_checkins(path), pts)
    path.write_text("lat,lon\n1.0,2.0\nnot,valid\n")
    with pytest.raises(ValueError):
        read_checkins(path)


def test_planar_geometric_small():
    gi, go = small_grids()
    system = planar_geometric(2.0, np.full(16, 1 / 16), gi, go)
    assert validate(system) == []
    D = distance_matrix(gi, go)
    beta = math.log(2) / 100
    s, a, b = 5, 10, 300
    ratio = system.channel[s, a] / system.channel[s, b]
    assert ratio == pytest.approx(math.exp(-beta * (D[s, a] - D[s, b])), rel=1e-10)
    with pytest.raises(ValueError):
        planar_geometric(1.0, np.full(16, 1 / 16), gi, go)


def test_identity_utility_is_zero():
    system = System([0.5, 0.5], np.eye(2))
    assert utility(system, np.array([[0.0, 7.0], [7.0, 0.0]])) == 0.0


def test_laplacian_samples_inside_and_tighter_for_larger_nu():
    gi, go = make_gowalla_grids()
    cells = np.full(100_000, 0)  # a corner cell, so truncation matters
    means = []
    for nu in (2.0, 8.0):
        pts = planar_laplacian_sample(cells, nu, 4, gi, go)
        assert np.all(np.abs(pts) < go.half_width)
        means.append(np.linalg.norm(pts - gi.centers([0]), axis=1).mean())
    assert means[1] < means[0]
    with pytest.raises(ValueError):
        planar_laplacian_sample([0], 0.5, 0, gi, go)


def test_laplacian_radius_distribution():
    # far from the border the radius is Gamma(2, 1/beta): mean 2/beta
    gi, go = Grid(CENTER, 10.0, 1), Grid(CENTER, 100_000.0, 1)
    pts = planar_laplacian_sample(np.zeros(200_000, int), 2.0, 5, gi, go)
    r = np.linalg.norm(pts, axis=1)
    assert r.mean() == pytest.approx(2 / beta_from_nu(2.0), rel=0.01)


def test_laplacian_dataset_reproducible():
    gi, go = make_gowalla_grids()
    prior = np.full(400, 1 / 400)
    a = laplacian_dataset(prior, 2.0, 300, 9, gi, go)
    b = laplacian_dataset(prior, 2.0, 300, 9, gi, go)
    np.testing.assert_array_equal(a.observations, b.observations)
    assert a.dim == 2 and a.n_secrets == 400


def test_blahut_arimoto_small_properties():
    gi, go = small_grids()
    prior = np.random.default_rng(2).dirichlet(np.ones(16))
    D = distance_matrix(gi, go)
    res = blahut_arimoto(prior, D, beta_from_nu(2.0), max_iters=3000)
    assert validate(res.system) == []
    assert res.output_prior.sum() == pytest.approx(1.0)
    assert np.all(np.diff(res.objective) <= 1e-12)
    q = res.system.channel
    np.testing.assert_allclose(prior @ q, res.output_prior, atol=1e-9)


def test_blahut_arimoto_zero_temperature_limit():
    gi, go = small_grids()
    D = distance_matrix(gi, go)
    res = blahut_arimoto(np.full(16, 1 / 16), D, beta=5.0, max_iters=500)
    nearest = D.argmin(axis=1)
    picked = res.system.channel.argmax(axis=1)
    np.testing.assert_allclose(D[np.arange(16), picked], D[np.arange(16), nearest])
    assert np.all(res.system.channel.max(axis=1) > 0.99)


def test_blahut_arimoto_warns_on_max_iters():
    gi, go = small_grids()
    with pytest.warns(RuntimeWarning):
        res = blahut_arimoto(np.full(16, 1 / 16), distance_matrix(gi, go), 0.01, max_iters=3)
    assert not res.converged and res.iterations == 3


def test_blahut_arimoto_pruning_matches_full():
    gi, go = Grid(CENTER, 150.0, 6), Grid(CENTER, 50.0, 30)
    prior = np.random.default_rng(5).dirichlet(np.ones(36))
    D = distance_matrix(gi, go)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        full = blahut_arimoto(prior, D, beta_from_nu(2.0), max_iters=2000, prune=0)
        pruned = blahut_arimoto(prior, D, beta_from_nu(2.0), max_iters=2000)
    np.testing.assert_allclose(pruned.system.channel, full.system.channel, atol=1e-12)
    np.testing.assert_allclose(pruned.objective, full.objective, rtol=1e-12)


def test_blahut_arimoto_gowalla_support_is_small():
    gi, go = make_gowalla_grids()
    prior, _ = prior_from_checkins(synthetic_checkins(gi, 200_000, seed=0), gi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = blahut_arimoto(prior, distance_matrix(gi, go), beta_from_nu(2.0))
    support = int((res.system.channel.max(axis=0) > 1e-6).sum())
    assert support < 100
    assert validate(res.system) == []
