import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safe_landing.classes import DEFAULT_CLASSES
from safe_landing.geometry import CameraModel, nadir_pose
from safe_landing.gridio import load_grid
from safe_landing.semantic_map import (
    FilterConfig,
    SemanticGroundMap,
    apply_decay,
    bayes_update,
    filtered_argmax,
    integrate_observation,
    save_map,
)

C = DEFAULT_CLASSES.count
P = DEFAULT_CLASSES.person
GRASS = DEFAULT_CLASSES.index("Grass")
ROAD = DEFAULT_CLASSES.index("Road")
NON_PERSON = np.arange(C) != P
CFG = FilterConfig()
SMALL_CAM = CameraModel(fx=16.0, fy=16.0, cx=8.0, cy=8.0, width=16, height=16)


def vec(**entries):
    v = np.zeros(C)
    for name, value in entries.items():
        v[DEFAULT_CLASSES.index(name)] = value
    return v


# -- bayes_update -----------------------------------------------------------


def test_uniform_prior_returns_normalised_likelihood():
    prior = np.full(C, 1.0 / C)
    post = bayes_update(prior, vec(Grass=0.7, Road=0.3))
    assert post == pytest.approx(vec(Grass=0.7, Road=0.3), abs=1e-12)


def test_uniform_likelihood_preserves_prior():
    prior = vec(Grass=0.9, Road=0.1)
    assert bayes_update(prior, np.full(C, 0.05)) == pytest.approx(prior, abs=1e-15)


def test_hand_arithmetic():
    post = bayes_update(vec(Grass=0.6, Road=0.4), vec(Grass=0.5, Road=0.25))
    assert post == pytest.approx(vec(Grass=0.75, Road=0.25), abs=1e-15)


def test_person_likelihood_forced_when_argmax():
    prior = np.full(C, 1.0 / C)
    lik = vec(Person=0.5, Grass=0.3, Road=0.2)
    post = bayes_update(prior, lik, person_index=P)
    expected = vec(Person=1.0, Grass=0.3, Road=0.2) / 1.5
    assert post == pytest.approx(expected, abs=1e-15)
    # not the argmax: untouched
    lik2 = vec(Person=0.2, Grass=0.8)
    assert bayes_update(prior, lik2, person_index=P) == pytest.approx(lik2, abs=1e-15)


def test_disjoint_support_falls_back_to_likelihood():
    post = bayes_update(vec(Grass=1.0), vec(Road=2.0, Gravel=2.0))
    assert post == pytest.approx(vec(Road=0.5, Gravel=0.5), abs=1e-15)


def test_bayes_rejects_bad_likelihood():
    with pytest.raises(ValueError):
        bayes_update(np.full(C, 0.05), np.zeros(C))
    with pytest.raises(ValueError):
        bayes_update(np.full(C, 0.05), -np.ones(C))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_sequential_updates_equal_product(seed, n):
    rng = np.random.default_rng(seed)
    prior = rng.dirichlet(np.ones(C))
    liks = rng.uniform(0.01, 1.0, (n, C))
    seq = prior
    for lik in liks:
        seq = bayes_update(seq, lik)
    prod = prior * liks.prod(axis=0)
    assert seq == pytest.approx(prod / prod.sum(), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_posterior_is_a_distribution(seed):
    rng = np.random.default_rng(seed)
    post = bayes_update(rng.dirichlet(np.ones(C)), rng.random(C) + 1e-6)
    assert post.sum() == pytest.approx(1.0, abs=1e-12)
    assert (post >= 0).all()


# -- apply_decay --------------------------------------------------------------


def one_cell(v, observed_tick=0):
    grid = SemanticGroundMap.empty(1, 1, 1.0)
    return grid.replace(probs=np.asarray(v, float).reshape(1, 1, C), last_observed=np.array([[observed_tick]]))


def test_decay_arithmetic():
    grid = one_cell(vec(Grass=0.5, Road=0.5))
    out = apply_decay(grid, vec(Grass=1.0).reshape(1, 1, C), np.ones((1, 1), bool), np.zeros((1, 1), bool), CFG)
    assert out.probs[0, 0, GRASS] == pytest.approx(0.1 * 0.5 + 0.9 * 1.0, abs=1e-15)
    assert out.probs[0, 0, ROAD] == pytest.approx(0.05, abs=1e-15)


def test_decay_fixed_point():
    v = vec(Grass=0.3, Road=0.7)
    out = apply_decay(one_cell(v), v.reshape(1, 1, C), np.ones((1, 1), bool), np.zeros((1, 1), bool), CFG)
    assert out.probs[0, 0] == pytest.approx(v, abs=1e-15)


def test_unobserved_decays_to_zero_and_person_is_held():
    v = vec(Grass=1.0, Person=0.7)
    grid = one_cell(v)
    for _ in range(10):
        grid = apply_decay(grid, np.zeros((1, 1, C)), np.zeros((1, 1), bool), np.zeros((1, 1), bool), CFG)
    assert grid.probs[0, 0, GRASS] <= 1e-9
    assert grid.probs[0, 0, GRASS] == pytest.approx(1e-10, rel=1e-9)
    assert grid.probs[0, 0, P] == 0.7


@settings(max_examples=100, deadline=None)
@given(
    initial=st.floats(0, 1),
    target=st.floats(0, 1),
    k=st.integers(1, 12),
    alpha=st.floats(0.01, 0.99),
)
def test_decay_converges_geometrically(initial, target, k, alpha):
    cfg = FilterConfig(alpha=alpha)
    grid = one_cell(vec(Grass=initial))
    post = vec(Grass=target).reshape(1, 1, C)
    for _ in range(k):
        grid = apply_decay(grid, post, np.ones((1, 1), bool), np.zeros((1, 1), bool), cfg)
    err = abs(grid.probs[0, 0, GRASS] - target)
    assert err == pytest.approx(alpha**k * abs(initial - target), abs=1e-12)


def test_two_observations_are_closer_than_one():
    post = vec(Grass=1.0).reshape(1, 1, C)
    obs = np.ones((1, 1), bool)
    none = np.zeros((1, 1), bool)
    once = apply_decay(one_cell(vec(Road=1.0)), post, obs, none, CFG)
    twice = apply_decay(once, post, obs, none, CFG)
    assert abs(twice.probs[0, 0, GRASS] - 1.0) < abs(once.probs[0, 0, GRASS] - 1.0)


@settings(max_examples=100, deadline=None)
@given(steps=st.lists(st.tuples(st.booleans(), st.floats(0.0, 1.0)), min_size=1, max_size=15), start=st.floats(0, 1))
def test_person_channel_never_drops_while_person_or_unseen(steps, start):
    grid = one_cell(vec(Grass=0.5, Person=start))
    last = start
    for observed, p_obs in steps:
        post = vec(Person=p_obs, Grass=1.0 - p_obs).reshape(1, 1, C)
        grid = apply_decay(grid, post, np.array([[observed]]), np.array([[observed]]), CFG)
        assert grid.probs[0, 0, P] >= last
        last = grid.probs[0, 0, P]


# -- integrate_observation ---------------------------------------------------------


def oracle_integrate(grid, img, cam, pose, cfg, tick):
    """Per-cell loop: explicit re-anchoring, pinhole sampling, Bayes, decay."""
    X, Y, cs = grid.X, grid.Y, grid.cell_size
    probs = grid.probs.copy()
    last = grid.last_observed.copy()
    uninf = np.where(NON_PERSON, 1.0 / (C - 1), 0.0)

    def centre(i, j):
        return (i - (X - 1) / 2) * cs, (j - (Y - 1) / 2) * cs

    def to_world(p, mx, my):
        psi = p.heading
        cx, cy = p.center[:2]
        return cx + math.cos(psi) * mx - math.sin(psi) * my, cy + math.sin(psi) * mx + math.cos(psi) * my

    def to_map(p, wx, wy):
        psi = p.heading
        dx, dy = wx - p.center[0], wy - p.center[1]
        return math.cos(psi) * dx + math.sin(psi) * dy, -math.sin(psi) * dx + math.cos(psi) * dy

    if grid.pose is not None:
        warped = np.empty_like(probs)
        wl = np.empty_like(last)
        for i in range(X):
            for j in range(Y):
                mx, my = to_map(grid.pose, *to_world(pose, *centre(i, j)))
                si = math.floor(mx / cs + (X - 1) / 2 + 0.5)
                sj = math.floor(my / cs + (Y - 1) / 2 + 0.5)
                if 0 <= si < X and 0 <= sj < Y:
                    warped[i, j], wl[i, j] = probs[si, sj], last[si, sj]
                else:
                    warped[i, j], wl[i, j] = uninf, -1
        probs, last = warped, wl

    out = probs.copy()
    a = cfg.alpha
    for i in range(X):
        for j in range(Y):
            wx, wy = to_world(pose, *centre(i, j))
            xc = pose.rotation @ np.array([wx, wy, 0.0]) + pose.translation
            u = cam.fx * xc[0] / xc[2] + cam.cx
            v = cam.fy * xc[1] / xc[2] + cam.cy
            prev = probs[i, j]
            if xc[2] > 0 and 0 <= u < cam.width and 0 <= v < cam.height:
                lik = img[int(math.floor(v)), int(math.floor(u))]
                lik_np = np.where(NON_PERSON, lik, 0.0)
                if lik_np.sum() == 0:
                    lik_np = np.where(NON_PERSON, 1.0, 0.0)
                prod = lik_np * prev * NON_PERSON
                post = prod / prod.sum() if prod.sum() > 0 else lik_np / lik_np.sum()
                person_post = 1.0 if int(np.argmax(lik)) == P else lik[P]
                new = a * prev + (1 - a) * post
                new[P] = a * prev[P] + (1 - a) * person_post
                out[i, j] = new
                last[i, j] = tick
            else:
                new = a * prev
                new[P] = prev[P]
                out[i, j] = new
    return out, last


def random_frame(rng, h=16, w=16):
    img = rng.dirichlet(np.ones(C) * 0.3, size=(h, w))
    # plant a few pure-person pixels and a person-argmax cluster
    img[2, 3] = np.where(np.arange(C) == P, 1.0, 0.0)
    img[5:7, 5:7] = 0.01
    img[5:7, 5:7, P] = 0.81
    return img


@pytest.mark.parametrize("seed", range(4))
def test_integrate_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    # cell size and heights are chosen so that no cell centre lands exactly
    # on the half-open image border, where rounding order decides membership
    grid = SemanticGroundMap.empty(14, 12, 0.97)
    poses = [
        nadir_pose(0.0, 0.0, 10.3, yaw=0.2),
        nadir_pose(1.3, -0.4, 9.1, yaw=0.5),
        nadir_pose(2.1, 0.9, 8.2, yaw=0.45, pitch=0.1, roll=-0.05),
    ]
    ref = grid
    for t, pose in enumerate(poses):
        img = random_frame(rng)
        grid = integrate_observation(grid, img, SMALL_CAM, pose, CFG, t)
        probs, last = oracle_integrate(ref, img, SMALL_CAM, pose, CFG, t)
        ref = ref.replace(probs=probs, last_observed=last, pose=pose, tick=t)
        assert np.abs(grid.probs - ref.probs).max() < 1e-12
        assert np.array_equal(grid.last_observed, ref.last_observed)


def test_single_tick_over_grass():
    grid = SemanticGroundMap.empty(8, 8, 1.0)
    img = np.zeros((16, 16, C))
    img[..., GRASS] = 1.0
    out = integrate_observation(grid, img, SMALL_CAM, nadir_pose(0, 0, 20), CFG, 0)
    seen = out.last_observed == 0
    assert seen.all()
    expected = 0.1 * (1.0 / (C - 1)) + 0.9 * 1.0
    assert out.probs[..., GRASS] == pytest.approx(np.full((8, 8), expected), abs=1e-15)
    assert (filtered_argmax(out) == GRASS).all()


def test_disjoint_footprint_only_decays():
    grid = SemanticGroundMap.empty(4, 4, 1.0)
    grid = grid.replace(probs=np.tile(vec(Grass=0.6, Road=0.4, Person=0.3), (4, 4, 1)))
    # tilted camera at low height: the footprint misses the 4 m map entirely
    pose = nadir_pose(0, 0, 0.5, pitch=0.7)
    out = integrate_observation(grid, np.full((16, 16, C), 1.0 / C), SMALL_CAM, pose, CFG, 0)
    assert (out.last_observed == -1).all()
    assert out.probs[..., GRASS] == pytest.approx(np.full((4, 4), 0.06))
    assert out.probs[..., P] == pytest.approx(np.full((4, 4), 0.3))


def test_person_cluster_latches():
    grid = SemanticGroundMap.empty(8, 8, 1.0)
    img = np.full((16, 16, C), 0.1 / (C - 1))
    img[..., GRASS] = 0.9
    img[:, 8:] = 0.1 / (C - 1)
    img[:, 8:, P] = 0.9
    out = integrate_observation(grid, img, SMALL_CAM, nadir_pose(0, 0, 20), CFG, 0)
    assert (out.person[4:] >= 0.9 - 1e-12).all()
    assert (out.person[:4] < 0.2).all()


def test_non_person_sums_stay_normalised_under_continuous_observation():
    rng = np.random.default_rng(0)
    grid = SemanticGroundMap.empty(10, 10, 0.5)
    for t in range(6):
        pose = nadir_pose(0.1 * t, -0.05 * t, 12.0, yaw=0.02 * t)
        grid = integrate_observation(grid, random_frame(rng), SMALL_CAM, pose, CFG, t)
        observed = grid.last_observed == t
        always = observed & (grid.last_observed >= 0)
        sums = grid.probs[..., NON_PERSON].sum(axis=-1)
        assert np.abs(sums[always] - 1.0).max() < 1e-6
        assert ((grid.probs >= 0) & (grid.probs <= 1 + 1e-12)).all()


# -- filtered_argmax ---------------------------------------------------------------


def test_argmax_ties_take_lowest_index():
    grid = one_cell(vec(Grass=0.5, Road=0.5))
    assert filtered_argmax(grid)[0, 0] == ROAD


def test_never_observed_is_background():
    grid = SemanticGroundMap.empty(3, 3, 1.0)
    assert (filtered_argmax(grid) == DEFAULT_CLASSES.background).all()


def test_argmax_matches_brute_force():
    rng = np.random.default_rng(2)
    probs = rng.random((40, 25, C))
    probs[rng.random((40, 25)) < 0.2, ROAD] = probs.max()  # force ties
    grid = SemanticGroundMap.empty(40, 25, 1.0).replace(probs=probs, last_observed=np.zeros((40, 25), int))
    labels = filtered_argmax(grid)
    for i in range(40):
        for j in range(25):
            best, arg = -1.0, -1
            for c in range(C):
                if probs[i, j, c] > best:
                    best, arg = probs[i, j, c], c
            assert labels[i, j] == arg


# -- map object and dump ----------------------------------------------------


def test_map_rejects_bad_shapes():
    with pytest.raises(ValueError):
        SemanticGroundMap(np.zeros((2, 2, 3)), np.zeros((2, 2)), 1.0)
    with pytest.raises(ValueError):
        SemanticGroundMap(np.zeros((2, 2, C)), np.zeros((3, 2)), 1.0)
    with pytest.raises(ValueError):
        SemanticGroundMap.empty(0, 2, 1.0)


def test_default_extent():
    grid = SemanticGroundMap.empty()
    assert grid.extent == (64.0, 64.0)


def test_cell_world_round_trip():
    grid = SemanticGroundMap.empty(6, 4, 0.5).replace(pose=nadir_pose(3, 4, 10, yaw=0.7))
    w = grid.cell_to_world(2, 3)
    fi, fj = grid.world_to_cell(w[0], w[1])
    assert (float(fi), float(fj)) == pytest.approx((2.0, 3.0), abs=1e-12)


def test_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    grid = SemanticGroundMap.empty(5, 3, 0.25).replace(
        probs=rng.random((5, 3, C)), pose=nadir_pose(1.0, 2.0, 10.0)
    )
    path = tmp_path / "map.txt"
    save_map(grid, path)
    dump = load_grid(path)
    assert np.array_equal(dump.values, grid.probs)
    assert dump.cell_size == 0.25
    assert dump.channels == DEFAULT_CLASSES.names
    assert dump.anchor == pytest.approx(grid.anchor)
    header = path.read_text().splitlines()[:8]
    assert header[1:3] == ["X 5", "Y 3"]


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
def test_filter_config_validation(alpha):
    with pytest.raises(ValueError):
        FilterConfig(alpha=alpha)
