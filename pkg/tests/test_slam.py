from __future__ import annotations

import math
import random

import numpy as np
import pytest

from robomesh.slam import GridSpec, ParticleSet, SlamConfig, logistic


def make_set(particles=10, seed=0, res=0.5, size=10.0, **kw) -> ParticleSet:
    cfg = SlamConfig(grid=GridSpec(size, size, res), particles=particles, seed=seed, **kw)
    return ParticleSet(cfg, initial_pose=(size / 2, size / 2, 0.0))


def single_beam_scan(r, range_max=5.0, angle=0.0):
    return {
        "header": {"stamp": {"sec": 0, "nsec": 0}, "frame": "lidar"},
        "angles": [angle],
        "ranges": [r],
        "range_max": range_max,
    }


def test_predict_zero_noise_moves_identically():
    ps = make_set(sigma_v=0.0, sigma_w=0.0, sigma_theta=0.0)
    ps.predict(1.0, 0.0, 0.5)
    poses = {(p.x, p.y, p.theta) for p in ps.particles}
    assert poses == {(5.5, 5.0, 0.0)}


def test_predict_zero_twist_jitters_heading_only():
    ps = make_set(sigma_v=0.0, sigma_w=0.0, sigma_theta=0.1)
    ps.predict(0.0, 0.0, 0.5)
    assert all((p.x, p.y) == (5.0, 5.0) for p in ps.particles)
    assert len({p.theta for p in ps.particles}) > 1


def test_particle_spread_grows_monotonically():
    # straight-line command: curvature would wrap the cloud onto a ring and
    # saturate the position spread
    ps = make_set(particles=50, seed=3, sigma_v=0.05, sigma_w=0.05, sigma_theta=0.01)
    stds = []
    for step in range(1000):
        ps.predict(0.3, 0.0, 0.1)
        if step % 100 == 99:
            xs = np.array([p.x for p in ps.particles])
            ys = np.array([p.y for p in ps.particles])
            stds.append(float(np.std(xs) + np.std(ys)))
    assert all(stds[i] < stds[i + 1] for i in range(len(stds) - 1))


def test_weight_max_range_beams_leave_weights_unchanged():
    ps = make_set(particles=5)
    before = ps.weights()
    ps.weight(single_beam_scan(5.0, range_max=5.0))
    assert np.allclose(ps.weights(), before)


def test_weight_uniform_blank_maps_stay_uniform():
    ps = make_set(particles=8)
    ps.weight(single_beam_scan(2.0))
    assert np.allclose(ps.weights(), 1.0 / 8)


def test_weight_matching_map_wins():
    ps = make_set(particles=2, res=0.5)
    # particle 0 knows about a wall at the beam endpoint; particle 1 is blank
    g = ps.config.grid
    endpoint_cell = (int(5.0 / g.resolution), int((5.0 + 2.0) / g.resolution))
    ps.particles[0].grid[endpoint_cell[0], endpoint_cell[1]] = 6.0
    ps.weight(single_beam_scan(2.0))
    w = ps.weights()
    assert w[0] > w[1]
    assert abs(float(w.sum()) - 1.0) < 1e-9


def test_weight_normalization_invariant():
    rng = random.Random(9)
    ps = make_set(particles=20, seed=4)
    for _ in range(30):
        ps.predict(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.1)
        ps.weight(single_beam_scan(rng.uniform(0.5, 4.0)))
        assert abs(float(ps.weights().sum()) - 1.0) < 1e-9


def test_update_maps_single_beam_constants():
    ps = make_set(particles=2, res=0.5)
    ps.particles[0].x = ps.particles[1].x = 0.25
    ps.particles[0].y = ps.particles[1].y = 0.25
    ps.update_maps(single_beam_scan(2.0))
    for p in ps.particles:
        row = p.grid[0]
        assert row[4] == pytest.approx(0.85)  # endpoint cell
        assert all(row[i] == pytest.approx(-0.4) for i in range(4))  # traversed
        assert row[5] == 0.0  # untouched beyond the hit


def test_update_maps_max_range_carves_but_no_endpoint():
    ps = make_set(particles=2, res=0.5)
    ps.particles[0].x = ps.particles[1].x = 0.25
    ps.particles[0].y = ps.particles[1].y = 0.25
    ps.update_maps(single_beam_scan(2.0, range_max=2.0))
    row = ps.particles[0].grid[0]
    assert all(row[i] == pytest.approx(-0.4) for i in range(4))
    assert row[4] == 0.0


def test_update_maps_saturates_at_clamp():
    ps = make_set(particles=2, res=0.5)
    for _ in range(20):
        ps.update_maps(single_beam_scan(2.0))
    p = ps.particles[0]
    assert p.grid.max() == pytest.approx(6.0)
    assert p.grid.min() == pytest.approx(-6.0)
    probs = logistic(p.grid)
    assert probs.max() < 1.0 and probs.min() > 0.0


def test_no_cross_particle_map_sharing():
    ps = make_set(particles=4)
    grids = [p.grid for p in ps.particles]
    assert all(grids[i] is not grids[j] for i in range(4) for j in range(i + 1, 4))
    ps.particles[0].grid[0, 0] = 3.0
    assert all(p.grid[0, 0] == 0.0 for p in ps.particles[1:])
    ps.resample(np.array([1.0, 0.0, 0.0, 0.0]))
    grids = [p.grid for p in ps.particles]
    assert all(grids[i] is not grids[j] for i in range(4) for j in range(i + 1, 4))


def test_neff_uniform_no_resample():
    ps = make_set(particles=10)
    assert ps.n_eff() == pytest.approx(10.0)
    assert ps.resample_if_needed() is False


def test_concentrated_weight_resamples_to_copies():
    ps = make_set(particles=10)
    for i, p in enumerate(ps.particles):
        p.log_weight = 0.0 if i == 3 else -60.0
        p.x = float(i)
    ps._renormalize()
    assert ps.n_eff() < 5.0
    assert ps.resample_if_needed() is True
    assert all(p.x == 3.0 for p in ps.particles)
    assert np.allclose(ps.weights(), 0.1)


def test_systematic_resampling_count_bounds():
    rng = np.random.default_rng(12)
    for _ in range(50):
        m = int(rng.integers(5, 60))
        w = rng.random(m)
        w /= w.sum()
        ps = make_set(particles=m, seed=int(rng.integers(0, 1000)))
        for i, p in enumerate(ps.particles):
            p.x = float(i)
        ps.resample(w)
        counts = np.bincount([int(p.x) for p in ps.particles], minlength=m)
        for i in range(m):
            lo = math.floor(m * w[i])
            hi = math.ceil(m * w[i])
            assert lo <= counts[i] <= hi, (i, w[i], counts[i])


def test_estimate_single_best_particle():
    ps = make_set(particles=3)
    ps.particles[1].log_weight = 0.0
    ps.particles[1].x = 7.7
    ps._renormalize()
    pose, grid_msg = ps.estimate()
    assert pose["x"] == 7.7
    cells = grid_msg["cells"]
    assert all(0.0 < c < 1.0 for c in cells)
    assert grid_msg["width"] == ps.config.grid.nx


def test_determinism_bit_identical():
    def run():
        ps = make_set(particles=12, seed=77, sigma_v=0.05, sigma_w=0.05, sigma_theta=0.01)
        rng = random.Random(5)
        out = []
        for _ in range(40):
            ps.predict(rng.uniform(0, 0.5), rng.uniform(-0.5, 0.5), 0.1)
            scan = single_beam_scan(rng.uniform(0.5, 4.5))
            ps.weight(scan)
            ps.update_maps(scan)
            ps.resample_if_needed()
            pose, _ = ps.estimate()
            out.append((pose["x"], pose["y"], pose["theta"]))
        return out

    assert run() == run()


def test_one_dimensional_filter_tracks_bayes_oracle():
    """Heading fixed, 1-row grid, known map: the particle filter's posterior
    mean must track an exact discretized Bayes filter within 2 cells."""
    res = 0.2
    nx = 100  # 20 m corridor
    wall_ix = 80  # wall cell [16.0, 16.2)
    wall_x = wall_ix * res
    sigma_v = 0.2
    dt = 0.5
    v_cmd = 0.1
    z_hit, z_rand = 0.75, 0.25

    known = np.full(nx, -6.0, dtype=np.float32)
    known[wall_ix] = 6.0

    cfg = SlamConfig(
        grid=GridSpec(nx * res, res, res),
        particles=400,
        seed=21,
        sigma_v=sigma_v,
        sigma_w=0.0,
        sigma_theta=0.0,
        beam_stride=1,
    )
    ps = ParticleSet(cfg, initial_pose=(2.0, res / 2, 0.0))
    for p in ps.particles:
        p.grid[0, :] = known

    # independent Bayes filter over cell centers
    centers = (np.arange(nx) + 0.5) * res
    belief = np.zeros(nx)
    belief[int(2.0 / res)] = 1.0
    disp_mean = v_cmd * dt
    disp_std = sigma_v * dt
    offsets = np.arange(-15, 16)
    kernel = np.exp(-0.5 * ((offsets * res - disp_mean) / disp_std) ** 2)
    kernel /= kernel.sum()

    def oracle_likelihood(z):
        endpoint = centers + z
        e_ix = np.floor(endpoint / res).astype(int)
        p_occ = np.full(nx, 0.5)
        inside = (e_ix >= 0) & (e_ix < nx)
        p_occ[inside] = 1.0 / (1.0 + np.exp(-known[e_ix[inside]]))
        return z_hit * p_occ + z_rand

    meas_rng = np.random.default_rng(99)
    x_true = 2.0
    errors = []
    for step in range(100):
        x_true += v_cmd * dt
        z = wall_x - x_true + meas_rng.normal(0.0, 0.05)
        scan = single_beam_scan(z, range_max=25.0)

        ps.predict(v_cmd, 0.0, dt)
        ps.weight(scan)
        ps.resample_if_needed()

        shifted = np.convolve(belief, kernel, mode="full")[15 : 15 + nx]
        belief = shifted / shifted.sum()
        belief = belief * oracle_likelihood(z)
        belief /= belief.sum()

        pf_mean = ps.mean_position()[0]
        oracle_mean = float(np.dot(belief, centers))
        errors.append(abs(pf_mean - oracle_mean))
    assert max(errors) < 2 * res, max(errors)
