import math

import numpy as np
import pytest

from radarmotion import kernels
from radarmotion.metrics import limb_length_jitter
from radarmotion.radar import (MeasurementError, RadarConfig, SyntheticActor, angles_from_phase,
                               dropout_mask, generate_motion, joint_velocities, measurables_from_point,
                               point_from_measurables, random_actor, range_from_frequency,
                               simulate_radar, velocity_from_phase)
from radarmotion.skeleton import LIMBS


def test_range_examples():
    cfg = RadarConfig(chirp_duration=1e-4, bandwidth=1e9)
    assert range_from_frequency(0.0, cfg) == 0.0
    # the 1.5 m spot value assumes c = 3e8; the default constant 2.998e8 gives 1.499 m
    assert range_from_frequency(1e5, cfg) == pytest.approx(1.499, abs=1e-12)
    rounded = RadarConfig(chirp_duration=1e-4, bandwidth=1e9, speed_of_light=3.0e8)
    assert range_from_frequency(1e5, rounded) == pytest.approx(1.5, abs=1e-5)
    assert range_from_frequency(2e5, cfg) == pytest.approx(2 * range_from_frequency(1e5, cfg))
    with pytest.raises(ValueError):
        range_from_frequency(-1.0, cfg)


def test_velocity_examples():
    cfg = RadarConfig(wavelength=0.004, chirp_duration=1e-4)
    assert velocity_from_phase(0.0, cfg) == 0.0
    assert velocity_from_phase(math.pi, cfg) == pytest.approx(10.0, abs=1e-5)
    assert velocity_from_phase(-1.3, cfg) == -velocity_from_phase(1.3, cfg)


def test_angle_examples():
    assert angles_from_phase(0.0, 0.0) == (0.0, 0.0)
    az, el = angles_from_phase(math.pi / 2, 0.0)
    assert el == 0.0 and az == pytest.approx(0.52360, abs=1e-5)
    az, el = angles_from_phase(0.0, math.pi)
    assert el == pytest.approx(math.pi / 2)
    with pytest.raises(MeasurementError):
        angles_from_phase(0.1, math.pi)
    with pytest.raises(MeasurementError):
        angles_from_phase(0.0, 4.0)
    with pytest.raises(MeasurementError):
        angles_from_phase(3.5, 0.0)


def test_point_examples():
    assert np.allclose(point_from_measurables(2.0, 0.0, math.pi / 6), (0.0, 1.73205, 1.0), atol=1e-5)
    assert point_from_measurables(1.7, 0.0, 0.0) == (0.0, 1.7, 0.0)


def test_geometry_round_trip_grid():
    worst = 0.0
    for r in np.linspace(0.1, 10.0, 10):
        for az in np.linspace(-1.5, 1.5, 10):
            for el in np.linspace(-1.5, 1.5, 10):
                x, y, z = point_from_measurables(r, az, el)
                assert abs(x * x + y * y + z * z - r * r) < 1e-9
                back = measurables_from_point(x, y, z)
                worst = max(worst, np.abs(np.subtract(back, (r, az, el))).max())
    assert worst < 1e-9


def test_static_actor_and_determinism():
    seq = generate_motion(SyntheticActor(), 12, 15.0, seed=4)
    assert np.array_equal(seq.frames, np.repeat(seq.frames[:1], 12, axis=0))
    actor = random_actor(np.random.default_rng(2))
    a = generate_motion(actor, 30, 15.0, seed=7)
    b = generate_motion(actor, 30, 15.0, seed=7)
    assert a.frames.tobytes() == b.frames.tobytes()


def test_generated_limbs_rigid():
    for s in range(5):
        seq = generate_motion(random_actor(np.random.default_rng(s)), 40, 15.0, seed=s)
        assert limb_length_jitter(seq.frames) < 1e-9
    with pytest.raises(ValueError):
        generate_motion(SyntheticActor(), 0, 15.0)
    with pytest.raises(ValueError):
        SyntheticActor(parents=(-1, 2, 0))


def walker(n=20, seed=0):
    return generate_motion(random_actor(np.random.default_rng(seed)), n, 15.0, seed=seed)


def test_noiseless_points_lie_on_limbs():
    gt = walker()
    cfg = RadarConfig(dropout=0.0, ghost_rate=0.0, noise_std=0.0)
    for i, fr in enumerate(simulate_radar(gt, cfg, seed=1)):
        a, b = gt.frames[i, [p for p, _ in LIMBS]], gt.frames[i, [c for _, c in LIMBS]]
        assert fr.valid_count == len(LIMBS) * cfg.points_per_segment
        assert kernels.segment_distance(fr.valid[:, :3], a, b).max() < 1e-9
        assert np.all(fr.valid[:, 4:] > 0)


def test_noiseless_radial_velocity():
    gt = walker(10, 3)
    cfg = RadarConfig(dropout=0.0, ghost_rate=0.0, noise_std=0.0, points_per_segment=1)
    frames = simulate_radar(gt, cfg, seed=2)
    vel = joint_velocities(gt.frames, gt.frame_rate)
    limbs = np.asarray(LIMBS)
    for i, fr in enumerate(frames):
        pts = fr.valid
        a, b = gt.frames[i, limbs[:, 0]], gt.frames[i, limbs[:, 1]]
        # recover each point's position along its segment, then project the interpolated velocity
        u = np.sum((pts[:, :3] - a) * (b - a), axis=1) / np.sum((b - a) ** 2, axis=1)
        v = vel[i, limbs[:, 0]] + u[:, None] * (vel[i, limbs[:, 1]] - vel[i, limbs[:, 0]])
        los = pts[:, :3] / np.linalg.norm(pts[:, :3], axis=1, keepdims=True)
        assert np.abs(np.sum(v * los, axis=1) - pts[:, 3]).max() < 1e-6


def test_total_dropout_empties_frames():
    frames = simulate_radar(walker(), RadarConfig(dropout=1.0), seed=0)
    assert all(f.valid_count == 0 for f in frames)


def test_noise_scale_monte_carlo():
    gt = walker(60, 5)
    sigma = 0.03
    cfg = RadarConfig(dropout=0.0, ghost_rate=0.0, noise_std=sigma)
    dists = []
    for i, fr in enumerate(simulate_radar(gt, cfg, seed=9)):
        a, b = gt.frames[i, [p for p, _ in LIMBS]], gt.frames[i, [c for _, c in LIMBS]]
        dists.append(kernels.segment_distance(fr.valid[:, :3], a, b))
    dists = np.concatenate(dists)[:1000]
    assert len(dists) == 1000 and dists.mean() <= 3 * sigma


def test_simulation_deterministic():
    gt, cfg = walker(), RadarConfig()
    a, b = simulate_radar(gt, cfg, seed=11), simulate_radar(gt, cfg, seed=11)
    assert all(x.points.tobytes() == y.points.tobytes() for x, y in zip(a, b))
    c = simulate_radar(gt, cfg, seed=12)
    assert any(x.points.shape != y.points.shape or not np.array_equal(x.points, y.points)
               for x, y in zip(a, c))


@pytest.mark.parametrize("corr", [0.0, 0.6])
def test_dropout_rate(corr):
    p = 0.3
    mask = dropout_mask(10_000, 16, p, corr, np.random.default_rng(0))
    assert abs(mask[:, 0].mean() - p) < 0.02
    assert abs(mask.mean() - p) < 0.02


def test_ghost_points_are_mirrored():
    gt = walker()
    cfg = RadarConfig(dropout=0.0, ghost_rate=1.0, noise_std=0.0, ghost_noise_std=0.0)
    fr = simulate_radar(gt, cfg, seed=0)[0]
    n = len(LIMBS) * cfg.points_per_segment
    real, ghost = fr.valid[:n], fr.valid[n:]
    assert len(ghost) == n
    assert np.allclose(ghost[:, 0], 2 * cfg.wall_x - real[:, 0])
    assert np.allclose(ghost[:, 1:3], real[:, 1:3])


def test_config_validation():
    with pytest.raises(ValueError):
        RadarConfig(bandwidth=0.0)
    with pytest.raises(ValueError):
        RadarConfig(dropout=1.5)
