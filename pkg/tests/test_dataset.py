import numpy as np
import pytest

from radarmotion.codec import PoseSequence, motion_energy
from radarmotion.dataset import (PipelineConfig, PipelineError, build_dataset, crop_region,
                                 select_motion_samples, sliding_window_concat, zero_pad)
from radarmotion.radar import RadarConfig, RadarFrame, generate_motion, random_actor, simulate_radar


def frame(n, t=0, value=1.0):
    return RadarFrame(np.full((n, 6), value), timestamp=t)


def test_sliding_window_examples():
    frames = [frame(10, 0), frame(20, 1), frame(30, 2)]
    out = sliding_window_concat(frames, 2)
    assert [f.valid_count for f in out] == [10, 30, 50]
    assert len(out) == 3
    ident = sliding_window_concat(frames, 1)
    assert all(np.array_equal(a.valid, b.valid) for a, b in zip(ident, frames))
    with pytest.raises(PipelineError):
        sliding_window_concat([], 2)


def test_window_ignores_padding_rows():
    padded = RadarFrame(np.vstack([np.ones((2, 6)), np.zeros((3, 6))]), valid_count=2)
    out = sliding_window_concat([padded, padded], 2)
    assert out[1].valid_count == 4 and len(out[1].points) == 4


def test_crop_examples():
    c = np.array([0.5, 3.0, 1.0])
    at_center = RadarFrame(np.tile(np.r_[c, 0, 1, 1], (4, 1)))
    assert crop_region(at_center, c, 1.6).valid_count == 4
    pts = np.array([np.r_[c + [1.7, 0, 0], 0, 1, 1], np.r_[c + [1.6, 0, 0], 0, 1, 1],
                    np.r_[c - [0, 1.6, 1.6], 0, 1, 1]])
    out = crop_region(RadarFrame(pts), c, 1.6)
    assert out.valid_count == 2
    assert np.array_equal(out.valid, pts[1:])


def test_zero_pad_examples():
    out = zero_pad(frame(3), 5)
    assert len(out.points) == 5 and out.valid_count == 3
    assert np.all(out.points[3:] == 0)
    same = zero_pad(frame(5), 5)
    assert np.array_equal(same.points, frame(5).points)
    empty = zero_pad(RadarFrame(np.zeros((0, 6))), 4)
    assert empty.valid_count == 0 and empty.points.shape == (4, 6)


def test_zero_pad_overflow_subsamples():
    pts = np.arange(60.0).reshape(10, 6)
    with pytest.warns(RuntimeWarning):
        a = zero_pad(RadarFrame(pts), 4, np.random.default_rng(1))
    with pytest.warns(RuntimeWarning):
        b = zero_pad(RadarFrame(pts), 4, np.random.default_rng(1))
    assert a.valid_count == 4 and np.array_equal(a.points, b.points)
    assert all(any(np.array_equal(r, p) for p in pts) for r in a.points)


def test_select_examples():
    static = np.zeros((5, 1, 3))
    moving = np.array([[[0.0, 0, 0]], [[1.0, 0, 0]], [[2.0, 0, 0]]])
    assert motion_energy(moving) == 5.0
    assert select_motion_samples([static], 0.1) == []
    assert len(select_motion_samples([moving], 3.0)) == 1
    assert len(select_motion_samples([static, moving], 0.0)) == 2


def make_streams(n_seq=2, frames=40, seed=0):
    poses, radar = [], []
    for i in range(n_seq):
        p = generate_motion(random_actor(np.random.default_rng([seed, i])), frames, 15.0, seed=i)
        poses.append(p)
        radar.append(simulate_radar(p, RadarConfig(), seed=i))
    return poses, radar


def test_window_count_and_short_sequence():
    poses, radar = make_streams(1, 30)
    cfg = PipelineConfig(H=4, F=6, thre=0.0, split=1.0, pad_to=256)
    train, test = build_dataset(poses, radar, cfg)
    assert len(train) == 30 - 10 + 1 and test == []
    short = PipelineConfig(H=4, F=6, thre=0.0, split=1.0, pad_to=256)
    train, _ = build_dataset([PoseSequence(poses[0].frames[:10])], [radar[0][:10]], short)
    assert len(train) <= 1


def test_dataset_invariants():
    poses, radar = make_streams(3, 100)
    cfg = PipelineConfig(H=8, F=16, thre=3.0, pad_to=256)
    train, test = build_dataset(poses, radar, cfg)
    assert train and test
    cut = int(round(cfg.split * 100))
    for split, samples in (("train", train), ("test", test)):
        for s in samples:
            assert motion_energy(s.full) >= cfg.thre
            assert all(len(f.points) == cfg.pad_to for f in s.radar_history)
            assert np.allclose(s.gt_history.frames[:, 0], 0.0)
            start = s.meta["start"]
            end = start + cfg.H + cfg.F
            assert end <= cut if split == "train" else start >= cut
    again = build_dataset(poses, radar, cfg)
    assert [s.sample_id for s in again[0]] == [s.sample_id for s in train]
    assert all(a.radar_history[0].points.tobytes() == b.radar_history[0].points.tobytes()
               for a, b in zip(again[0], train))


def test_radar_history_is_pelvis_centred():
    poses, radar = make_streams(1, 30)
    cfg = PipelineConfig(H=4, F=4, thre=0.0, split=1.0, crop=1.6, pad_to=256)
    train, _ = build_dataset(poses, radar, cfg)
    for s in train:
        for f in s.radar_history:
            assert np.abs(f.valid[:, :3]).max() <= 1.6 + 1e-9


def test_misaligned_streams_rejected():
    poses, radar = make_streams(1, 30)
    with pytest.raises(PipelineError):
        build_dataset(poses, [radar[0][:-1]], PipelineConfig())
    with pytest.raises(PipelineError):
        build_dataset(poses, radar + radar, PipelineConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(window=0)
    with pytest.raises(ValueError):
        PipelineConfig(split=1.5)
    with pytest.raises(ValueError):
        PipelineConfig(thre=-1)
