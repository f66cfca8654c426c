import copy

import numpy as np
import pytest

from radarmotion.autodiff import Tensor
from radarmotion.codec import build_basis, dct, idct, pad_repeat
from radarmotion.condition import FdmConfig, FrequencyMotionNet, LearnedPoseEstimator
from radarmotion.dataset import PipelineConfig, build_dataset
from radarmotion.diffusion import (InpaintMask, SamplerConfig, complete, cosine_schedule, ddim_plan,
                                   ddim_step, dct_completion, forward_sample, forward_stepwise,
                                   history_coeffs, noise_history, reverse_sample, reverse_step,
                                   schedule_from_betas, training_loss, training_step)
from radarmotion.gst import GstConfig
from radarmotion.radar import RadarConfig, generate_motion, random_actor, simulate_radar
from radarmotion.training import (MotionDiffuser, estimate_histories, sample_features,
                                  sample_futures)


# -- schedule and forward process -------------------------------------------
@pytest.mark.parametrize("K", [1, 10, 100, 1000])
def test_cosine_schedule_invariants(K):
    s = cosine_schedule(K)
    assert s.alpha_bar[0] == 1.0 and s.K == K
    assert np.all((s.beta > 0) & (s.beta <= 0.999))
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.allclose(np.concatenate([[1.0], np.cumprod(1 - s.beta)]), s.alpha_bar, atol=1e-12, rtol=0)
    if K == 100:
        assert s.alpha_bar[-1] < 1e-3
    with pytest.raises(ValueError):
        cosine_schedule(0)


def test_forward_examples():
    flat = schedule_from_betas(np.zeros(5))
    x0 = np.arange(6.0).reshape(2, 3)
    for k in range(1, 6):
        assert np.array_equal(forward_sample(x0, k, np.ones_like(x0), flat), x0)
    one = schedule_from_betas([0.19])
    assert forward_sample(np.ones(1), 1, np.ones(1), one)[0] == pytest.approx(1.33589, abs=1e-5)
    with pytest.raises(ValueError):
        forward_sample(np.ones(3), 1, np.ones(2), one)


def test_stepwise_matches_closed_form_moments():
    sched = cosine_schedule(20)
    k, n = 12, 10_000
    x0 = np.array([1.5, -2.0, 3.0, -1.5, 2.5, 4.0])
    rng = np.random.default_rng(0)
    draws = forward_stepwise(np.broadcast_to(x0, (n, len(x0))), k, sched, rng)
    ab = sched.alpha_bar[k]
    mean = draws.mean(axis=0)
    assert np.all(np.abs(mean - np.sqrt(ab) * x0) <= 0.02 * np.abs(np.sqrt(ab) * x0))
    # every entry shares one variance, so pool the 10,000 draws of each entry
    var = np.mean((draws - mean) ** 2)
    assert abs(var - (1 - ab)) <= 0.02 * (1 - ab)


# -- reverse rules -----------------------------------------------------------
def test_reverse_examples():
    sched = schedule_from_betas([0.05, 0.1])
    out = reverse_step(np.array([1.0]), np.array([0.5]), 2, sched, "paper-literal", z=np.array([9.0]))
    assert out[0] == pytest.approx(0.95 / 0.9, abs=1e-12)
    tiny = schedule_from_betas([1e-12, 1e-12])
    x = np.array([0.3, -2.0])
    assert np.allclose(reverse_step(x, np.zeros(2), 2, tiny, z=np.zeros(2)), x, atol=1e-9)
    with pytest.raises(ValueError):
        reverse_step(x, x, 3, tiny)
    with pytest.raises(ValueError):
        reverse_step(x, x, 1, tiny, rule="other")


def test_standard_rule_inverts_at_step_one():
    sched = cosine_schedule(50)
    rng = np.random.default_rng(1)
    x0, eps = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    x1 = forward_sample(x0, 1, eps, sched)
    assert np.allclose(reverse_step(x1, eps, 1, sched, z=rng.normal(size=(4, 3))), x0, atol=1e-9)


def test_ddim_plan():
    assert ddim_plan(100, 4) == [100, 67, 34, 1]
    assert ddim_plan(7, 7) == list(range(7, 0, -1))
    assert ddim_plan(10, 1) == [10]
    for K in range(1, 40):
        for steps in range(1, K + 1):
            plan = ddim_plan(K, steps)
            assert plan[0] == K and plan[-1] >= 1 and len(plan) == steps
            assert all(a > b for a, b in zip(plan, plan[1:]))
    with pytest.raises(ValueError):
        ddim_plan(5, 6)


def test_ddim_full_plan_equals_ddpm_mean():
    sched = cosine_schedule(30)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 2))
    w = rng.normal(size=(2, 2))
    a, b = x.copy(), x.copy()
    plan = ddim_plan(30, 30)
    for k, kp in zip(plan, plan[1:] + [0]):
        a = ddim_step(a, np.tanh(a @ w), k, kp, sched, eta=1.0)
        b = reverse_step(b, np.tanh(b @ w), k, sched)
    assert np.allclose(a, b, atol=1e-9)


# -- completion ------------------------------------------------------------
def completion_setup(H, F, seed=0):
    rng = np.random.default_rng(seed)
    n1 = H + F
    return rng, build_basis(n1, n1), rng.normal(size=(2, n1, 3, 3)), rng.normal(size=(2, n1, 3, 3))


def test_completion_mask_identities():
    rng, basis, x_hat, hist = completion_setup(5, 0)
    assert np.allclose(complete(x_hat, hist, InpaintMask(5, 0), basis), hist, atol=1e-12)
    rng, basis, x_hat, hist = completion_setup(0, 5)
    assert np.allclose(complete(x_hat, hist, InpaintMask(0, 5), basis), x_hat, atol=1e-12)
    H, F = 4, 6
    rng, basis, x_hat, hist = completion_setup(H, F, 1)
    sched = cosine_schedule(20)
    out = dct_completion(x_hat, hist, InpaintMask(H, F), 7, sched, np.random.default_rng(3), basis)
    noised = noise_history(hist, 7, sched, np.random.default_rng(3).standard_normal(hist.shape))
    assert np.allclose(idct(out, basis, axis=-3)[:, :H], idct(noised, basis, axis=-3)[:, :H], atol=1e-9)
    assert np.allclose(idct(out, basis, axis=-3)[:, H:], idct(x_hat, basis, axis=-3)[:, H:], atol=1e-9)
    assert np.array_equal(noise_history(hist, 0, sched, np.ones_like(hist)), hist)


def test_history_preserved_at_every_step():
    H, F, J = 4, 6, 3
    n1 = H + F
    rng = np.random.default_rng(4)
    basis = build_basis(n1, n1)
    hist = history_coeffs(rng.normal(size=(2, H, J, 3)), F, n1)
    seen = []

    def check(k, state, noised):
        gap = np.abs(idct(state, basis, axis=-3)[:, :H] - idct(noised, basis, axis=-3)[:, :H]).max()
        seen.append((k, gap))

    for mode in ("ddpm", "ddim"):
        seen.clear()
        rngs = [np.random.default_rng([5, b]) for b in range(2)]
        reverse_sample(lambda x, k, c: 0.3 * x, hist, None, cosine_schedule(20),
                       SamplerConfig(mode=mode, ddim_steps=6), InpaintMask(H, F), rngs, callback=check)
        assert seen[-1][0] == 0 and len(seen) == (21 if mode == "ddpm" else 7)
        assert max(g for _, g in seen) <= 1e-9


@pytest.mark.parametrize("mode", ["ddpm", "ddim"])
def test_oracle_model_recovers_target(mode):
    H, F, J = 4, 6, 3
    n1 = H + F
    rng = np.random.default_rng(6)
    basis = build_basis(n1, n1)
    target_time = rng.normal(size=(1, n1, J, 3))
    target = dct(target_time, basis, axis=-3)
    hist = history_coeffs(target_time[:, :H], F, n1)
    sched = cosine_schedule(40)

    def oracle(x, k, c):
        ab = sched.alpha_bar[k].reshape(-1, 1, 1, 1)
        return (x - np.sqrt(ab) * target) / np.sqrt(1 - ab)

    out = reverse_sample(oracle, hist, None, sched, SamplerConfig(mode=mode, ddim_steps=9),
                         InpaintMask(H, F), [np.random.default_rng(7)])
    assert np.allclose(idct(out, basis, axis=-3)[:, H:], target_time[:, H:], atol=1e-6)


# -- training objective -----------------------------------------------------
def test_loss_zero_for_perfect_model_and_zero_model_expectation():
    sched = cosine_schedule(100)
    n1, J = 5, 4
    x0 = np.random.default_rng(8).normal(size=(1, n1, J, 3))

    def perfect(xk, k):
        ab = sched.alpha_bar[k].reshape(-1, 1, 1, 1)
        return Tensor((xk - np.sqrt(ab) * x0) / np.sqrt(1 - ab))

    assert training_loss(perfect, x0, sched, np.random.default_rng(9)).item() == pytest.approx(0, abs=1e-18)
    rng = np.random.default_rng(10)
    zero = lambda xk, k: Tensor(np.zeros_like(xk))
    losses = [training_loss(zero, x0, sched, rng).item() for _ in range(1000)]
    assert abs(np.mean(losses) - n1 * J * 3) <= 0.05 * n1 * J * 3


def test_training_step_joint_permutation_invariant():
    cfg = GstConfig(n1=4, joints=5, d_model=8, blocks=2, heads=2, d_cond=8, K=30)
    model = MotionDiffuser(cfg, seed=1)
    rng = np.random.default_rng(11)
    for p in model.parameters():
        p.data = rng.normal(scale=0.3, size=p.shape)
    x0 = rng.normal(size=(cfg.n1, cfg.joints, 3))
    cond = rng.normal(size=(cfg.joints, cfg.d_cond))
    sched = cosine_schedule(cfg.K)
    base = training_step(model.gst, x0, Tensor(cond), sched, seed=3).item()
    assert all(p.grad is not None for p in model.gst.parameters())
    perm = rng.permutation(cfg.joints)
    # noise is drawn in joint order, so replay the stream and permute it too
    rs = np.random.default_rng(3)
    k = rs.integers(1, sched.K + 1, size=1)
    eps = rs.standard_normal((1, *x0.shape))

    def loss(x, c, e):
        ab = sched.alpha_bar[k].reshape(-1, 1, 1, 1)
        xk = np.sqrt(ab) * x[None] + np.sqrt(1 - ab) * e
        return float(((model.gst(xk, k, c[None]).data - e) ** 2).sum())

    assert loss(x0, cond, eps) == pytest.approx(base, rel=1e-12)
    # joint-indexed parameters follow the token order
    model.gst.pos.data = model.gst.pos.data[:, perm]
    for blk in model.gst.f_layers:
        d = cfg.d_model
        cols = np.arange(2 * cfg.joints * d).reshape(2, cfg.joints, d)[:, perm].reshape(-1)
        blk.film.fc2.weight.data = blk.film.fc2.weight.data[:, cols]
        blk.film.fc2.bias.data = blk.film.fc2.bias.data[cols]
    assert loss(x0[:, perm], cond[perm], eps[:, :, perm]) == pytest.approx(base, rel=1e-10)


# -- sampling through the model stack ---------------------------------------
def tiny_stack():
    poses, radar = [], []
    for i in range(2):
        p = generate_motion(random_actor(np.random.default_rng([3, i])), 30, 15.0, seed=i)
        poses.append(p)
        radar.append(simulate_radar(p, RadarConfig(), seed=i))
    pcfg = PipelineConfig(H=4, F=4, thre=0.0, split=1.0)
    samples, _ = build_dataset(poses, radar, pcfg)
    samples = samples[:3]
    fcfg = FdmConfig(H=4, n2=2, feat_dim=16, anchors=4, neighbors=8, layers=1, heads=2)
    rng = np.random.default_rng(0)
    fdm = FrequencyMotionNet(fcfg, rng)
    est = LearnedPoseEstimator(fcfg.joints, 16, 4, 8, rng)
    model = MotionDiffuser(GstConfig(n1=8, d_model=8, blocks=2, heads=2, d_cond=8, K=20), seed=0)
    return samples, fcfg, fdm, est, model


def predict(samples, fcfg, fdm, est, model, n_hyp=2):
    hist = estimate_histories(samples, sample_features(samples, fcfg), fdm, est, 4, 8)
    return sample_futures(model, [s.sample_id for s in samples], hist, 4, 4, cosine_schedule(20),
                          SamplerConfig(ddim_steps=5), n_hyp, clamp=False)


def test_sampling_shapes_determinism_and_taint():
    samples, fcfg, fdm, est, model = tiny_stack()
    a = predict(samples, fcfg, fdm, est, model)
    for s in samples:
        assert len(a[s.sample_id]) == 2
        assert all(f.shape == (4, 17, 3) for f in a[s.sample_id])
        assert not np.array_equal(a[s.sample_id][0], a[s.sample_id][1])
    b = predict(samples, fcfg, fdm, est, model)
    assert all(np.array_equal(x, y) for s in samples for x, y in zip(a[s.sample_id], b[s.sample_id]))
    tainted = copy.deepcopy(samples)
    for s in tainted:
        s.gt_future.frames[:] = 1e3
    c = predict(tainted, fcfg, fdm, est, model)
    assert all(np.array_equal(x, y) for s in samples for x, y in zip(a[s.sample_id], c[s.sample_id]))
    one = predict(samples[:1], fcfg, fdm, est, model, n_hyp=1)
    assert np.array_equal(one[samples[0].sample_id][0], a[samples[0].sample_id][0])


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(mode="euler")
    with pytest.raises(ValueError):
        SamplerConfig(reverse_rule="other")
