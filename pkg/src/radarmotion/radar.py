"""Synthetic mmWave sensing.

Three layers:

* FMCW measurement geometry (range, Doppler velocity, arrival angles, and the
  spherical-to-Cartesian mapping of detections);
* a parametric skeletal motion generator that stands in for motion capture;
* a point-cloud noise model: points along visible limbs, Gaussian position
  noise, per-part miss-detections and mirror-image ghost points.

The radar sits at the origin looking along +y with z up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import PoseSequence
from .skeleton import JOINT_NAMES, LIMBS, NUM_JOINTS, PARENTS, REST_OFFSETS

SPEED_OF_LIGHT = 2.998e8


class MeasurementError(ValueError):
    pass


@dataclass
class RadarConfig:
    wavelength: float = 0.0039  # 77 GHz
    chirp_duration: float = 1e-4
    bandwidth: float = 1e9
    speed_of_light: float = SPEED_OF_LIGHT
    points_per_segment: int = 3
    dropout: float = 0.1
    dropout_correlation: float = 0.0
    ghost_rate: float = 0.05
    noise_std: float = 0.03
    ghost_noise_std: float = 0.05
    wall_x: float = 2.5

    def __post_init__(self):
        if min(self.wavelength, self.chirp_duration, self.bandwidth) <= 0:
            raise ValueError("wavelength, chirp duration and bandwidth must be positive")
        for name in ("dropout", "dropout_correlation", "ghost_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_std < 0 or self.ghost_noise_std < 0:
            raise ValueError("noise scales must be non-negative")


@dataclass
class RadarFrame:
    """Points as an ``(n, 6)`` array of ``x, y, z, v, E, A``; rows from
    ``valid_count`` on are zero padding."""

    points: np.ndarray
    timestamp: int = 0
    valid_count: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 6)
        if self.valid_count is None:
            self.valid_count = len(self.points)
        if self.valid_count > len(self.points):
            raise ValueError("valid_count exceeds the number of points")

    @property
    def valid(self) -> np.ndarray:
        return self.points[: self.valid_count]


# -- measurement geometry ---------------------------------------------------
def range_from_frequency(f: float, cfg: RadarConfig) -> float:
    if f < 0:
        raise ValueError("beat frequency must be non-negative")
    return cfg.speed_of_light * f * cfg.chirp_duration / (2.0 * cfg.bandwidth)


def velocity_from_phase(omega: float, cfg: RadarConfig) -> float:
    return cfg.wavelength * omega / (4.0 * math.pi * cfg.chirp_duration)


def angles_from_phase(omega_x: float, omega_z: float) -> tuple[float, float]:
    """Return ``(azimuth, elevation)`` from inter-antenna phase differences."""
    s_el = omega_z / math.pi
    if abs(s_el) > 1.0:
        raise MeasurementError(f"elevation phase {omega_z} outside [-pi, pi]")
    elevation = math.asin(s_el)
    c = math.cos(elevation) * math.pi
    if c < 1e-15:
        if omega_x != 0.0:
            raise MeasurementError("azimuth undefined at +-90 degrees elevation")
        return 0.0, elevation
    s_az = omega_x / c
    if abs(s_az) > 1.0:
        raise MeasurementError(f"azimuth phase {omega_x} outside the valid domain")
    return math.asin(s_az), elevation


def point_from_measurables(r: float, azimuth: float, elevation: float) -> tuple[float, float, float]:
    x = r * math.cos(elevation) * math.sin(azimuth)
    z = r * math.sin(elevation)
    y = math.sqrt(max(r * r - x * x - z * z, 0.0))
    return x, y, z


def measurables_from_point(x: float, y: float, z: float) -> tuple[float, float, float]:
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        return 0.0, 0.0, 0.0
    return r, math.atan2(x, y), math.asin(max(-1.0, min(1.0, z / r)))


# -- motion generator -------------------------------------------------------
@dataclass
class SyntheticActor:
    """Gait parameters: joint ``j`` rotates about each local axis ``a`` by
    ``amp[j, a] * sin(2*pi*freq[j]*t + phase[j, a])`` (radians)."""

    scale: float = 1.0
    freq: np.ndarray = field(default_factory=lambda: np.zeros(NUM_JOINTS))
    amp: np.ndarray = field(default_factory=lambda: np.zeros((NUM_JOINTS, 3)))
    phase: np.ndarray = field(default_factory=lambda: np.zeros((NUM_JOINTS, 3)))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    start: np.ndarray = field(default_factory=lambda: np.array([0.0, 3.5, 0.95]))
    heading: float = 0.0
    parents: tuple[int, ...] = PARENTS

    def __post_init__(self):
        for name in ("freq", "amp", "phase", "velocity", "start"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.parents[0] != -1 or any(p >= j for j, p in enumerate(self.parents) if j):
            raise ValueError("limb graph must be a tree rooted at joint 0 in topological order")
        if self.scale <= 0:
            raise ValueError("rest limb lengths must be positive")


def random_actor(rng: np.random.Generator) -> SyntheticActor:
    """A walking/arm-swinging actor with coupled limb phases."""
    base = rng.uniform(0.6, 1.1)
    phi = rng.uniform(0, 2 * np.pi)
    leg = rng.uniform(0.35, 0.6)
    arm = rng.uniform(0.4, 0.9)
    freq = np.full(NUM_JOINTS, base)
    amp = np.zeros((NUM_JOINTS, 3))
    phase = np.zeros((NUM_JOINTS, 3))
    # hips swing in anti-phase, knees flex with a lag
    amp[1, 0], phase[1, 0] = leg, phi
    amp[4, 0], phase[4, 0] = leg, phi + np.pi
    amp[2, 0], phase[2, 0] = 0.6 * leg, phi - np.pi / 2
    amp[5, 0], phase[5, 0] = 0.6 * leg, phi + np.pi / 2
    # arms counter-swing the legs, elbows follow
    amp[11, 0], phase[11, 0] = arm, phi
    amp[14, 0], phase[14, 0] = arm, phi + np.pi
    amp[11, 1], phase[11, 1] = 0.3 * arm, phi + np.pi / 2
    amp[14, 1], phase[14, 1] = 0.3 * arm, phi - np.pi / 2
    amp[12, 0], phase[12, 0] = 0.7 * arm, phi + np.pi / 3
    amp[15, 0], phase[15, 0] = 0.7 * arm, phi + np.pi + np.pi / 3
    # torso twist and head nod
    amp[7, 2], phase[7, 2] = rng.uniform(0.05, 0.2), phi
    amp[9, 0], phase[9, 0] = rng.uniform(0.05, 0.15), 2 * phi
    heading = rng.uniform(-np.pi, np.pi)
    speed = rng.uniform(0.0, 0.4)
    velocity = np.array([speed * np.cos(heading), speed * np.sin(heading), 0.0])
    start = np.array([rng.uniform(-0.5, 0.5), rng.uniform(3.0, 4.0), 0.95])
    return SyntheticActor(scale=rng.uniform(0.9, 1.1), freq=freq, amp=amp, phase=phase,
                          velocity=velocity, start=start, heading=heading)


def _rot(axis: int, ang: np.ndarray) -> np.ndarray:
    c, s = np.cos(ang), np.sin(ang)
    r = np.zeros(ang.shape + (3, 3))
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    r[..., axis, axis] = 1.0
    r[..., i, i] = c
    r[..., j, j] = c
    r[..., i, j] = -s
    r[..., j, i] = s
    return r


def generate_motion(actor: SyntheticActor, n_frames: int, fps: float, seed: int = 0) -> PoseSequence:
    """Forward kinematics of the actor's gait; ``seed`` jitters the start time."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(0.0, 10.0)
    t = t0 + np.arange(n_frames) / fps
    offsets = actor.scale * REST_OFFSETS
    ang = actor.amp[None] * np.sin(2 * np.pi * actor.freq[None, :, None] * t[:, None, None]
                                   + actor.phase[None])
    local = _rot(0, ang[..., 0]) @ _rot(1, ang[..., 1]) @ _rot(2, ang[..., 2])  # (T, J, 3, 3)
    glob = np.empty_like(local)
    pos = np.empty((n_frames, len(actor.parents), 3))
    yaw = _rot(2, np.full(n_frames, actor.heading))
    glob[:, 0] = yaw @ local[:, 0]
    pos[:, 0] = actor.start + (t - t0)[:, None] * actor.velocity
    for j in range(1, len(actor.parents)):
        p = actor.parents[j]
        pos[:, j] = pos[:, p] + glob[:, p] @ offsets[j]
        glob[:, j] = glob[:, p] @ local[:, j]
    return PoseSequence(pos, frame_rate=fps, joint_schema=JOINT_NAMES[: len(actor.parents)])


# -- point-cloud noise model ------------------------------------------------
def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for ``(seed, index)`` regardless of evaluation order."""
    return np.random.default_rng([int(seed), int(index)])


def dropout_mask(n_frames: int, n_parts: int, p: float, correlation: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Boolean ``(T, parts)`` miss-detection mask from a two-state Markov chain
    with stationary drop probability ``p``."""
    stay = p + correlation * (1.0 - p)
    enter = p * (1.0 - correlation)
    u = rng.random((n_frames, n_parts))
    mask = np.empty((n_frames, n_parts), dtype=bool)
    mask[0] = u[0] < p
    for i in range(1, n_frames):
        mask[i] = np.where(mask[i - 1], u[i] < stay, u[i] < enter)
    return mask


def joint_velocities(frames: np.ndarray, fps: float) -> np.ndarray:
    v = np.zeros_like(frames)
    if len(frames) > 1:
        v[1:] = (frames[1:] - frames[:-1]) * fps
        v[0] = v[1]
    return v


def simulate_radar(gt: PoseSequence, cfg: RadarConfig, seed: int = 0,
                   limbs=LIMBS) -> list[RadarFrame]:
    frames = gt.frames
    n_frames = len(frames)
    if n_frames < 1:
        raise ValueError("empty ground truth")
    rng = np.random.default_rng(seed)
    limbs = np.asarray(limbs)
    n_parts = len(limbs)
    drop = dropout_mask(n_frames, n_parts, cfg.dropout, cfg.dropout_correlation, rng)
    vel = joint_velocities(frames, gt.frame_rate)
    k = cfg.points_per_segment
    out = []
    for i in range(n_frames):
        a, b = frames[i, limbs[:, 0]], frames[i, limbs[:, 1]]
        va, vb = vel[i, limbs[:, 0]], vel[i, limbs[:, 1]]
        u = rng.random((n_parts, k, 1))
        clean = a[:, None] + u * (b - a)[:, None]
        pvel = va[:, None] + u * (vb - va)[:, None]
        noise = rng.normal(0.0, 1.0, clean.shape) * cfg.noise_std
        energy = rng.lognormal(0.0, 0.5, (n_parts, k))
        amplitude = rng.lognormal(0.0, 0.5, (n_parts, k))
        keep = ~drop[i]
        clean, pvel = clean[keep].reshape(-1, 3), pvel[keep].reshape(-1, 3)
        noise = noise[keep].reshape(-1, 3)
        energy, amplitude = energy[keep].ravel(), amplitude[keep].ravel()
        los = clean / np.maximum(np.linalg.norm(clean, axis=1, keepdims=True), 1e-12)
        radial = np.sum(pvel * los, axis=1)
        pts = np.column_stack([clean + noise, radial, energy, amplitude])
        ghost = rng.random(len(pts)) < cfg.ghost_rate
        if np.any(ghost):
            g = pts[ghost].copy()
            g[:, 0] = 2.0 * cfg.wall_x - g[:, 0]
            g[:, :3] += rng.normal(0.0, cfg.ghost_noise_std, (len(g), 3))
            g[:, 4:] *= 0.5
            pts = np.concatenate([pts, g])
        out.append(RadarFrame(pts, timestamp=i, valid_count=len(pts)))
    return out

