"""The 17-keypoint body model (pelvis-rooted tree)."""
import numpy as np

JOINT_NAMES = (
    "pelvis", "right_hip", "right_knee", "right_ankle", "left_hip", "left_knee", "left_ankle",
    "spine", "thorax", "neck", "head", "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)
PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
LIMBS = tuple((p, j) for j, p in enumerate(PARENTS) if p >= 0)
NUM_JOINTS = len(JOINT_NAMES)

# bone offsets from the parent joint in the rest pose, metres; z is up
REST_OFFSETS = np.array([
    [0.0, 0.0, 0.0],
    [-0.12, 0.0, -0.05], [0.0, 0.0, -0.42], [0.0, 0.0, -0.42],
    [0.12, 0.0, -0.05], [0.0, 0.0, -0.42], [0.0, 0.0, -0.42],
    [0.0, 0.0, 0.22], [0.0, 0.0, 0.24], [0.0, 0.0, 0.10], [0.0, 0.0, 0.12],
    [0.17, 0.0, 0.0], [0.0, 0.0, -0.28], [0.0, 0.0, -0.25],
    [-0.17, 0.0, 0.0], [0.0, 0.0, -0.28], [0.0, 0.0, -0.25],
])


def rest_pose(scale: float = 1.0) -> np.ndarray:
    """Pelvis-relative rest pose, shape (17, 3)."""
    pose = np.zeros((NUM_JOINTS, 3))
    for j, p in enumerate(PARENTS):
        if p >= 0:
            pose[j] = pose[p] + scale * REST_OFFSETS[j]
    return pose


def limb_lengths(poses: np.ndarray, limbs=LIMBS) -> np.ndarray:
    """Limb lengths of ``(..., J, 3)`` poses, shape ``(..., L)``."""
    idx = np.asarray(limbs)
    return np.linalg.norm(poses[..., idx[:, 1], :] - poses[..., idx[:, 0], :], axis=-1)
