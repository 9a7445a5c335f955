"""Trajectory error metrics: ATE, RPE and KITTI-style drift.

Trajectories hold camera-to-world poses as stacked arrays so the metrics
can be evaluated without per-pose object overhead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateAlignmentError,
    EmptyOverlapError,
    InsufficientLengthError,
    PathTooShortError,
)
from .geometry import PoseSE3

DEFAULT_MAX_DT = 0.02
DEFAULT_RPE_DELTA = 1
DEFAULT_KITTI_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        R = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        p = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        if not (len(t) == len(R) == len(p)):
            raise ValueError("timestamps, rotations and translations differ in length")
        if len(t) < 1:
            raise ValueError("a trajectory needs at least one pose")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "rotations", R)
        object.__setattr__(self, "translations", p)

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_poses(cls, timestamps, poses: Sequence[PoseSE3]) -> Trajectory:
        return cls(
            timestamps,
            np.stack([p.rotation for p in poses]),
            np.stack([p.translation for p in poses]),
        )

    def pose(self, i: int) -> PoseSE3:
        return PoseSE3(self.rotations[i], self.translations[i])

    def poses(self) -> list[PoseSE3]:
        return [self.pose(i) for i in range(len(self))]

    def subset(self, index) -> Trajectory:
        return Trajectory(self.timestamps[index], self.rotations[index], self.translations[index])

    def transformed(self, pose: PoseSE3, scale: float = 1.0) -> Trajectory:
        """Left-compose every pose with ``pose``; translations optionally scaled first."""
        R = np.einsum("ij,njk->nik", pose.rotation, self.rotations)
        p = scale * self.translations @ pose.rotation.T + pose.translation
        return Trajectory(self.timestamps, R, p)


@dataclass(frozen=True, eq=False)
class PosePairs:
    """Associated poses: ``est[i]`` pairs with ``ref[i]``."""

    est: Trajectory
    ref: Trajectory

    def __len__(self):
        return len(self.est)


@dataclass(frozen=True, eq=False)
class Alignment:
    pose: PoseSE3 = field(default_factory=PoseSE3)
    scale: float = 1.0

    def apply(self, traj: Trajectory) -> Trajectory:
        return traj.transformed(self.pose, self.scale)


@dataclass(frozen=True)
class MetricsReport:
    ate_rmse: float
    rpe_trans: float
    rpe_rot: float
    kitti_trans: float
    kitti_rot: float
    num_pairs: int
    alignment: Alignment = field(default_factory=Alignment, compare=False)

    def as_dict(self) -> dict:
        return {
            "ate_rmse": self.ate_rmse,
            "rpe_trans": self.rpe_trans,
            "rpe_rot": self.rpe_rot,
            "kitti_trans": self.kitti_trans,
            "kitti_rot": self.kitti_rot,
            "num_pairs": self.num_pairs,
            "alignment_rotation": self.alignment.pose.rotation.tolist(),
            "alignment_translation": self.alignment.pose.translation.tolist(),
            "alignment_scale": self.alignment.scale,
        }


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of one or many rotation matrices, in radians.

    Uses atan2(|skew part|, trace part) rather than arccos of the trace,
    which loses half the significant digits near zero.
    """
    R = np.asarray(R, dtype=np.float64)
    s = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    sin_part = 0.5 * np.linalg.norm(s, axis=-1)
    cos_part = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(sin_part, np.clip(cos_part, -1.0, 1.0))


def associate(est: Trajectory, ref: Trajectory, max_dt: float = DEFAULT_MAX_DT) -> PosePairs:
    """Greedy nearest-timestamp matching, each pose used at most once."""
    if max_dt < 0:
        raise ValueError(f"max_dt must be >= 0, got {max_dt}")
    te, tr = est.timestamps, ref.timestamps
    lo = np.searchsorted(tr, te - max_dt, side="left")
    hi = np.searchsorted(tr, te + max_dt, side="right")
    counts = hi - lo
    ei = np.repeat(np.arange(len(te)), counts)
    ri = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)]) if counts.sum() else np.empty(0, int)
    ri = ri.astype(np.int64)
    dt = np.abs(te[ei] - tr[ri])
    keep = dt <= max_dt
    ei, ri, dt = ei[keep], ri[keep], dt[keep]

    used_e = np.zeros(len(te), dtype=bool)
    used_r = np.zeros(len(tr), dtype=bool)
    chosen = []
    for n in np.lexsort((ri, ei, dt)):
        a, b = ei[n], ri[n]
        if not used_e[a] and not used_r[b]:
            used_e[a] = used_r[b] = True
            chosen.append((a, b))
    if not chosen:
        raise EmptyOverlapError(f"no timestamp pairs within max_dt={max_dt}")
    chosen.sort()
    e_idx = np.array([a for a, _ in chosen])
    r_idx = np.array([b for _, b in chosen])
    return PosePairs(est.subset(e_idx), ref.subset(r_idx))


def align_rigid(pairs: PosePairs, with_scale: bool = False) -> Alignment:
    """Closed-form least-squares alignment of estimated onto reference positions.

    Returns the transform T (and scale s) minimising
    sum ||s * R @ est_i + t - ref_i||**2.
    """
    x = pairs.est.translations
    y = pairs.ref.translations
    n = len(x)
    if n < 3:
        raise DegenerateAlignmentError(f"alignment needs at least 3 pose pairs, got {n}")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    dx, dy = x - mx, y - my
    spread = np.linalg.svd(dx, compute_uv=False)
    if spread[1] <= 1e-9 * max(spread[0], 1e-300):
        raise DegenerateAlignmentError("estimated positions are collinear; rotation is not unique")

    cov = dy.T @ dx / n
    U, d, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = 1.0
    if with_scale:
        var_x = (dx * dx).sum() / n
        scale = float((d * np.diag(S)).sum() / var_x)
    t = my - scale * R @ mx
    return Alignment(PoseSE3(R, t), scale)


def ate_rmse(
    est: Trajectory,
    ref: Trajectory,
    max_dt: float = DEFAULT_MAX_DT,
    with_scale: bool = False,
    pairs: Optional[PosePairs] = None,
) -> float:
    return _ate(pairs or associate(est, ref, max_dt), with_scale)[0]


def _ate(pairs: PosePairs, with_scale: bool) -> tuple[float, Alignment]:
    alignment = align_rigid(pairs, with_scale)
    aligned = alignment.scale * pairs.est.translations @ alignment.pose.rotation.T + alignment.pose.translation
    residual = aligned - pairs.ref.translations
    return float(np.sqrt(np.mean(np.sum(residual * residual, axis=1)))), alignment


def _relative(traj: Trajectory, i: np.ndarray, j: np.ndarray):
    """Rotation and translation of inv(T_i) @ T_j for index arrays i, j."""
    Ri_t = np.transpose(traj.rotations[i], (0, 2, 1))
    R = Ri_t @ traj.rotations[j]
    t = np.einsum("nij,nj->ni", Ri_t, traj.translations[j] - traj.translations[i])
    return R, t


def _relative_errors(pairs: PosePairs, i: np.ndarray, j: np.ndarray):
    """Translation norm and rotation angle of inv(ref_rel) @ est_rel."""
    Rr, tr = _relative(pairs.ref, i, j)
    Re, te = _relative(pairs.est, i, j)
    Rr_t = np.transpose(Rr, (0, 2, 1))
    R_err = Rr_t @ Re
    t_err = np.einsum("nij,nj->ni", Rr_t, te - tr)
    return np.linalg.norm(t_err, axis=1), rotation_angle(R_err)


def rpe(
    est: Trajectory,
    ref: Trajectory,
    delta: int = DEFAULT_RPE_DELTA,
    max_dt: float = DEFAULT_MAX_DT,
    pairs: Optional[PosePairs] = None,
) -> tuple[float, float]:
    """RMSE of relative-pose translation (m) and rotation (rad) errors over ``delta`` frames."""
    if delta < 1:
        raise ValueError(f"delta must be >= 1, got {delta}")
    pairs = pairs or associate(est, ref, max_dt)
    n = len(pairs)
    if n < delta + 1:
        raise InsufficientLengthError(f"RPE with delta={delta} needs {delta + 1} pose pairs, got {n}")
    i = np.arange(n - delta)
    trans, rot = _relative_errors(pairs, i, i + delta)
    return float(np.sqrt(np.mean(trans**2))), float(np.sqrt(np.mean(rot**2)))


def path_distances(translations: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(translations, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def kitti_errors(
    est: Trajectory,
    ref: Trajectory,
    lengths: Sequence[float] = DEFAULT_KITTI_LENGTHS,
    max_dt: float = DEFAULT_MAX_DT,
    pairs: Optional[PosePairs] = None,
) -> tuple[float, float]:
    """Mean translational drift ratio and rotational drift (rad/m) over fixed path lengths.

    For each start pose and length L the segment ends at the first pose whose
    reference arc length from the start reaches L.
    """
    pairs = pairs or associate(est, ref, max_dt)
    dist = path_distances(pairs.ref.translations)
    starts, ends, norm = [], [], []
    for L in lengths:
        if not L > 0:
            raise ValueError(f"segment lengths must be positive, got {L}")
        # small slack so cumulative-sum roundoff does not skip an exact hit
        target = dist + L - 1e-9 * max(L, 1.0)
        j = np.searchsorted(dist, target, side="left")
        ok = np.flatnonzero(j < len(dist))
        starts.append(ok)
        ends.append(j[ok])
        norm.append(np.full(len(ok), float(L)))
    i = np.concatenate(starts)
    j = np.concatenate(ends)
    L = np.concatenate(norm)
    if len(i) == 0:
        raise PathTooShortError(
            f"reference path ({dist[-1]:.3f} m) is shorter than every segment length {list(lengths)}"
        )
    trans, rot = _relative_errors(pairs, i, j)
    return float(np.mean(trans / L)), float(np.mean(rot / L))


def evaluate(
    est: Trajectory,
    ref: Trajectory,
    *,
    max_dt: float = DEFAULT_MAX_DT,
    delta: int = DEFAULT_RPE_DELTA,
    lengths: Sequence[float] = DEFAULT_KITTI_LENGTHS,
    with_scale: bool = False,
) -> MetricsReport:
    pairs = associate(est, ref, max_dt)
    ate, alignment = _ate(pairs, with_scale)
    rpe_t, rpe_r = rpe(est, ref, delta, pairs=pairs)
    kitti_t, kitti_r = kitti_errors(est, ref, lengths, pairs=pairs)
    return MetricsReport(ate, rpe_t, rpe_r, kitti_t, kitti_r, len(pairs), alignment)
