"""Collision queries between finger link capsules, a cuboid object and the
ground plane.

Box distances are exact up to a bracketed interval search: the signed
distance from a point to a convex box is convex, so its restriction to a
segment is unimodal and a coarse grid plus ternary refinement finds the
minimum reliably. All queries are batched over capsules for speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CuboidShape, Pose
from .robot import RobotModel, finger_capsules

TIP_LINK = 2

_GRID = np.linspace(0.0, 1.0, 17)


def point_box_signed_distance(p: np.ndarray, half_extents: np.ndarray) -> float:
    """Signed distance from a point to an origin-centered box (negative inside)."""
    q = np.abs(p) - half_extents
    outside = float(np.linalg.norm(np.maximum(q, 0.0)))
    inside = float(min(max(q[0], q[1], q[2]), 0.0))
    return outside + inside


def _points_box_sdf(pts: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Batched box signed distance for points of shape (..., 3)."""
    q = np.abs(pts) - h
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def segments_box_signed_distance(
    p0: np.ndarray, p1: np.ndarray, shape: CuboidShape, box_pose: Pose
) -> np.ndarray:
    """Minimum signed distance from each segment (rows) to an oriented box."""
    r = box_pose.rotation_matrix()
    a = (np.atleast_2d(p0) - box_pose.position) @ r
    b = (np.atleast_2d(p1) - box_pose.position) @ r
    h = shape.half_extents
    d = b - a

    pts = a[:, None, :] + _GRID[None, :, None] * d[:, None, :]
    vals = _points_box_sdf(pts, h)
    k = np.argmin(vals, axis=1)
    best = vals[np.arange(len(a)), k]
    lo = np.clip(_GRID[np.maximum(k - 1, 0)], 0.0, 1.0)
    hi = np.clip(_GRID[np.minimum(k + 1, len(_GRID) - 1)], 0.0, 1.0)
    for _ in range(24):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        v1 = _points_box_sdf(a + m1[:, None] * d, h)
        v2 = _points_box_sdf(a + m2[:, None] * d, h)
        take_hi = v1 <= v2
        hi = np.where(take_hi, m2, hi)
        lo = np.where(take_hi, lo, m1)
    t = 0.5 * (lo + hi)
    refined = _points_box_sdf(a + t[:, None] * d, h)
    return np.minimum(best, refined)


def segment_box_signed_distance(
    p0: np.ndarray, p1: np.ndarray, shape: CuboidShape, box_pose: Pose
) -> float:
    return float(segments_box_signed_distance(p0, p1, shape, box_pose)[0])


def segments_pairwise_distance(p0, p1, q0, q1) -> np.ndarray:
    """Minimum distance between segment pairs (clamped closest points).

    All inputs are (N, 3) arrays; returns the N pairwise distances.
    """
    p0, p1 = np.atleast_2d(p0), np.atleast_2d(p1)
    q0, q1 = np.atleast_2d(q0), np.atleast_2d(q1)
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b

    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-18, np.clip((b * f - c * e) / np.where(denom > 1e-18, denom, 1.0), 0.0, 1.0), 0.0)
        t = np.where(e > 1e-18, (b * s + f) / np.where(e > 1e-18, e, 1.0), 0.0)
        s_low = np.where(a > 1e-18, np.clip(-c / np.where(a > 1e-18, a, 1.0), 0.0, 1.0), 0.0)
        s_high = np.where(a > 1e-18, np.clip((b - c) / np.where(a > 1e-18, a, 1.0), 0.0, 1.0), 0.0)
    s = np.where(t < 0.0, s_low, np.where(t > 1.0, s_high, s))
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments collapse to their endpoints
    s = np.where(a > 1e-18, s, 0.0)
    t = np.where(e > 1e-18, t, 0.0)
    closest1 = p0 + s[:, None] * d1
    closest2 = q0 + t[:, None] * d2
    return np.linalg.norm(closest1 - closest2, axis=1)


def segment_segment_distance(p0, p1, q0, q1) -> float:
    return float(segments_pairwise_distance(p0, p1, q0, q1)[0])


@dataclass
class CollisionOptions:
    exclude_tip_links: bool = False   # skip tip links in finger-object checks
    margin: float = 0.0               # extra clearance required everywhere


@dataclass
class Contact:
    kind: str                         # "object" | "finger" | "ground"
    finger: int
    link: int
    other_finger: int = -1
    other_link: int = -1
    depth: float = 0.0                # positive = violation amount


@dataclass
class CollisionReport:
    contacts: list[Contact] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.contacts

    def kinds(self) -> set[str]:
        return {c.kind for c in self.contacts}


def check_collision(
    model: RobotModel,
    angles: np.ndarray,
    shape: CuboidShape | None,
    object_pose: Pose | None,
    options: CollisionOptions | None = None,
) -> CollisionReport:
    """Finger-vs-object, finger-vs-finger and ground-penetration report.

    Tip links may be excluded from the object check (they are meant to make
    contact). Against the ground, non-tip capsules must keep their full
    radius of clearance while tip links only need their centerline above the
    plane: the spherical tip is allowed to roll on the floor when pinching
    low objects.
    """
    options = options or CollisionOptions()
    caps = finger_capsules(model, angles)
    fingers = np.array([c[0] for c in caps])
    links = np.array([c[1] for c in caps])
    p0 = np.array([c[2] for c in caps])
    p1 = np.array([c[3] for c in caps])
    radii = np.array([c[4] for c in caps])
    report = CollisionReport()

    if shape is not None and object_pose is not None:
        keep = links != TIP_LINK if options.exclude_tip_links else np.ones(len(caps), bool)
        if keep.any():
            d = segments_box_signed_distance(p0[keep], p1[keep], shape, object_pose) - radii[keep]
            for idx, dist in zip(np.flatnonzero(keep), d):
                if dist < options.margin:
                    report.contacts.append(
                        Contact("object", int(fingers[idx]), int(links[idx]), depth=float(options.margin - dist))
                    )

    ii, jj = np.triu_indices(len(caps), k=1)
    cross = fingers[ii] != fingers[jj]
    ii, jj = ii[cross], jj[cross]
    if len(ii):
        d = segments_pairwise_distance(p0[ii], p1[ii], p0[jj], p1[jj]) - radii[ii] - radii[jj]
        for a, bidx, dist in zip(ii, jj, d):
            if dist < options.margin:
                report.contacts.append(
                    Contact(
                        "finger",
                        int(fingers[a]),
                        int(links[a]),
                        int(fingers[bidx]),
                        int(links[bidx]),
                        depth=float(options.margin - dist),
                    )
                )

    clearance = np.where(links == TIP_LINK, 0.0, radii)
    dground = np.minimum(p0[:, 2], p1[:, 2]) - clearance
    for idx in np.flatnonzero(dground < options.margin):
        report.contacts.append(
            Contact("ground", int(fingers[idx]), int(links[idx]), depth=float(options.margin - dground[idx]))
        )

    return report
