"""Contact sampling on cuboid surfaces, grasp feasibility, grasp-matrix
construction and force-closure certification under a linearized Coulomb
friction cone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .collision import CollisionOptions, CollisionReport, check_collision
from .geometry import CuboidShape, Pose, Wrench
from .robot import RobotModel, forward_kinematics, inverse_kinematics
from .simplex import SimplexError, solve_lp

log = logging.getLogger(__name__)

SURFACE_TOL = 1e-9


class MarginInfeasible(Exception):
    """The shape cannot host three sufficiently separated contacts."""


@dataclass
class ContactPoint:
    """A point on the cuboid surface with the face's inward normal.

    Both vectors are expressed in the object frame.
    """

    position: np.ndarray
    inward_normal: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.inward_normal = np.asarray(self.inward_normal, dtype=float).reshape(3)
        n = np.linalg.norm(self.inward_normal)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("inward normal must be a unit vector")


def contact_on_face(shape: CuboidShape, face: int, u: float = 0.0, v: float = 0.0) -> ContactPoint:
    """Build a contact on face index 0..5 = (+x,-x,+y,-y,+z,-z).

    (u, v) are coordinates along the two in-face axes, in meters from the
    face center.
    """
    axis, sign = face // 2, 1.0 if face % 2 == 0 else -1.0
    ua, va = (axis + 1) % 3, (axis + 2) % 3
    p = np.zeros(3)
    p[axis] = sign * shape.half_extents[axis]
    p[ua], p[va] = u, v
    normal = np.zeros(3)
    normal[axis] = -sign
    return ContactPoint(p, normal)


def contact_face(contact: ContactPoint, shape: CuboidShape) -> int:
    """Face index a contact lies on; raises if off-surface or normal mismatch."""
    h = shape.half_extents
    for face in range(6):
        axis, sign = face // 2, 1.0 if face % 2 == 0 else -1.0
        if abs(contact.position[axis] - sign * h[axis]) <= SURFACE_TOL:
            others = [a for a in range(3) if a != axis]
            if all(abs(contact.position[a]) <= h[a] + SURFACE_TOL for a in others):
                expected = np.zeros(3)
                expected[axis] = -sign
                if np.linalg.norm(contact.inward_normal - expected) <= 1e-9:
                    return face
    raise ValueError("contact does not lie on a cuboid face with a matching normal")


@dataclass
class Grasp:
    """Three surface contacts plus the finger-to-contact assignment.

    ``joints`` is filled in by the feasibility check with a realizing
    nine-DOF configuration.
    """

    contacts: list[ContactPoint]
    assignment: tuple[int, int, int] = (0, 1, 2)
    joints: np.ndarray | None = None

    def __post_init__(self):
        if len(self.contacts) != 3:
            raise ValueError("a grasp has exactly 3 contacts")
        if sorted(self.assignment) != [0, 1, 2]:
            raise ValueError("assignment must be a permutation of (0, 1, 2)")

    def contact_of_finger(self, finger: int) -> ContactPoint:
        return self.contacts[self.assignment[finger]]

    def world_contacts(self, object_pose: Pose) -> np.ndarray:
        return object_pose.transform_points(np.array([c.position for c in self.contacts]))

    def world_inward_normals(self, object_pose: Pose) -> np.ndarray:
        r = object_pose.rotation_matrix()
        return np.array([r @ c.inward_normal for c in self.contacts])

    def tip_targets(self, object_pose: Pose, tip_radius: float) -> np.ndarray:
        """World fingertip-center targets, one row per finger.

        Tips sit one fingertip radius outside the surface so the sphere
        touches the contact point.
        """
        pts = self.world_contacts(object_pose)
        nrm = self.world_inward_normals(object_pose)
        targets = np.zeros((3, 3))
        for finger in range(3):
            c = self.assignment[finger]
            targets[finger] = pts[c] - tip_radius * nrm[c]
        return targets


@dataclass
class FrictionModel:
    """Coulomb friction coefficient and pyramid linearization edge count."""

    mu: float = 0.5
    facets: int = 8

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.facets < 3:
            raise ValueError("pyramid needs at least 3 facets")


def _tangent_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(normal)))] = 1.0
    t1 = np.cross(normal, helper)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(normal, t1)


def cone_edges(normal: np.ndarray, friction: FrictionModel) -> np.ndarray:
    """Unit edge directions of the inner friction pyramid around a normal.

    Each edge is the normal tilted by atan(mu) toward one of ``facets``
    evenly spaced tangent directions; the polyhedral cone they span sits
    inside the true Coulomb cone, so certification is conservative.
    """
    t1, t2 = _tangent_basis(normal)
    edges = np.zeros((friction.facets, 3))
    for k in range(friction.facets):
        phi = 2.0 * math.pi * k / friction.facets
        e = normal + friction.mu * (math.cos(phi) * t1 + math.sin(phi) * t2)
        edges[k] = e / np.linalg.norm(e)
    return edges


def sample_contacts(
    shape: CuboidShape,
    rng: np.random.Generator,
    tip_radius: float = 0.0175,
    max_attempts: int = 200,
) -> list[ContactPoint]:
    """Three contacts sampled area-weighted over the surface.

    Contacts keep one fingertip radius of margin from face edges and are
    pairwise separated by at least a fingertip diameter. The margin shrinks
    by half once if the shape is too small, after which MarginInfeasible is
    raised.
    """
    h = shape.half_extents
    separation = 2.0 * tip_radius

    def usable(margin):
        faces = []
        for face in range(6):
            axis = face // 2
            ua, va = (axis + 1) % 3, (axis + 2) % 3
            du, dv = h[ua] - margin, h[va] - margin
            if du > 0 and dv > 0:
                faces.append((face, du, dv, 4.0 * du * dv))
        return faces

    margin = tip_radius
    faces = usable(margin)
    if not faces:
        margin = 0.5 * tip_radius
        faces = usable(margin)
        if not faces:
            raise MarginInfeasible(
                f"no face admits a {margin:.4f} m contact margin on half-extents {h}"
            )
    weights = np.array([f[3] for f in faces])
    weights = weights / weights.sum()

    def draw() -> ContactPoint:
        face, du, dv, _ = faces[rng.choice(len(faces), p=weights)]
        return contact_on_face(shape, face, rng.uniform(-du, du), rng.uniform(-dv, dv))

    for _ in range(max_attempts):
        trio = [draw() for _ in range(3)]
        pts = np.array([c.position for c in trio])
        d01 = np.linalg.norm(pts[0] - pts[1])
        d02 = np.linalg.norm(pts[0] - pts[2])
        d12 = np.linalg.norm(pts[1] - pts[2])
        if min(d01, d02, d12) >= separation:
            return trio
    raise MarginInfeasible(
        f"could not separate 3 contacts by {separation:.4f} m on half-extents {h}"
    )


def predefined_contacts(shape: CuboidShape) -> list[list[ContactPoint]]:
    """Deterministic catalog of opposing-face center pinches.

    For each of the three opposite-face pairs the two fingers pinch the
    face centers and the third finger rests on the center of one of the two
    positive adjacent faces: six sets total.
    """
    sets = []
    for axis in range(3):
        pinch = [contact_on_face(shape, 2 * axis), contact_on_face(shape, 2 * axis + 1)]
        for other in ((axis + 1) % 3, (axis + 2) % 3):
            sets.append(pinch + [contact_on_face(shape, 2 * other)])
    return sets


@dataclass
class FeasibilityResult:
    feasible: bool
    joints: np.ndarray | None = None
    reason: str = ""
    ik_failed_fingers: tuple[int, ...] = ()
    collisions: CollisionReport | None = None

    def __bool__(self) -> bool:
        return self.feasible


def grasp_feasible(
    grasp: Grasp,
    object_pose: Pose,
    model: RobotModel,
    shape: CuboidShape,
    seed: np.ndarray | None = None,
) -> FeasibilityResult:
    """Check reachability and collision-freedom of a grasp at a pose.

    Feasible iff IK succeeds for all three fingertip targets and the
    configuration is free of finger-object (tip links excluded),
    finger-finger and ground contacts. On success the realizing joints are
    stored on the grasp.
    """
    if seed is None:
        seed = grasp.joints if grasp.joints is not None else model.home_angles
    targets = grasp.tip_targets(object_pose, model.fingertip_radius)
    ik = inverse_kinematics(model, targets, seed)
    if not ik.all_ok:
        failed = tuple(f.finger for f in ik.failures)
        return FeasibilityResult(False, None, "ik", failed)
    report = check_collision(
        model, ik.angles, shape, object_pose, CollisionOptions(exclude_tip_links=True)
    )
    if not report.empty:
        return FeasibilityResult(False, None, "collision", (), report)
    grasp.joints = ik.angles.copy()
    return FeasibilityResult(True, ik.angles)


def grasp_matrix(grasp: Grasp, object_pose: Pose) -> np.ndarray:
    """6x9 map from stacked world contact forces to the object wrench.

    Column block i maps the force at contact i to (f, (p_i - c) x f) about
    the object center.
    """
    pts = grasp.world_contacts(object_pose)
    return contact_map(pts - object_pose.position)


def contact_map(arms: np.ndarray) -> np.ndarray:
    arms = np.asarray(arms, dtype=float).reshape(-1, 3)
    k = arms.shape[0]
    g = np.zeros((6, 3 * k))
    for i, r in enumerate(arms):
        g[:3, 3 * i : 3 * i + 3] = np.eye(3)
        g[3:, 3 * i : 3 * i + 3] = np.array(
            [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]]
        )
    return g


def primitive_wrenches(grasp: Grasp, object_pose: Pose, friction: FrictionModel) -> np.ndarray:
    """6 x (3*facets) matrix of primitive contact wrenches (cone edges)."""
    pts = grasp.world_contacts(object_pose)
    normals = grasp.world_inward_normals(object_pose)
    arms = pts - object_pose.position
    cols = []
    for i in range(3):
        edges = cone_edges(normals[i], friction)
        for e in edges:
            cols.append(np.concatenate([e, np.cross(arms[i], e)]))
    return np.array(cols).T


def force_closure(
    grasp: Grasp,
    object_pose: Pose,
    friction: FrictionModel,
    eps_threshold: float = 1e-9,
) -> bool:
    """Certify force closure via the linearized cone and an interiority LP.

    The grasp is closed iff the primitive wrenches span all of wrench space
    and the origin is a strictly interior convex combination of them:
    max eps s.t. sum(lam_j w_j) = 0, sum(lam_j) = 1, lam_j >= eps, with
    optimal eps above the threshold. Solver failure is logged and treated
    as not closed.
    """
    w = primitive_wrenches(grasp, object_pose, friction)
    if np.linalg.matrix_rank(w, tol=1e-9) < 6:
        return False
    # row scaling is a pure conditioning change: {lam : W lam = 0} is preserved
    scale = np.abs(w).max(axis=1)
    scale[scale == 0] = 1.0
    ws = w / scale[:, None]
    n = ws.shape[1]
    # substitute lam_j = mu_j + eps, eps = ep - en with mu, ep, en >= 0
    a = np.zeros((7, n + 2))
    a[:6, :n] = ws
    a[:6, n] = ws.sum(axis=1)
    a[:6, n + 1] = -ws.sum(axis=1)
    a[6, :n] = 1.0
    a[6, n] = n
    a[6, n + 1] = -n
    b = np.zeros(7)
    b[6] = 1.0
    c = np.zeros(n + 2)
    c[n] = 1.0
    c[n + 1] = -1.0
    try:
        sol = solve_lp(c, a, b, maximize=True)
    except SimplexError as exc:
        log.warning("force-closure LP failed (%s); treating grasp as not closed", exc)
        return False
    if sol.status != "optimal":
        return False
    return sol.objective > eps_threshold


def cone_face_normals(normal: np.ndarray, friction: FrictionModel) -> np.ndarray:
    """Inward face normals of the linearized cone: nu_k . f >= 0 inside."""
    edges = cone_edges(normal, friction)
    faces = np.zeros((friction.facets, 3))
    for k in range(friction.facets):
        nu = np.cross(edges[k], edges[(k + 1) % friction.facets])
        if np.dot(nu, normal) < 0:
            nu = -nu
        faces[k] = nu / np.linalg.norm(nu)
    return faces


def distribute_forces(
    grasp: Grasp,
    object_pose: Pose,
    target: Wrench,
    friction: FrictionModel,
    f_max: float = 10.0,
) -> np.ndarray | None:
    """Minimum-norm contact forces realizing a target object wrench.

    Solves min sum|f_i|^2 subject to G f = target with every force inside
    its linearized cone and normal components capped at f_max. Returns a
    3x3 array (rows follow grasp.contacts) or None when the wrench lies
    outside the feasible wrench set.
    """
    import cvxpy as cp

    g = grasp_matrix(grasp, object_pose)
    normals = grasp.world_inward_normals(object_pose)
    f = cp.Variable(9)
    constraints = [g @ f == target.as_vector()]
    for i in range(3):
        fi = f[3 * i : 3 * i + 3]
        faces = cone_face_normals(normals[i], friction)
        constraints.append(faces @ fi >= 0)
        constraints.append(normals[i] @ fi <= f_max)
    problem = cp.Problem(cp.Minimize(cp.sum_squares(f)), constraints)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return None
    if problem.status not in ("optimal", "optimal_inaccurate") or f.value is None:
        return None
    forces = np.asarray(f.value).reshape(3, 3)
    if np.linalg.norm(g @ forces.reshape(9) - target.as_vector()) > 1e-6:
        return None
    return forces
