"""URDF parsing, forward kinematics, Jacobians, and joint-limit utilities.

A loaded RobotModel is immutable and safe to share across sessions; every
operation here is a pure function of (model, q).

Supported URDF subset: link, joint (revolute / prismatic / fixed /
continuous), origin, axis, limit, mimic. Continuous joints are treated as
revolute with limits [-20*pi, 20*pi] so box constraints stay well-defined.
Mimic joints are resolved at parse time: they do not appear in the actuated
ordering and fold their multiplier into the driving joint's Jacobian column.

Collision geometry is not part of URDF; a sidecar JSON file maps link names
to sphere lists: { "link_name": [ {"center": [x, y, z], "radius": r}, ... ] }
with units in meters.
"""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, KinematicError, ParseError, UnknownLink
from .transforms import RigidTransform, rpy_matrix, skew

AXIS_UNIT_TOL = 1e-9
CONTINUOUS_LIMIT = 20.0 * np.pi
DEFAULT_VELOCITY_LIMIT = np.pi

REVOLUTE, PRISMATIC, FIXED = 1, 2, 0


@dataclass(frozen=True)
class CollisionSphere:
    center: np.ndarray  # (3,) offset in the link frame, meters
    radius: float


@dataclass(frozen=True)
class Link:
    name: str
    visual_mesh: Optional[str] = None
    spheres: tuple = ()


@dataclass(frozen=True)
class Joint:
    name: str
    type: str  # "revolute" | "prismatic" | "fixed"
    parent: str
    child: str
    origin: RigidTransform
    axis: np.ndarray
    lower: float
    upper: float
    velocity: float
    mimic: Optional[tuple] = None  # (driving joint name, multiplier, offset)


@dataclass
class JointConfig:
    """Configuration vector laid out per the model's actuated ordering."""

    values: np.ndarray
    timestamp: int = 0  # microseconds

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise DimensionMismatch("joint values must be finite")
        self.values = vals

    def copy(self) -> "JointConfig":
        return JointConfig(self.values.copy(), self.timestamp)


class RobotModel:
    """Parsed kinematic tree with precomputed arrays for fast FK/Jacobians."""

    def __init__(self, name, links, joints, base_link, actuated_names):
        self.name = name
        self.links = links                      # list[Link], parse order
        self.joints = joints                    # list[Joint], topological order
        self.base_link = base_link
        self.actuated_joints = actuated_names   # list[str], configuration layout
        self.link_index = {l.name: i for i, l in enumerate(links)}
        self.joint_index = {j.name: i for i, j in enumerate(joints)}

        n = len(actuated_names)
        act_by_name = {nm: i for i, nm in enumerate(actuated_names)}
        self.lower = np.zeros(n)
        self.upper = np.zeros(n)
        self.velocity = np.zeros(n)
        for jnt in joints:
            if jnt.name in act_by_name:
                i = act_by_name[jnt.name]
                self.lower[i] = jnt.lower
                self.upper[i] = jnt.upper
                self.velocity[i] = jnt.velocity

        self._precompute(act_by_name)
        self._precompute_collision()

    # -- static per-joint arrays ------------------------------------------

    def _precompute(self, act_by_name):
        nj = len(self.joints)
        self._jparent = np.zeros(nj, dtype=int)
        self._jchild = np.zeros(nj, dtype=int)
        self._jrot0 = np.zeros((nj, 3, 3))
        self._jpos0 = np.zeros((nj, 3))
        self._jaxis = np.zeros((nj, 3))
        self._jkind = np.zeros(nj, dtype=int)
        self._jact = np.full(nj, -1, dtype=int)
        self._jmult = np.ones(nj)
        self._joffset = np.zeros(nj)
        self._jskew = np.zeros((nj, 3, 3))
        self._jskew2 = np.zeros((nj, 3, 3))

        for idx, jnt in enumerate(self.joints):
            self._jparent[idx] = self.link_index[jnt.parent]
            self._jchild[idx] = self.link_index[jnt.child]
            self._jrot0[idx] = jnt.origin.rotation
            self._jpos0[idx] = jnt.origin.translation
            self._jaxis[idx] = jnt.axis
            if jnt.type == "revolute":
                self._jkind[idx] = REVOLUTE
            elif jnt.type == "prismatic":
                self._jkind[idx] = PRISMATIC
            else:
                self._jkind[idx] = FIXED
            if jnt.type != "fixed":
                if jnt.mimic is not None:
                    driver, mult, off = jnt.mimic
                    self._jact[idx] = act_by_name[driver]
                    self._jmult[idx] = mult
                    self._joffset[idx] = off
                else:
                    self._jact[idx] = act_by_name[jnt.name]
                k = skew(jnt.axis)
                self._jskew[idx] = k
                self._jskew2[idx] = k @ k

        # Root-to-link joint paths, one int array per link, plus the same
        # paths restricted to moving joints (for vectorized Jacobians).
        parent_joint = {}  # child link idx -> joint idx
        for idx in range(nj):
            parent_joint[self._jchild[idx]] = idx
        self._link_paths = []
        self._link_path_rev = []    # (revolute joint idxs, actuated cols, mults)
        self._link_path_prism = []
        for li in range(len(self.links)):
            path = []
            cur = li
            while cur in parent_joint:
                j = parent_joint[cur]
                path.append(j)
                cur = self._jparent[j]
            path = np.array(path[::-1], dtype=int)
            self._link_paths.append(path)
            rev = path[self._jkind[path] == REVOLUTE] if path.size else path
            pri = path[self._jkind[path] == PRISMATIC] if path.size else path
            self._link_path_rev.append((rev, self._jact[rev], self._jmult[rev][:, None]))
            self._link_path_prism.append((pri, self._jact[pri], self._jmult[pri][:, None]))

        # Links adjacent through any joint (excluded from self-collision).
        self._adjacent = set()
        for jnt in self.joints:
            self._adjacent.add(frozenset((jnt.parent, jnt.child)))

    def _precompute_collision(self):
        """Flatten all eligible cross-link sphere pairs for vectorized queries."""
        per_link = []
        for li, link in enumerate(self.links):
            for sph in link.spheres:
                per_link.append((li, sph.center, sph.radius))
        pair_a, pair_b, off_a, off_b, rad_sum = [], [], [], [], []
        self._coll_pair_links = []
        for i in range(len(per_link)):
            for j in range(i + 1, len(per_link)):
                la, ca, ra = per_link[i]
                lb, cb, rb = per_link[j]
                if la == lb:
                    continue
                names = frozenset((self.links[la].name, self.links[lb].name))
                if names in self._adjacent:
                    continue
                pair_a.append(la)
                pair_b.append(lb)
                off_a.append(ca)
                off_b.append(cb)
                rad_sum.append(ra + rb)
                self._coll_pair_links.append((self.links[la].name, self.links[lb].name))
        self._coll_link_a = np.array(pair_a, dtype=int)
        self._coll_link_b = np.array(pair_b, dtype=int)
        self._coll_off_a = np.asarray(off_a, dtype=float).reshape(-1, 3)
        self._coll_off_b = np.asarray(off_b, dtype=float).reshape(-1, 3)
        self._coll_rad_sum = np.asarray(rad_sum, dtype=float)

    # -- convenience -------------------------------------------------------

    @property
    def dof(self) -> int:
        return len(self.actuated_joints)

    def link(self, name: str) -> Link:
        try:
            return self.links[self.link_index[name]]
        except KeyError:
            raise UnknownLink(f"link {name!r} not in model {self.name!r}") from None

    def midrange_config(self) -> JointConfig:
        return JointConfig((self.lower + self.upper) * 0.5)

    def within_limits(self, q, atol: float = 0.0) -> bool:
        vals = config_values(self, q)
        return bool(np.all(vals >= self.lower - atol) and np.all(vals <= self.upper + atol))


# ---------------------------------------------------------------------------
# URDF loading
# ---------------------------------------------------------------------------

def _parse_origin(elem) -> RigidTransform:
    if elem is None:
        return RigidTransform.identity()
    xyz = [float(v) for v in elem.get("xyz", "0 0 0").split()]
    rpy = [float(v) for v in elem.get("rpy", "0 0 0").split()]
    if len(xyz) != 3 or len(rpy) != 3:
        raise ParseError("origin xyz/rpy must have 3 components")
    return RigidTransform(rpy_matrix(*rpy), np.array(xyz))


def load_collision_spheres(text: str) -> dict:
    """Parse a sphere sidecar JSON document into {link: [CollisionSphere]}."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad sphere sidecar JSON: {exc}") from exc
    out = {}
    for link_name, entries in raw.items():
        spheres = []
        for entry in entries:
            radius = float(entry["radius"])
            if radius <= 0.0:
                raise ParseError(f"sphere radius must be > 0 on link {link_name!r}")
            spheres.append(CollisionSphere(np.asarray(entry["center"], dtype=float).reshape(3),
                                           radius))
        out[link_name] = spheres
    return out


def load_robot_description(text: str, spheres_text: Optional[str] = None) -> RobotModel:
    """Build a RobotModel from URDF XML (and an optional sphere sidecar).

    Raises ParseError for malformed XML or missing required attributes and
    KinematicError for structural problems (cycles, multiple roots, non-unit
    axes, inverted limits).
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ParseError(f"bad URDF XML: {exc}") from exc
    if root.tag != "robot":
        raise ParseError("URDF root element must be <robot>")
    name = root.get("name", "robot")

    sphere_map = load_collision_spheres(spheres_text) if spheres_text else {}

    links = []
    for elem in root.findall("link"):
        link_name = elem.get("name")
        if link_name is None:
            raise ParseError("link without a name")
        mesh = None
        mesh_elem = elem.find("visual/geometry/mesh")
        if mesh_elem is not None:
            mesh = mesh_elem.get("filename")
        links.append(Link(link_name, mesh, tuple(sphere_map.get(link_name, ()))))
    link_names = {l.name for l in links}
    if len(link_names) != len(links):
        raise KinematicError("duplicate link names")

    joints = []
    for elem in root.findall("joint"):
        jname = elem.get("name")
        jtype = elem.get("type")
        if jname is None or jtype is None:
            raise ParseError("joint missing name or type")
        if jtype not in ("revolute", "prismatic", "fixed", "continuous"):
            raise ParseError(f"unsupported joint type {jtype!r} on {jname!r}")
        parent_elem = elem.find("parent")
        child_elem = elem.find("child")
        if parent_elem is None or child_elem is None:
            raise ParseError(f"joint {jname!r} missing parent/child")
        parent, child = parent_elem.get("link"), child_elem.get("link")
        if parent not in link_names or child not in link_names:
            raise ParseError(f"joint {jname!r} references unknown link")
        origin = _parse_origin(elem.find("origin"))

        axis = np.array([1.0, 0.0, 0.0])
        axis_elem = elem.find("axis")
        if axis_elem is not None:
            axis = np.array([float(v) for v in axis_elem.get("xyz", "1 0 0").split()])

        lower, upper, velocity = 0.0, 0.0, DEFAULT_VELOCITY_LIMIT
        limit_elem = elem.find("limit")
        if jtype in ("revolute", "prismatic"):
            if limit_elem is None:
                raise ParseError(f"joint {jname!r} requires a <limit> element")
            try:
                lower = float(limit_elem.get("lower"))
                upper = float(limit_elem.get("upper"))
            except (TypeError, ValueError):
                raise ParseError(f"joint {jname!r} limit needs lower/upper") from None
            if limit_elem.get("velocity") is not None:
                velocity = float(limit_elem.get("velocity"))
        elif jtype == "continuous":
            lower, upper = -CONTINUOUS_LIMIT, CONTINUOUS_LIMIT
            if limit_elem is not None and limit_elem.get("velocity") is not None:
                velocity = float(limit_elem.get("velocity"))
            jtype = "revolute"

        mimic = None
        mimic_elem = elem.find("mimic")
        if mimic_elem is not None:
            mimic = (mimic_elem.get("joint"),
                     float(mimic_elem.get("multiplier", "1")),
                     float(mimic_elem.get("offset", "0")))

        if jtype != "fixed":
            if abs(np.linalg.norm(axis) - 1.0) > AXIS_UNIT_TOL:
                raise KinematicError(f"joint {jname!r} axis is not unit length")
            if lower > upper:
                raise KinematicError(f"joint {jname!r} has lower > upper")
            if velocity <= 0.0:
                raise KinematicError(f"joint {jname!r} velocity limit must be > 0")

        joints.append(Joint(jname, jtype, parent, child, origin, axis,
                            lower, upper, velocity, mimic))

    return _build_model(name, links, joints)


def _build_model(name, links, joints) -> RobotModel:
    children = {j.child for j in joints}
    if len(children) != len(joints):
        raise KinematicError("a link has more than one parent joint")
    roots = [l.name for l in links if l.name not in children]
    if len(roots) != 1:
        raise KinematicError(f"expected exactly one root link, found {roots}")
    base = roots[0]

    # Topological order by walking down from the base; also detects cycles
    # (joints whose parent is never reached stay unvisited).
    by_parent = {}
    for j in joints:
        by_parent.setdefault(j.parent, []).append(j)
    ordered = []
    stack = [base]
    while stack:
        link = stack.pop()
        for j in by_parent.get(link, []):
            ordered.append(j)
            stack.append(j.child)
    if len(ordered) != len(joints):
        raise KinematicError("kinematic graph contains a cycle or unreachable joints")

    joint_names = {j.name for j in joints}
    if len(joint_names) != len(joints):
        raise KinematicError("duplicate joint names")

    # Resolve mimic chains down to an actuated driver.
    by_name = {j.name: j for j in joints}
    resolved = []
    for j in ordered:
        if j.mimic is None:
            resolved.append(j)
            continue
        driver, mult, off = j.mimic
        seen = {j.name}
        while True:
            if driver not in by_name:
                raise KinematicError(f"mimic joint {j.name!r} drives from unknown joint")
            target = by_name[driver]
            if target.type == "fixed":
                raise KinematicError(f"mimic joint {j.name!r} follows a fixed joint")
            if target.mimic is None:
                break
            if target.name in seen:
                raise KinematicError(f"mimic cycle through {j.name!r}")
            seen.add(target.name)
            d2, m2, o2 = target.mimic
            mult, off, driver = mult * m2, mult * o2 + off, d2
        resolved.append(Joint(j.name, j.type, j.parent, j.child, j.origin, j.axis,
                              j.lower, j.upper, j.velocity, (driver, mult, off)))

    actuated = [j.name for j in resolved if j.type != "fixed" and j.mimic is None]
    return RobotModel(name, links, resolved, base, actuated)


# ---------------------------------------------------------------------------
# Kinematics queries
# ---------------------------------------------------------------------------

ConfigLike = Union[JointConfig, np.ndarray, Sequence[float]]


def config_values(model: RobotModel, q: ConfigLike) -> np.ndarray:
    """Extract and validate the raw configuration vector."""
    vals = q.values if isinstance(q, JointConfig) else np.asarray(q, dtype=float)
    vals = vals.reshape(-1)
    if vals.shape[0] != model.dof:
        raise DimensionMismatch(
            f"config has {vals.shape[0]} values, model {model.name!r} has {model.dof} joints")
    return vals


class FKResult:
    """All link poses plus world-frame joint axes/origins for one configuration."""

    __slots__ = ("link_rot", "link_pos", "axis_world", "origin_world")

    def __init__(self, link_rot, link_pos, axis_world, origin_world):
        self.link_rot = link_rot        # (L, 3, 3)
        self.link_pos = link_pos        # (L, 3)
        self.axis_world = axis_world    # (J, 3)
        self.origin_world = origin_world  # (J, 3)


def fk_all(model: RobotModel, q: ConfigLike) -> FKResult:
    """Single pass over the tree computing every link pose in the base frame."""
    vals = config_values(model, q)
    nl, nj = len(model.links), len(model.joints)
    link_rot = np.empty((nl, 3, 3))
    link_pos = np.empty((nl, 3))
    axis_world = np.empty((nj, 3))
    origin_world = np.empty((nj, 3))
    link_rot[model.link_index[model.base_link]] = np.eye(3)
    link_pos[model.link_index[model.base_link]] = 0.0

    # Joint values and revolute motion matrices, batched up front. Fixed
    # joints carry _jact == -1; their (meaningless) value is never used.
    if model.dof:
        jvals = model._jmult * vals[np.maximum(model._jact, 0)] + model._joffset
    else:
        jvals = np.zeros(nj)
    sin_v, cos_v = np.sin(jvals), np.cos(jvals)
    motions = (np.eye(3) + sin_v[:, None, None] * model._jskew
               + (1.0 - cos_v)[:, None, None] * model._jskew2)

    jparent, jchild, jkind = model._jparent, model._jchild, model._jkind
    jrot0, jpos0, jaxis = model._jrot0, model._jpos0, model._jaxis
    for j in range(nj):
        pa = jparent[j]
        rot_j = link_rot[pa] @ jrot0[j]
        pos_j = link_rot[pa] @ jpos0[j] + link_pos[pa]
        axis_world[j] = rot_j @ jaxis[j]
        origin_world[j] = pos_j
        kind = jkind[j]
        child = jchild[j]
        if kind == REVOLUTE:
            link_rot[child] = rot_j @ motions[j]
            link_pos[child] = pos_j
        elif kind == FIXED:
            link_rot[child] = rot_j
            link_pos[child] = pos_j
        else:
            link_rot[child] = rot_j
            link_pos[child] = pos_j + jvals[j] * axis_world[j]
    return FKResult(link_rot, link_pos, axis_world, origin_world)


def forward_kinematics(model: RobotModel, q: ConfigLike, link: str) -> RigidTransform:
    """Pose of `link` in the base frame."""
    if link not in model.link_index:
        raise UnknownLink(f"link {link!r} not in model {model.name!r}")
    fk = fk_all(model, q)
    li = model.link_index[link]
    return RigidTransform(fk.link_rot[li], fk.link_pos[li])


def keypoint_vector(model: RobotModel, q: ConfigLike, from_link: str, to_link: str) -> np.ndarray:
    """translation(FK(to_link)) - translation(FK(from_link)) in the base frame."""
    for link in (from_link, to_link):
        if link not in model.link_index:
            raise UnknownLink(f"link {link!r} not in model {model.name!r}")
    fk = fk_all(model, q)
    return fk.link_pos[model.link_index[to_link]] - fk.link_pos[model.link_index[from_link]]


def point_jacobian(model: RobotModel, fk: FKResult, link: str,
                   point_world: Optional[np.ndarray] = None) -> np.ndarray:
    """Positional (3 x n) Jacobian of a world point rigidly attached to `link`.

    Defaults to the link frame origin. Mimic joints contribute to their
    driver's column scaled by the mimic multiplier.
    """
    li = model.link_index[link]
    pt = fk.link_pos[li] if point_world is None else point_world
    jac = np.zeros((model.dof, 3))
    rev, rev_cols, rev_mult = model._link_path_rev[li]
    if rev.size:
        contrib = rev_mult * np.cross(fk.axis_world[rev], pt - fk.origin_world[rev])
        np.add.at(jac, rev_cols, contrib)
    pri, pri_cols, pri_mult = model._link_path_prism[li]
    if pri.size:
        np.add.at(jac, pri_cols, pri_mult * fk.axis_world[pri])
    return jac.T


def jacobian(model: RobotModel, q: ConfigLike, link: str) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows 0-2 linear, rows 3-5 angular.

    Columns of joints not on the root-to-link path are zero. For revolute
    joints the angular part is the joint axis expressed in the base frame.
    """
    if link not in model.link_index:
        raise UnknownLink(f"link {link!r} not in model {model.name!r}")
    fk = fk_all(model, q)
    li = model.link_index[link]
    pt = fk.link_pos[li]
    jac = np.zeros((6, model.dof))
    for j in model._link_paths[li]:
        kind = model._jkind[j]
        if kind == FIXED:
            continue
        col = model._jact[j]
        mult = model._jmult[j]
        if kind == REVOLUTE:
            jac[:3, col] += mult * np.cross(fk.axis_world[j], pt - fk.origin_world[j])
            jac[3:, col] += mult * fk.axis_world[j]
        else:
            jac[:3, col] += mult * fk.axis_world[j]
    return jac


def clamp_to_limits(model: RobotModel, q: ConfigLike) -> JointConfig:
    """Component-wise clamp into [lower, upper]."""
    vals = config_values(model, q)
    ts = q.timestamp if isinstance(q, JointConfig) else 0
    return JointConfig(np.clip(vals, model.lower, model.upper), ts)
