"""Planar floating-base biped: kinematics, dynamics snapshots, integration.

The mechanism lives in the sagittal (x, z) plane with configuration
q = [x_base, z_base, pitch, joint angles...].  The three floating coordinates
are unactuated; every chain joint is an actuated revolute.  Contact points,
Jacobians, and the COM map are embedded in 3-D (x, y, z) with the out-of-plane
y row identically zero so they plug directly into the whole-body QP builder.

Jacobians are assembled analytically: the column of a point p with respect to
a revolute ancestor anchored at a is perp(p - a) with perp(v) = (-v_z, v_x),
and d/dt of that column is perp(pdot - adot), which gives Jdot*qdot in closed
form.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .wholebody import ContactPoint, DynamicsSnapshot, tangent_directions

JOINT_LIMIT_BAND = 1e-6   # rad; |q - limit| below this marks the joint at-limit


def _perp(v: np.ndarray) -> np.ndarray:
    return np.array([-v[1], v[0]])


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Link:
    name: str
    parent: str | None          # None marks the floating base
    anchor: np.ndarray          # (2,) joint anchor in the parent frame
    mass: float
    inertia: float              # about the link COM
    com: np.ndarray             # (2,) COM offset in the link frame
    length: float
    q_min: float = -np.inf
    q_max: float = np.inf
    tau_min: float = -np.inf
    tau_max: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float).reshape(2))
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(2))
        if self.mass <= 0.0 or self.inertia <= 0.0:
            raise ValueError(f"link {self.name}: mass and inertia must be positive")
        if not (self.q_min < self.q_max and self.tau_min < self.tau_max):
            raise ValueError(f"link {self.name}: limits must be ordered")


@dataclass(frozen=True)
class FootContact:
    name: str
    link: str
    offset: np.ndarray          # (2,) in the link frame

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(2))


@dataclass(frozen=True)
class PlanarModel:
    base: Link
    links: tuple[Link, ...]     # joint order: dof 3 + i belongs to links[i]
    contacts: tuple[FootContact, ...]
    gravity: float = 9.81
    mu: float = 1.0

    def __post_init__(self):
        names = {self.base.name} | {l.name for l in self.links}
        if len(names) != len(self.links) + 1:
            raise ValueError("duplicate link names")
        for l in self.links:
            if l.parent not in names:
                raise ValueError(f"link {l.name} has unknown parent {l.parent}")
        for c in self.contacts:
            if c.link not in names:
                raise ValueError(f"contact {c.name} attached to unknown link {c.link}")

    @property
    def nq(self) -> int:
        return 3 + len(self.links)

    @property
    def nf(self) -> int:
        return 3

    @property
    def na(self) -> int:
        return len(self.links)

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KeyError(name)

    def contact_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.contacts)

    def tau_limit_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([l.tau_min for l in self.links]),
                np.array([l.tau_max for l in self.links]))


class _FrameState:
    """World pose/velocity of every link plus ancestor joint bookkeeping."""

    def __init__(self, model: PlanarModel, q: np.ndarray, qdot: np.ndarray | None):
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qdot, dtype=float) if qdot is not None else np.zeros(model.nq)
        self.model = model
        self.qd = qd
        self.origin: dict[str, np.ndarray] = {}
        self.angle: dict[str, float] = {}
        self.origin_vel: dict[str, np.ndarray] = {}
        self.angle_vel: dict[str, float] = {}
        self.ancestors: dict[str, list[int]] = {}   # actuated dof indices

        base = model.base.name
        self.origin[base] = q[:2].copy()
        self.angle[base] = float(q[2])
        self.origin_vel[base] = qd[:2].copy()
        self.angle_vel[base] = float(qd[2])
        self.ancestors[base] = []

        remaining = list(model.links)
        while remaining:
            progressed = False
            for l in list(remaining):
                if l.parent not in self.origin:
                    continue
                i = model.link_index(l.name)
                po = self.origin[l.parent]
                pa = self.angle[l.parent]
                o = po + _rot(pa) @ l.anchor
                self.origin[l.name] = o
                self.angle[l.name] = pa + float(q[3 + i])
                pov = self.origin_vel[l.parent]
                pav = self.angle_vel[l.parent]
                self.origin_vel[l.name] = pov + pav * _perp(o - po)
                self.angle_vel[l.name] = pav + float(qd[3 + i])
                self.ancestors[l.name] = self.ancestors[l.parent] + [i]
                remaining.remove(l)
                progressed = True
            if not progressed:
                raise ValueError("link tree has a cycle or missing parent")

    def point(self, link: str, offset: np.ndarray):
        """World position, velocity, Jacobian, and Jdot*qdot of a link point."""
        nq = self.model.nq
        o = self.origin[link]
        a = self.angle[link]
        p = o + _rot(a) @ offset
        pdot = self.origin_vel[link] + self.angle_vel[link] * _perp(p - o)

        J = np.zeros((2, nq))
        J[0, 0] = 1.0
        J[1, 1] = 1.0
        base = self.model.base.name
        J[:, 2] = _perp(p - self.origin[base])
        for i in self.ancestors[link]:
            joint_link = self.model.links[i].name
            J[:, 3 + i] = _perp(p - self.origin[joint_link])

        jdqd = self.qd[2] * _perp(pdot - self.origin_vel[base])
        for i in self.ancestors[link]:
            joint_link = self.model.links[i].name
            jdqd = jdqd + self.qd[3 + i] * _perp(pdot - self.origin_vel[joint_link])
        return p, pdot, J, jdqd

    def omega_jacobian(self, link: str) -> np.ndarray:
        J = np.zeros(self.model.nq)
        J[2] = 1.0
        for i in self.ancestors[link]:
            J[3 + i] = 1.0
        return J


def _all_links(model: PlanarModel):
    yield model.base
    yield from model.links


def mass_matrix(model: PlanarModel, q: np.ndarray) -> np.ndarray:
    fs = _FrameState(model, q, None)
    H = np.zeros((model.nq, model.nq))
    for l in _all_links(model):
        _, _, Jv, _ = fs.point(l.name, l.com)
        Jw = fs.omega_jacobian(l.name)
        H += l.mass * Jv.T @ Jv + l.inertia * np.outer(Jw, Jw)
    return H


def bias_vector(model: PlanarModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Velocity-product plus gravity generalized forces (H qdd + bias = forces)."""
    fs = _FrameState(model, q, qdot)
    bias = np.zeros(model.nq)
    for l in _all_links(model):
        _, _, Jv, jdqd = fs.point(l.name, l.com)
        bias += l.mass * Jv.T @ jdqd
        bias += l.mass * model.gravity * Jv[1]
    return bias


def kinetic_energy(model: PlanarModel, q: np.ndarray, qdot: np.ndarray) -> float:
    """Link-by-link kinetic energy from the velocity recursion."""
    fs = _FrameState(model, q, qdot)
    total = 0.0
    for l in _all_links(model):
        o = fs.origin[l.name]
        c = o + _rot(fs.angle[l.name]) @ l.com
        cdot = fs.origin_vel[l.name] + fs.angle_vel[l.name] * _perp(c - o)
        total += 0.5 * l.mass * float(cdot @ cdot)
        total += 0.5 * l.inertia * fs.angle_vel[l.name] ** 2
    return total


def potential_energy(model: PlanarModel, q: np.ndarray) -> float:
    """Gravitational energy with the z = 0 ground line as datum."""
    fs = _FrameState(model, q, None)
    total = 0.0
    for l in _all_links(model):
        c = fs.origin[l.name] + _rot(fs.angle[l.name]) @ l.com
        total += l.mass * model.gravity * float(c[1])
    return total


def com_state(model: PlanarModel, q: np.ndarray, qdot: np.ndarray):
    """COM planar position/velocity plus its (x, y) Jacobian pieces in 3-D."""
    fs = _FrameState(model, q, qdot)
    M = sum(l.mass for l in _all_links(model))
    pos = np.zeros(2)
    vel = np.zeros(2)
    Jx = np.zeros(model.nq)
    jdqd_x = 0.0
    for l in _all_links(model):
        p, pdot, J, jdqd = fs.point(l.name, l.com)
        pos += l.mass * p
        vel += l.mass * pdot
        Jx += l.mass * J[0]
        jdqd_x += l.mass * jdqd[0]
    pos /= M
    vel /= M
    J_com = np.vstack([Jx / M, np.zeros(model.nq)])
    jdqd_com = np.array([jdqd_x / M, 0.0])
    return pos, vel, J_com, jdqd_com


def dynamics_snapshot(model: PlanarModel, q: np.ndarray, qdot: np.ndarray,
                      active: set[str] | frozenset[str] | tuple[str, ...],
                      t: float = 0.0, n_d: int = 4) -> DynamicsSnapshot:
    """Instantaneous dynamics quantities for the whole-body QP builder."""
    q = np.asarray(q, dtype=float).reshape(model.nq)
    qdot = np.asarray(qdot, dtype=float).reshape(model.nq)
    active = set(active)
    unknown = active - set(model.contact_names())
    if unknown:
        raise ValueError(f"unknown contacts requested: {sorted(unknown)}")

    # One kinematics pass feeds the inertia matrix, bias vector, COM map,
    # and contact rows; this runs once per control step.
    fs = _FrameState(model, q, qdot)
    nq = model.nq
    H = np.zeros((nq, nq))
    bias = np.zeros(nq)
    M = 0.0
    com_pos = np.zeros(2)
    com_vel = np.zeros(2)
    J_com_x = np.zeros(nq)
    jdqd_com_x = 0.0
    for l in _all_links(model):
        p, pdot, Jv, jdqd = fs.point(l.name, l.com)
        Jw = fs.omega_jacobian(l.name)
        H += l.mass * Jv.T @ Jv + l.inertia * np.outer(Jw, Jw)
        bias += l.mass * (Jv.T @ jdqd) + l.mass * model.gravity * Jv[1]
        M += l.mass
        com_pos += l.mass * p
        com_vel += l.mass * pdot
        J_com_x += l.mass * Jv[0]
        jdqd_com_x += l.mass * jdqd[0]
    com_pos /= M
    com_vel /= M
    J_com = np.vstack([J_com_x / M, np.zeros(nq)])
    jdqd_com = np.array([jdqd_com_x / M, 0.0])

    normal = np.array([0.0, 0.0, 1.0])
    tangents = tangent_directions(normal, n_d)
    contacts = []
    J_rows = []
    jd_rows = []
    for fc in model.contacts:
        if fc.name not in active:
            continue
        p, _, J, jdqd = fs.point(fc.link, fc.offset)
        J3 = np.vstack([J[0], np.zeros(nq), J[1]])
        jd3 = np.array([jdqd[0], 0.0, jdqd[1]])
        contacts.append(ContactPoint(
            name=fc.name, position=np.array([p[0], 0.0, p[1]]), normal=normal,
            tangents=tangents, mu=model.mu, jacobian=J3, jdot_qdot=jd3))
        J_rows.append(J3)
        jd_rows.append(jd3)

    J_contact = np.vstack(J_rows) if J_rows else np.zeros((0, nq))
    Jdot_qdot = np.concatenate(jd_rows) if jd_rows else np.zeros(0)

    at_min = np.zeros(nq, dtype=bool)
    at_max = np.zeros(nq, dtype=bool)
    for i, l in enumerate(model.links):
        at_min[3 + i] = q[3 + i] <= l.q_min + JOINT_LIMIT_BAND
        at_max[3 + i] = q[3 + i] >= l.q_max - JOINT_LIMIT_BAND

    return DynamicsSnapshot(
        nq=nq, nf=model.nf, H=H, bias=bias,
        B_input=np.eye(model.na), contacts=tuple(contacts),
        J_contact=J_contact, Jdot_qdot=Jdot_qdot, J_com=J_com,
        Jdot_qdot_com=jdqd_com, q=q.copy(), qdot=qdot.copy(),
        at_min=at_min, at_max=at_max, com_pos=com_pos, com_vel=com_vel)


def integrate_step(q: np.ndarray, qdot: np.ndarray, qdd: np.ndarray,
                   dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    qdot_next = qdot + dt * np.asarray(qdd, dtype=float)
    q_next = q + dt * qdot_next
    return q_next, qdot_next


@dataclass(frozen=True)
class ContactSchedule:
    """Piecewise-constant set of active contact names."""

    entries: tuple[tuple[float, frozenset[str]], ...]

    def __post_init__(self):
        ent = tuple(sorted(((float(t), frozenset(names)) for t, names in self.entries),
                           key=lambda e: e[0]))
        if not ent:
            raise ValueError("schedule needs at least one entry")
        object.__setattr__(self, "entries", ent)

    def active_at(self, t: float) -> frozenset[str]:
        current = self.entries[0][1]
        for start, names in self.entries:
            if start <= t + 1e-12:
                current = names
            else:
                break
        return current

    @classmethod
    def always(cls, names) -> "ContactSchedule":
        return cls(((0.0, frozenset(names)),))


def standing_state(model: PlanarModel) -> tuple[np.ndarray, np.ndarray]:
    """Configuration with zero joint angles and every contact on the ground."""
    q = np.zeros(model.nq)
    fs = _FrameState(model, q, None)
    heights = []
    for fc in model.contacts:
        p, _, _, _ = fs.point(fc.link, fc.offset)
        heights.append(p[1])
    q[1] = -min(heights) if heights else 1.0
    return q, np.zeros(model.nq)


# ---------------------------------------------------------------------------
# Structured-text model description
# ---------------------------------------------------------------------------

def _link_from_dict(d: dict, is_base: bool) -> Link:
    return Link(
        name=d["name"], parent=None if is_base else d["parent"],
        anchor=d.get("anchor", [0.0, 0.0]), mass=d["mass"], inertia=d["inertia"],
        com=d["com"], length=d.get("length", 0.0),
        q_min=d.get("q_min", -np.inf), q_max=d.get("q_max", np.inf),
        tau_min=d.get("tau_min", -np.inf), tau_max=d.get("tau_max", np.inf))


def model_from_dict(data: dict) -> PlanarModel:
    base = _link_from_dict(data["base"], is_base=True)
    links = tuple(_link_from_dict(d, is_base=False) for d in data.get("links", []))
    contacts = tuple(FootContact(c["name"], c["link"], c["offset"])
                     for c in data.get("contacts", []))
    return PlanarModel(base=base, links=links, contacts=contacts,
                       gravity=float(data.get("gravity", 9.81)),
                       mu=float(data.get("friction", 1.0)))


def load_model(path) -> PlanarModel:
    with open(path) as fh:
        return model_from_dict(yaml.safe_load(fh))


def default_model() -> PlanarModel:
    """The shipped 7-DOF biped (torso, two 2-link legs, 2 contacts per foot)."""
    text = resources.files("quickstep").joinpath("data/default_biped.yaml").read_text()
    return model_from_dict(yaml.safe_load(text))
