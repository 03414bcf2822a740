"""Quasi-static analytic model of a 3-section, 9-chamber pneumatic soft arm.

Each section is treated as a circular arc (piecewise constant curvature).
Chamber lengths set the arc parameters, pressures set chamber equilibrium
lengths through a linear actuation model, and an external tip wrench enters
through a finite-difference Jacobian. Spring sensors ride on the same rings
as the chambers at a different radius, so their lengths are an affine image
of the chamber lengths.

Units: lengths mm, pressures kPa, forces N, torques N*mm, angles as noted.

Frame: base at the origin, +Z along the arm toward the tip. The physical
arm hangs base-up, so a mass held at the tip applies tension (+Z) in this
frame; compressive (-Z) tip forces on the extended arm are a buckling
configuration and will diverge, as they should.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError

CHAMBER_ANGLES = (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0)


@dataclass(frozen=True)
class ArmParams:
    """Geometry and actuation constants of the arm.

    ``chamber_offset_radius`` is the one free calibration parameter: it sets
    how much differential chamber length translates into curvature. See
    :func:`calibrate_offset_radius`.
    """

    chamber_free_length: float = 200.0
    chamber_min: float = 105.0
    chamber_max: float = 235.0
    chamber_offset_radius: float = 35.0
    spring_anchor_radius: float = 40.0
    pressure_min: float = -40.0
    pressure_max: float = 20.0
    pressure_gain: float = 2.375          # mm/kPa
    chamber_stiffness: float = 0.5        # N/mm
    settle_time_constant: float = 0.3     # s
    sim_dt: float = 0.03                  # s
    sections: int = 3
    chambers_per_section: int = 3

    def __post_init__(self):
        if not (self.chamber_min < self.chamber_free_length < self.chamber_max):
            raise DomainError("chamber_min < free_length < chamber_max is required")
        if self.sim_dt <= 0:
            raise DomainError("sim_dt must be positive")
        if self.chamber_offset_radius <= 0:
            raise DomainError("chamber_offset_radius must be positive")

    @property
    def n_chambers(self) -> int:
        return self.sections * self.chambers_per_section


@dataclass
class ArmState:
    """Full quasi-static state of the simulator."""

    chamber_lengths: np.ndarray          # mm, shape (9,)
    pressures: np.ndarray                # kPa, shape (9,)
    saturation_flags: np.ndarray         # bool, shape (9,)
    load_wrench: np.ndarray              # (Fx, Fy, Fz, Tx, Ty, Tz) N / N*mm at tip

    def copy(self) -> "ArmState":
        return ArmState(
            self.chamber_lengths.copy(),
            self.pressures.copy(),
            self.saturation_flags.copy(),
            self.load_wrench.copy(),
        )


def rest_state(params: ArmParams, load_wrench=None) -> ArmState:
    """Straight arm at free length with zero pressure."""
    n = params.n_chambers
    wrench = np.zeros(6) if load_wrench is None else np.asarray(load_wrench, float)
    return ArmState(
        chamber_lengths=np.full(n, params.chamber_free_length, dtype=float),
        pressures=np.zeros(n),
        saturation_flags=np.zeros(n, dtype=bool),
        load_wrench=wrench,
    )


@dataclass(frozen=True)
class Pose6D:
    """Tip position (mm) and orientation as yaw/pitch/roll (degrees, ZYX)."""

    x: float
    y: float
    z: float
    yaw: float
    pitch: float
    roll: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw, self.pitch, self.roll])

    @staticmethod
    def from_array(v) -> "Pose6D":
        v = np.asarray(v, dtype=float)
        return Pose6D(*(float(c) for c in v))

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class SectionArc:
    """One constant-curvature section: arc length, curvature, bend plane."""

    arc_length: float      # mm
    curvature: float       # 1/mm
    bend_plane_angle: float  # rad, (-pi, pi]


def wrap_angle_deg(a: float) -> float:
    """Wrap to (-180, 180]."""
    a = math.fmod(a, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def wrap_angles_deg(v: np.ndarray) -> np.ndarray:
    out = np.mod(np.asarray(v, float), 360.0)
    out[out > 180.0] -= 360.0
    out[out <= -180.0] += 360.0
    return out


def section_arc(l1: float, l2: float, l3: float, d: float,
                lo: float = None, hi: float = None) -> SectionArc:
    """Reduce three parallel chamber lengths to an arc.

    ``d`` is the chamber offset radius. Bounds default to unclamped; pass
    ``lo``/``hi`` to enforce the physical chamber range.
    """
    if d <= 0:
        raise DomainError("chamber offset radius must be positive")
    for idx, l in enumerate((l1, l2, l3)):
        if lo is not None and l < lo - 1e-9:
            raise DomainError(f"chamber {idx} length {l} below minimum {lo}")
        if hi is not None and l > hi + 1e-9:
            raise DomainError(f"chamber {idx} length {l} above maximum {hi}")
    s = l1 + l2 + l3
    arc_len = s / 3.0
    expr = l1 * l1 + l2 * l2 + l3 * l3 - l1 * l2 - l2 * l3 - l1 * l3
    expr = max(expr, 0.0)
    kappa = 2.0 * math.sqrt(expr) / (d * s)
    if kappa < 1e-12:
        return SectionArc(arc_len, 0.0, 0.0)
    phi = math.atan2(math.sqrt(3.0) * (l2 - l3), l2 + l3 - 2.0 * l1)
    return SectionArc(arc_len, kappa, phi)


def _section_transform(arc: SectionArc) -> np.ndarray:
    """Homogeneous transform across one section.

    The section bends toward azimuth -phi (center of curvature at +phi);
    this is the convention under which chamber i's length along the arc is
    L*(1 - kappa*d*cos(psi_i + phi)).
    """
    theta = arc.curvature * arc.arc_length
    if abs(theta) < 1e-12:
        t = np.eye(4)
        t[2, 3] = arc.arc_length
        return t
    beta = -arc.bend_plane_angle
    cb, sb = math.cos(beta), math.sin(beta)
    ct, st = math.cos(theta), math.sin(theta)
    rz = np.array([[cb, -sb, 0.0], [sb, cb, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    r = rz @ ry @ rz.T
    p_local = np.array([(1.0 - ct) / arc.curvature, 0.0, st / arc.curvature])
    t = np.eye(4)
    t[:3, :3] = r
    t[:3, 3] = rz @ p_local
    return t


def _ypr_from_rotation(r: np.ndarray) -> tuple:
    """ZYX yaw/pitch/roll in degrees from a rotation matrix."""
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    if abs(r[2, 0]) < 1.0 - 1e-12:
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
    else:
        # gimbal edge: fold roll into yaw
        yaw = math.atan2(-r[0, 1], r[1, 1])
        roll = 0.0
    return (wrap_angle_deg(math.degrees(yaw)),
            wrap_angle_deg(math.degrees(pitch)),
            wrap_angle_deg(math.degrees(roll)))


def section_arcs(chamber_lengths, params: ArmParams) -> list:
    """Split the 9 chamber lengths into per-section arcs."""
    ls = np.asarray(chamber_lengths, dtype=float)
    if ls.shape != (params.n_chambers,):
        raise DomainError(f"expected {params.n_chambers} chamber lengths, got {ls.shape}")
    arcs = []
    for s in range(params.sections):
        l1, l2, l3 = ls[3 * s: 3 * s + 3]
        arcs.append(section_arc(l1, l2, l3, params.chamber_offset_radius,
                                params.chamber_min, params.chamber_max))
    return arcs


def _section_param_arrays(chamber_lengths, params: ArmParams):
    """(arc lengths, curvatures, bend angles) as arrays; hot-path variant.

    Scalar arithmetic on purpose: these are 3-element arrays and numpy
    dispatch overhead dominates the vector form.
    """
    ls = np.asarray(chamber_lengths, dtype=float)
    lo = params.chamber_min - 1e-9
    hi = params.chamber_max + 1e-9
    n = params.sections
    arc_len = np.empty(n)
    kappa = np.empty(n)
    phi = np.empty(n)
    d = params.chamber_offset_radius
    for s in range(n):
        l1 = ls[3 * s]
        l2 = ls[3 * s + 1]
        l3 = ls[3 * s + 2]
        if not (lo <= l1 <= hi and lo <= l2 <= hi and lo <= l3 <= hi):
            section_arcs(ls, params)  # raises with the chamber index
        total = l1 + l2 + l3
        arc_len[s] = total / 3.0
        expr = l1 * l1 + l2 * l2 + l3 * l3 - l1 * l2 - l2 * l3 - l1 * l3
        k = 2.0 * math.sqrt(max(expr, 0.0)) / (d * total)
        if k < 1e-12:
            kappa[s] = 0.0
            phi[s] = 0.0
        else:
            kappa[s] = k
            phi[s] = math.atan2(math.sqrt(3.0) * (l2 - l3), l2 + l3 - 2.0 * l1)
    return arc_len, kappa, phi


def tip_transform(chamber_lengths, params: ArmParams) -> np.ndarray:
    t = np.eye(4)
    for arc in section_arcs(chamber_lengths, params):
        t = t @ _section_transform(arc)
    return t


def forward_kinematics(chamber_lengths, params: ArmParams) -> Pose6D:
    """Tip pose of the stacked constant-curvature sections, base at origin."""
    t = tip_transform(chamber_lengths, params)
    yaw, pitch, roll = _ypr_from_rotation(t[:3, :3])
    return Pose6D(float(t[0, 3]), float(t[1, 3]), float(t[2, 3]), yaw, pitch, roll)


def centerline_points(chamber_lengths, params: ArmParams, n_samples: int) -> np.ndarray:
    """Sample points along the piecewise-arc centerline, base included."""
    arcs = section_arcs(chamber_lengths, params)
    total = sum(a.arc_length for a in arcs)
    pts = [np.zeros(3)]
    t = np.eye(4)
    per_section = max(1, int(math.ceil(n_samples / len(arcs))))
    for arc in arcs:
        for k in range(1, per_section + 1):
            frac = k / per_section
            partial = SectionArc(arc.arc_length * frac, arc.curvature, arc.bend_plane_angle)
            pts.append((t @ _section_transform(partial))[:3, 3])
        t = t @ _section_transform(arc)
    del total
    return np.asarray(pts)


def spring_lengths(chamber_lengths, params: ArmParams) -> np.ndarray:
    """Arc lengths of the nine sensing springs.

    Springs share the chambers' angular positions at radius
    ``spring_anchor_radius``, so per section the deviation from the mean
    length scales by r_anchor/d relative to the chambers.
    """
    arc_len, kappa, phi = _section_param_arrays(chamber_lengths, params)
    psi = np.array(CHAMBER_ANGLES)
    r = params.spring_anchor_radius
    out = arc_len[:, None] * (1.0 - kappa[:, None] * r
                              * np.cos(psi[None, :] + phi[:, None]))
    return out.ravel()


def chamber_lengths_from_springs(springs, params: ArmParams) -> np.ndarray:
    """Exact inverse of :func:`spring_lengths` (per-section affine map)."""
    springs = np.asarray(springs, dtype=float)
    ratio = params.chamber_offset_radius / params.spring_anchor_radius
    out = np.empty_like(springs)
    for s in range(params.sections):
        seg = springs[3 * s: 3 * s + 3]
        mean = seg.mean()
        out[3 * s: 3 * s + 3] = mean + ratio * (seg - mean)
    return out


def equilibrium_length(q: float, load_axial_force: float, params: ArmParams) -> tuple:
    """Chamber equilibrium length under pressure q and axial load.

    Returns (length, saturated). Positive ``load_axial_force`` compresses.
    """
    if q < params.pressure_min - 1e-9 or q > params.pressure_max + 1e-9:
        raise DomainError(
            f"pressure {q} kPa outside [{params.pressure_min}, {params.pressure_max}]")
    raw = (params.chamber_free_length + params.pressure_gain * q
           - load_axial_force / params.chamber_stiffness)
    clamped = min(max(raw, params.chamber_min), params.chamber_max)
    return clamped, clamped != raw


def tip_jacobian(chamber_lengths, params: ArmParams, h: float = 0.5) -> np.ndarray:
    """Central-difference Jacobian of the tip pose w.r.t. chamber lengths.

    Rows: x, y, z (mm/mm) then yaw, pitch, roll in radians/mm. Perturbed
    lengths are clamped to the physical range before evaluation.
    """
    ls = np.asarray(chamber_lengths, dtype=float)
    jac = np.zeros((6, ls.size))
    for i in range(ls.size):
        hi_l = ls.copy()
        lo_l = ls.copy()
        hi_l[i] = min(ls[i] + h, params.chamber_max)
        lo_l[i] = max(ls[i] - h, params.chamber_min)
        span = hi_l[i] - lo_l[i]
        if span <= 0:
            continue
        p_hi = forward_kinematics(hi_l, params).as_array()
        p_lo = forward_kinematics(lo_l, params).as_array()
        diff = p_hi - p_lo
        diff[3:] = wrap_angles_deg(diff[3:])
        diff[3:] = np.radians(diff[3:])
        jac[:, i] = diff / span
    return jac


def chamber_load_forces(state: ArmState, params: ArmParams) -> np.ndarray:
    """Axial compressive force per chamber from the tip wrench.

    Projects the wrench through the transposed pose Jacobian; the sign is
    chosen so a hanging weight yields positive (compressing) forces.
    """
    if not np.any(state.load_wrench):
        return np.zeros(params.n_chambers)
    jac = tip_jacobian(state.chamber_lengths, params)
    return -(jac.T @ state.load_wrench)


def step(state: ArmState, pressures, dt: float, params: ArmParams) -> ArmState:
    """Advance the quasi-static settling dynamics by dt seconds.

    Each chamber relaxes first-order toward its (possibly clamped)
    equilibrium length; saturation flags record the clamping.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    q = np.asarray(pressures, dtype=float)
    if q.shape != (params.n_chambers,):
        raise DomainError(f"expected {params.n_chambers} pressures")
    if np.any(q < params.pressure_min - 1e-9) or np.any(q > params.pressure_max + 1e-9):
        raise DomainError("pressure outside pump range")
    loads = chamber_load_forces(state, params)
    raw = (params.chamber_free_length + params.pressure_gain * q
           - loads / params.chamber_stiffness)
    eq = np.clip(raw, params.chamber_min, params.chamber_max)
    sat = eq != raw
    alpha = 1.0 - math.exp(-dt / params.settle_time_constant)
    new_lengths = state.chamber_lengths + (eq - state.chamber_lengths) * alpha
    new_lengths = np.clip(new_lengths, params.chamber_min, params.chamber_max)
    return ArmState(new_lengths, q.copy(), sat, state.load_wrench.copy())


@dataclass(frozen=True)
class Cylinder:
    """A finite open-ended cylinder (a pipe segment)."""

    origin: np.ndarray       # mm, point on axis (segment midpoint)
    direction: np.ndarray    # unit vector
    radius: float            # mm
    half_length: float       # mm

    def clearance(self, p: np.ndarray) -> float:
        """Radial distance to the inner wall; -inf outside the axial span."""
        rel = p - self.origin
        t = float(rel @ self.direction)
        if abs(t) > self.half_length:
            return -math.inf
        radial = math.sqrt(max(float(rel @ rel) - t * t, 0.0))
        return self.radius - radial


@dataclass
class PipeScene:
    """Union of cylindrical free-space volumes the arm must stay inside."""

    cylinders: list = field(default_factory=list)
    arm_body_radius: float = 30.0

    def __post_init__(self):
        for c in self.cylinders:
            if c.radius <= self.arm_body_radius:
                raise DomainError("cylinder radius must exceed arm body radius")

    def point_clearance(self, p: np.ndarray) -> float:
        """Clearance of a centerline point to the nearest wall (max over pipes)."""
        if not self.cylinders:
            raise DomainError("scene has no cylinders")
        return max(c.clearance(p) for c in self.cylinders)


def collision_check(chamber_lengths, scene: PipeScene, n_samples: int,
                    params: ArmParams) -> tuple:
    """Check the arm centerline against the pipe scene.

    Returns (collides, worst_clearance); worst_clearance is the minimum of
    wall clearance minus the arm body radius over the sampled centerline.
    """
    if n_samples < 10:
        raise DomainError("n_samples must be at least 10")
    if not scene.cylinders:
        raise DomainError("scene has no cylinders")
    pts = centerline_points(chamber_lengths, params, n_samples)
    worst = math.inf
    for p in pts:
        c = scene.point_clearance(p) - scene.arm_body_radius
        if c < worst:
            worst = c
    return worst < 0.0, worst


def parse_scene_file(text: str, arm_body_radius: float = 30.0) -> PipeScene:
    """Parse the plain-text scene format.

    One cylinder per line: ``cylinder ox oy oz dx dy dz radius half_length``
    (mm). Blank lines and ``#`` comments are ignored.
    """
    cylinders = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "cylinder" or len(parts) != 9:
            raise DomainError(f"scene line {lineno}: expected "
                              "'cylinder ox oy oz dx dy dz radius half_length'")
        vals = [float(v) for v in parts[1:]]
        direction = np.array(vals[3:6])
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            raise DomainError(f"scene line {lineno}: zero direction vector")
        cylinders.append(Cylinder(np.array(vals[0:3]), direction / norm,
                                  vals[6], vals[7]))
    return PipeScene(cylinders=cylinders, arm_body_radius=arm_body_radius)


def load_scene(path, arm_body_radius: float = 30.0) -> PipeScene:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scene_file(fh.read(), arm_body_radius)


def max_section_expr(params: ArmParams) -> float:
    """Max of l1^2+l2^2+l3^2-l1l2-l2l3-l1l3 over the 3-level pressure grid."""
    levels = []
    for q in (params.pressure_min, 0.0, params.pressure_max):
        l, _ = equilibrium_length(q, 0.0, params)
        levels.append(l)
    best = 0.0
    for a in levels:
        for b in levels:
            for c in levels:
                expr = a * a + b * b + c * c - a * b - b * c - a * c
                best = max(best, expr)
    return best


def calibrate_offset_radius(params: ArmParams, target_bend_deg: float = 95.0) -> ArmParams:
    """Set the chamber offset radius so the max whole-arm bend hits the target.

    The whole-arm bend sum over sections has the closed form
    2*sqrt(expr_max)/d radians, independent of section lengths.
    """
    theta = math.radians(target_bend_deg)
    d = params.sections * 2.0 * math.sqrt(max_section_expr(params)) / (3.0 * theta)
    return replace(params, chamber_offset_radius=d)
