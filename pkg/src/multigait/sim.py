"""Planar (sagittal-plane) biped rigid-body simulator.

Seven links (torso, thigh/shank/foot per leg) move in the x-z plane with 9
generalized coordinates [x, z, pitch, hip/knee/ankle x2].  Dynamics come
from point Jacobians: the mass matrix is sum m J^T J plus rotary-inertia and
armature terms, velocity-product (Coriolis/centrifugal) forces are assembled
from closed-form point accelerations, and ground contact is a damped normal
spring with an anchor-spring Coulomb friction model.  Integration is
semi-implicit Euler at dt = 0.005 s, batched over environments.

The 12-joint interface of the full robot is preserved: the 6 non-sagittal
channels are frozen at their defaults with zero velocity.
"""

from dataclasses import dataclass, field

import numpy as np

from .robot import DEFAULT_JOINT_POS, DEFAULT_MODEL, NUM_JOINTS, SAGITTAL_INDICES

NUM_GEN = 9
PITCH = 2
JOINT_SLICE = slice(3, NUM_GEN)
NUM_SAGITTAL = 6
DIVERGENCE_LIMIT = 1e6

TORSO, L_THIGH, L_SHANK, L_FOOT, R_THIGH, R_SHANK, R_FOOT = range(7)
NUM_BODIES = 7

# generalized angle dofs that rotate each body (pitch always does)
BODY_ANGLE_DOFS = (
    (2,),
    (2, 3), (2, 3, 4), (2, 3, 4, 5),
    (2, 6), (2, 6, 7), (2, 6, 7, 8),
)
ANGLE_INFLUENCE = np.zeros((NUM_BODIES, NUM_GEN))
for _b, _dofs in enumerate(BODY_ANGLE_DOFS):
    ANGLE_INFLUENCE[_b, list(_dofs)] = 1.0

# pivot table: angle dof 2..8 -> row in the kinematics pivot array
DOF_PIVOT = (0, 1, 2, 3, 1, 4, 5)  # base, hip, L_knee, L_ankle, hip, R_knee, R_ankle

CONTACT_NAMES = ("L_toe", "L_heel", "R_toe", "R_heel",
                 "L_knee", "R_knee", "torso_low", "torso_top")
CONTACT_BODY = (L_FOOT, L_FOOT, R_FOOT, R_FOOT, L_THIGH, R_THIGH, TORSO, TORSO)
NUM_CONTACTS = len(CONTACT_NAMES)
FOOT_POINT_IDX = ((0, 1), (2, 3))
KNEE_POINT_IDX = (4, 5)
TORSO_POINT_IDX = (6, 7)


@dataclass
class EnvParams:
    """Per-environment physical parameters, nominally the identity draw."""

    friction: float = 0.8
    restitution: float = 0.0
    base_mass_delta: float = 0.0
    link_inertia_scale: np.ndarray = field(default_factory=lambda: np.ones(NUM_BODIES))
    com_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    motor_strength: float = 1.0
    kp_scale: float = 1.0
    kd_scale: float = 1.0
    joint_friction_scale: float = 1.0
    joint_damping_scale: float = 1.0
    armature_scale: float = 1.0
    action_lag: int = 0
    push_max_lin: float = 2.0
    push_max_ang: float = 1.5
    push_interval_s: float = 10.0
    init_scale: tuple = (1.0, 1.0)
    init_offset: tuple = (0.0, 0.0)


def _dvec(psi):
    """Unit vector of a segment hanging at cumulative angle psi (0 = down)."""
    return np.stack([np.sin(psi), -np.cos(psi)], axis=-1)


def _rot(psi, local):
    """Rotate a body-local (x, z) vector into the world frame."""
    c, s = np.cos(psi), np.sin(psi)
    lx, lz = local
    return np.stack([lx * c - lz * s, lx * s + lz * c], axis=-1)


class PlanarSim:
    """Batched planar biped dynamics with penalty ground contact."""

    def __init__(self, num_envs, model=DEFAULT_MODEL, params=None, dt=0.005,
                 gravity=None):
        self.n = int(num_envs)
        self.model = model
        self.dt = float(dt)
        self.gravity = model.gravity if gravity is None else float(gravity)

        self.qg = np.zeros((self.n, NUM_GEN))
        self.vg = np.zeros((self.n, NUM_GEN))
        self.anchor_x = np.zeros((self.n, NUM_CONTACTS))
        self.last_push = np.zeros((self.n, 2))
        self.apex = np.zeros(self.n)
        self.diverged = np.zeros(self.n, dtype=bool)
        self.contact_force = np.zeros((self.n, NUM_CONTACTS, 2))
        self.contact_active = np.zeros((self.n, NUM_CONTACTS), dtype=bool)

        self._alloc_param_arrays()
        self.set_params(None, [EnvParams() for _ in range(self.n)]
                        if params is None else params)
        self.reset()

    # -- per-environment parameters ------------------------------------

    def _alloc_param_arrays(self):
        n = self.n
        self.masses = np.zeros((n, NUM_BODIES))
        self.inertias = np.zeros((n, NUM_BODIES))
        self.com_offset = np.zeros((n, 2))
        self.friction = np.zeros(n)
        self.restitution = np.zeros(n)
        self.joint_damping = np.zeros(n)
        self.joint_dry = np.zeros(n)
        self.armature = np.zeros(n)
        self.push_max_lin = np.zeros(n)
        self.push_max_ang = np.zeros(n)
        self.params = [None] * n

    def set_params(self, rows, params):
        """Install EnvParams for the given rows (all rows when None)."""
        rows = range(self.n) if rows is None else np.atleast_1d(rows)
        m = self.model
        base_m = np.array([m.torso_mass, m.thigh_mass, m.shank_mass, m.foot_mass,
                           m.thigh_mass, m.shank_mass, m.foot_mass])
        base_i = np.array([m.torso_inertia, m.thigh_inertia, m.shank_inertia,
                           m.foot_inertia, m.thigh_inertia, m.shank_inertia,
                           m.foot_inertia])
        for row, p in zip(rows, params):
            self.params[row] = p
            self.masses[row] = base_m
            self.masses[row, TORSO] += p.base_mass_delta
            self.inertias[row] = base_i * np.asarray(p.link_inertia_scale)
            self.com_offset[row] = p.com_offset
            self.friction[row] = p.friction
            self.restitution[row] = p.restitution
            self.joint_damping[row] = m.joint_damping * p.joint_damping_scale
            self.joint_dry[row] = m.joint_dry_friction * p.joint_friction_scale
            self.armature[row] = m.joint_armature * p.armature_scale
            self.push_max_lin[row] = p.push_max_lin
            self.push_max_ang[row] = p.push_max_ang

    # -- kinematics ----------------------------------------------------

    def kinematics(self, qg=None, rows=None):
        """World positions of joints, COMs, and contact points.

        rows selects which environments' parameters to pair with an explicit
        qg slice; the default uses every environment in order.
        """
        qg = self.qg if qg is None else qg
        com_offset = self.com_offset if rows is None else self.com_offset[rows]
        m = self.model
        th = qg[:, PITCH]
        base = qg[:, 0:2]
        psi = qg[:, 2:3] + np.concatenate([np.zeros((qg.shape[0], 1)),
                                           np.cumsum(qg[:, 3:6], axis=1),
                                           np.cumsum(qg[:, 6:9], axis=1)], axis=1)
        # psi columns: torso, L thigh/shank/foot, R thigh/shank/foot
        hip = base + m.hip_drop * _dvec(th)
        l_knee = hip + m.thigh_length * _dvec(psi[:, 1])
        l_ankle = l_knee + m.shank_length * _dvec(psi[:, 2])
        r_knee = hip + m.thigh_length * _dvec(psi[:, 4])
        r_ankle = r_knee + m.shank_length * _dvec(psi[:, 5])

        coms = np.stack([
            base + _rot(th, (1.0, 0.0)) * com_offset[:, 0:1]
            + _rot(th, (0.0, 1.0)) * com_offset[:, 1:2],
            hip + 0.5 * m.thigh_length * _dvec(psi[:, 1]),
            l_knee + 0.5 * m.shank_length * _dvec(psi[:, 2]),
            l_ankle + _rot(psi[:, 3], (0.5 * (m.toe_length - m.heel_length),
                                       -m.ankle_height)),
            hip + 0.5 * m.thigh_length * _dvec(psi[:, 4]),
            r_knee + 0.5 * m.shank_length * _dvec(psi[:, 5]),
            r_ankle + _rot(psi[:, 6], (0.5 * (m.toe_length - m.heel_length),
                                       -m.ankle_height)),
        ], axis=1)

        contacts = np.stack([
            l_ankle + _rot(psi[:, 3], (m.toe_length, -m.ankle_height)),
            l_ankle + _rot(psi[:, 3], (-m.heel_length, -m.ankle_height)),
            r_ankle + _rot(psi[:, 6], (m.toe_length, -m.ankle_height)),
            r_ankle + _rot(psi[:, 6], (-m.heel_length, -m.ankle_height)),
            l_knee, r_knee,
            hip,
            base + _rot(th, (0.0, m.torso_top)),
        ], axis=1)

        pivots = np.stack([base, hip, l_knee, l_ankle, r_knee, r_ankle], axis=1)
        return {"psi": psi, "base": base, "hip": hip,
                "l_knee": l_knee, "l_ankle": l_ankle,
                "r_knee": r_knee, "r_ankle": r_ankle,
                "coms": coms, "contacts": contacts, "pivots": pivots}

    def _jacobians(self, kin, points, body_ids):
        """d(point)/d(qg) for world points attached to the given bodies."""
        n, p = points.shape[:2]
        jac = np.zeros((n, p, 2, NUM_GEN))
        jac[:, :, 0, 0] = 1.0
        jac[:, :, 1, 1] = 1.0
        pivots = kin["pivots"]
        for i, b in enumerate(body_ids):
            for dof in BODY_ANGLE_DOFS[b]:
                r = points[:, i] - pivots[:, DOF_PIVOT[dof - 2]]
                jac[:, i, 0, dof] = -r[:, 1]
                jac[:, i, 1, dof] = r[:, 0]
        return jac

    def mass_matrix(self, kin):
        jac = self._jacobians(kin, kin["coms"], range(NUM_BODIES))
        mass = np.einsum("nb,nbiq,nbir->nqr", self.masses, jac, jac)
        mass += np.einsum("nb,bq,br->nqr", self.inertias,
                          ANGLE_INFLUENCE, ANGLE_INFLUENCE)
        idx = np.arange(3, NUM_GEN)
        mass[:, idx, idx] += self.armature[:, None]
        return mass, jac

    def _velocity_product_acc(self, kin):
        """COM accelerations from pure joint rates (the q'' = 0 part)."""
        rates = self.vg @ ANGLE_INFLUENCE.T  # (n, bodies) absolute angle rates
        r2 = rates ** 2
        base, hip = kin["base"], kin["hip"]
        coms = kin["coms"]
        th2 = r2[:, TORSO:TORSO + 1]
        hip_piece = -th2 * (hip - base)
        acc = np.zeros_like(coms)
        acc[:, TORSO] = -th2 * (coms[:, TORSO] - base)
        for thigh, shank, foot, knee, ankle in (
                (L_THIGH, L_SHANK, L_FOOT, kin["l_knee"], kin["l_ankle"]),
                (R_THIGH, R_SHANK, R_FOOT, kin["r_knee"], kin["r_ankle"])):
            t2 = r2[:, thigh:thigh + 1]
            s2 = r2[:, shank:shank + 1]
            f2 = r2[:, foot:foot + 1]
            thigh_full = -t2 * (knee - hip)
            shank_full = -s2 * (ankle - knee)
            acc[:, thigh] = hip_piece - t2 * (coms[:, thigh] - hip)
            acc[:, shank] = hip_piece + thigh_full - s2 * (coms[:, shank] - knee)
            acc[:, foot] = hip_piece + thigh_full + shank_full \
                - f2 * (coms[:, foot] - ankle)
        return acc

    # -- forces --------------------------------------------------------

    def _joint_damping_diag(self):
        """Per-joint damping coefficients applied to the post-step velocity.

        Viscous damping, a velocity-linearized dry-friction coefficient, and
        the joint-limit damper (gated on the predicted position) are all
        treated implicitly by adding dt * c to the solve matrix diagonal, so
        each one dissipates exactly c * dt * v'^2 and cannot reverse a joint
        within a step no matter how light the degree of freedom is.
        """
        m = self.model
        v = self.vg[:, JOINT_SLICE]
        q_pred = self.qg[:, JOINT_SLICE] + self.dt * v
        speed = np.abs(v)
        dry_coeff = self.joint_dry[:, None] * np.where(
            speed > 1e-12, np.tanh(speed / 0.1) / np.maximum(speed, 1e-12), 10.0)
        lower = np.tile(m.joint_lower, 2)
        upper = np.tile(m.joint_upper, 2)
        outside = (q_pred < lower) | (q_pred > upper)
        return (self.joint_damping[:, None] + dry_coeff
                + m.limit_damping * outside)

    def _joint_limit_torque(self):
        """One-sided limit-spring torque, evaluated at the predicted position.

        Using the position one step of the current velocity ahead starts the
        braking impulse before stored limit-spring energy shows up in the
        ledger, which keeps fast limit hits from creating energy.
        """
        m = self.model
        q_pred = self.qg[:, JOINT_SLICE] + self.dt * self.vg[:, JOINT_SLICE]
        lower = np.tile(m.joint_lower, 2)
        upper = np.tile(m.joint_upper, 2)
        return m.limit_stiffness * (np.maximum(lower - q_pred, 0.0)
                                    - np.maximum(q_pred - upper, 0.0))

    def _solve_contact(self, jac_con, solve_mat, v_free, contacts, con_vel):
        """Contact forces with implicit damping via an active-set solve.

        The normal spring acts on the penetration predicted one step of the
        current velocity ahead; both dampers act on the post-step point
        velocity u' = u_free + dt W f, which makes their work exactly
        -c dt u'^2 regardless of how little effective mass a point carries.
        A point engaged while still above the plane gets at most the force
        that lands it exactly on the surface, so a reported normal force
        always comes with a point at or below ground level.  Gates (normal
        force >= 0) and Coulomb caps are enforced by re-solving a fixed
        number of sweeps with offending components pinned.
        """
        n = self.n
        m = self.model
        nc2 = 2 * NUM_CONTACTS
        jac2 = jac_con.reshape(n, nc2, NUM_GEN)
        spread = np.linalg.solve(solve_mat, jac2.transpose(0, 2, 1))
        wmat = jac2 @ spread
        u_free = np.einsum("npq,nq->np", jac2, v_free)

        z_cur = contacts[:, :, 1]
        pen_pred = -(z_cur + self.dt * con_vel[:, :, 1])
        cand = pen_pred > 0.0
        above = z_cur > 0.0

        zeta = self.model.contact_damping_ratio * (1.0 - self.restitution)
        m_eff = m.total_mass() / 4.0
        c_n = 2.0 * zeta[:, None] * np.sqrt(m.contact_stiffness * m_eff)
        c_n = np.broadcast_to(c_n, (n, NUM_CONTACTS))
        damp = np.empty((n, nc2))
        damp[:, 0::2] = m.tangential_damping
        damp[:, 1::2] = c_n

        stretch = contacts[:, :, 0] - self.anchor_x
        f_el = np.empty((n, nc2))
        f_el[:, 0::2] = -m.tangential_stiffness * stretch
        f_el[:, 1::2] = m.contact_stiffness * np.maximum(pen_pred, 0.0)
        b_free = f_el - damp * u_free

        # touchdown rows, scaled to a unit diagonal: W f = -(z/dt + u_free)/dt
        w_nn = np.maximum(wmat[:, 1::2, 1::2][:, range(NUM_CONTACTS),
                                              range(NUM_CONTACTS)], 1e-12)
        b_touch = -(z_cur / self.dt + u_free[:, 1::2]) / (self.dt * w_nn)

        eye = np.eye(nc2)
        alive = cand.copy()
        touch = np.zeros((n, NUM_CONTACTS), dtype=bool)
        clamp_val = np.zeros((n, NUM_CONTACTS))
        clamped = np.zeros((n, NUM_CONTACTS), dtype=bool)
        f = np.zeros((n, nc2))
        for sweep in range(6):
            if sweep:
                f_n = f[:, 1::2]
                f_t = f[:, 0::2]
                alive = cand & (f_n > 0.0)
                z_post = z_cur + self.dt * (
                    u_free[:, 1::2] + self.dt * np.einsum(
                        "npq,nq->np", wmat[:, 1::2, :], f))
                # an above-plane point whose spring force would over-brake it
                # hands its row to the landing constraint, which asks for less
                touch = touch | (above & alive & (z_post > 0.0))
                cap = self.friction[:, None] * np.maximum(f_n, 0.0)
                clamped = alive & (np.abs(f_t) > cap)
                clamp_val = np.sign(f_t) * cap
            free = np.empty((n, nc2), dtype=bool)
            free[:, 0::2] = alive & ~clamped
            free[:, 1::2] = alive
            amat = np.where(free[:, :, None],
                            eye + self.dt * damp[:, :, None] * wmat,
                            eye)
            trow = touch & alive
            amat[:, 1::2, :] = np.where(
                trow[:, :, None],
                wmat[:, 1::2, :] / w_nn[:, :, None],
                amat[:, 1::2, :])
            b = np.where(free, b_free, 0.0)
            b[:, 0::2] = np.where(alive & clamped, clamp_val, b[:, 0::2])
            b[:, 1::2] = np.where(trow, b_touch, b[:, 1::2])
            f = np.linalg.solve(amat, b[..., None])[..., 0]
        f_n = np.where(alive, np.maximum(f[:, 1::2], 0.0), 0.0)
        cap = self.friction[:, None] * f_n
        f_t = np.clip(f[:, 0::2], -cap, cap)
        force = np.stack([f_t, f_n], axis=-1)
        return force, f_n > 0.0, spread

    # -- stepping ------------------------------------------------------

    def step(self, torques12):
        """Advance one physics step under the given 12-joint torques.

        Only the sagittal channels act on the dynamics; returns the
        per-environment divergence flags (latched until reset).
        """
        torques12 = np.atleast_2d(torques12)
        kin = self.kinematics()
        mass, jac_com = self.mass_matrix(kin)

        rhs = np.einsum("nb,nbq->nq", -self.gravity * self.masses,
                        jac_com[:, :, 1, :])
        rhs -= np.einsum("nb,nbiq,nbi->nq", self.masses, jac_com,
                         self._velocity_product_acc(kin))
        rhs[:, JOINT_SLICE] += torques12[:, SAGITTAL_INDICES]
        rhs[:, JOINT_SLICE] += self._joint_limit_torque()

        # joint-space dampers enter the matrix so they act on v'
        solve_mat = mass.copy()
        idx = np.arange(3, NUM_GEN)
        solve_mat[:, idx, idx] += self.dt * self._joint_damping_diag()
        momentum = np.einsum("nqr,nr->nq", mass, self.vg)
        v_free = np.linalg.solve(
            solve_mat, (momentum + self.dt * rhs)[..., None])[..., 0]

        contacts = kin["contacts"]
        jac_con = self._jacobians(kin, contacts, CONTACT_BODY)
        con_vel = np.einsum("npiq,nq->npi", jac_con, self.vg)
        if np.any(contacts[:, :, 1] + self.dt * con_vel[:, :, 1] < 0.0):
            force, active, spread = self._solve_contact(
                jac_con, solve_mat, v_free, contacts, con_vel)
            self.vg = v_free + self.dt * np.einsum(
                "nqp,np->nq", spread, force.reshape(self.n, -1))
        else:
            force = np.zeros((self.n, NUM_CONTACTS, 2))
            active = np.zeros((self.n, NUM_CONTACTS), dtype=bool)
            self.vg = v_free
        self.contact_force = force
        self.contact_active = active

        self.qg = self.qg + self.dt * self.vg

        # anchors live in the post-step frame: a point coming into contact
        # starts with zero stretch, and slip only ever clips stored stretch
        # down to what the friction cone can hold
        x = self.kinematics()["contacts"][:, :, 0]
        limit = self.friction[:, None] * force[:, :, 1] \
            / self.model.tangential_stiffness
        held = np.clip(x - self.anchor_x, -limit, limit)
        self.anchor_x = np.where(active, x - held, x)

        foot_contact = self.foot_contact()
        airborne = ~foot_contact.any(axis=1)
        z = self.qg[:, 1]
        self.apex = np.where(airborne, np.maximum(self.apex, z), z)

        bad = (np.abs(self.qg).max(axis=1) > DIVERGENCE_LIMIT) \
            | (np.abs(self.vg).max(axis=1) > DIVERGENCE_LIMIT) \
            | ~np.isfinite(self.qg).all(axis=1) | ~np.isfinite(self.vg).all(axis=1)
        self.diverged |= bad
        return self.diverged

    def reset(self, rows=None, rng=None):
        """Stand the selected environments up at rest.

        With an rng, joint angles start at default * scale + offset with
        scale and offset drawn per joint from the environment's init ranges;
        without one the pose is exactly the default.  The base is dropped so
        the lowest contact point touches the ground.
        """
        rows = np.arange(self.n) if rows is None else np.atleast_1d(rows)
        q_def = DEFAULT_JOINT_POS[SAGITTAL_INDICES]
        for row in rows:
            p = self.params[row]
            if rng is None:
                q_j = q_def.copy()
            else:
                scale = rng.uniform(p.init_scale[0], p.init_scale[1], NUM_SAGITTAL)
                offset = rng.uniform(p.init_offset[0], p.init_offset[1], NUM_SAGITTAL)
                q_j = q_def * scale + offset
            self.qg[row, :3] = 0.0
            self.qg[row, JOINT_SLICE] = q_j
        self.vg[rows] = 0.0
        kin = self.kinematics(self.qg[rows], rows=rows)
        lowest = kin["contacts"][:, :, 1].min(axis=1)
        self.qg[rows, 1] -= lowest
        # a pure vertical shift leaves contact x coordinates unchanged
        self.anchor_x[rows] = kin["contacts"][:, :, 0]
        self.apex[rows] = self.qg[rows, 1]
        self.last_push[rows] = 0.0
        self.diverged[rows] = False
        self.contact_force[rows] = 0.0
        self.contact_active[rows] = False
        return self

    def apply_push(self, rows, rng):
        """Kick the base with a bounded random velocity increment."""
        rows = np.atleast_1d(rows)
        d_lin = rng.uniform(-1.0, 1.0, rows.shape[0]) * self.push_max_lin[rows]
        d_ang = rng.uniform(-1.0, 1.0, rows.shape[0]) * self.push_max_ang[rows]
        self.vg[rows, 0] += d_lin
        self.vg[rows, PITCH] += d_ang
        self.last_push[rows, 0] = d_lin
        self.last_push[rows, 1] = d_ang
        return self

    # -- read-outs -----------------------------------------------------

    def foot_contact(self):
        out = np.zeros((self.n, 2), dtype=bool)
        for foot, idx in enumerate(FOOT_POINT_IDX):
            out[:, foot] = self.contact_active[:, list(idx)].any(axis=1)
        return out

    def foot_normal_force(self):
        out = np.zeros((self.n, 2))
        for foot, idx in enumerate(FOOT_POINT_IDX):
            out[:, foot] = self.contact_force[:, list(idx), 1].sum(axis=1)
        return out

    def knee_contact_force(self):
        return self.contact_force[:, list(KNEE_POINT_IDX), 1]

    def base_contact_force(self):
        return self.contact_force[:, list(TORSO_POINT_IDX), 1].sum(axis=1)

    def joint_positions(self):
        """Full 12-vector joint view (non-sagittal frozen at default)."""
        q = np.tile(DEFAULT_JOINT_POS, (self.n, 1))
        q[:, SAGITTAL_INDICES] = self.qg[:, JOINT_SLICE]
        return q

    def joint_velocities(self):
        dq = np.zeros((self.n, NUM_JOINTS))
        dq[:, SAGITTAL_INDICES] = self.vg[:, JOINT_SLICE]
        return dq

    def base_lin_vel(self):
        """Base velocity as a 3-vector (x, y=0, z) per environment."""
        v = np.zeros((self.n, 3))
        v[:, 0] = self.vg[:, 0]
        v[:, 2] = self.vg[:, 1]
        return v

    def base_ang_vel(self):
        """Angular velocity as (roll=0, pitch rate, yaw=0)."""
        w = np.zeros((self.n, 3))
        w[:, 1] = self.vg[:, PITCH]
        return w

    def projected_gravity(self):
        """Gravity direction in the base frame; (0, 0, -1) when level."""
        th = self.qg[:, PITCH]
        g = np.zeros((self.n, 3))
        g[:, 0] = -np.sin(th)
        g[:, 2] = -np.cos(th)
        return g

    def measure(self):
        """Kinematic quantities for rewards and the privileged critic."""
        kin = self.kinematics()
        contacts = kin["contacts"]
        jac_con = self._jacobians(kin, contacts, CONTACT_BODY)
        con_vel = np.einsum("npiq,nq->npi", jac_con, self.vg)
        clearance = np.zeros((self.n, 2))
        vvel = np.zeros((self.n, 2))
        fwd_vel = np.zeros((self.n, 2))
        for foot, idx in enumerate(FOOT_POINT_IDX):
            idx = list(idx)
            clearance[:, foot] = contacts[:, idx, 1].min(axis=1)
            vvel[:, foot] = con_vel[:, idx, 1].mean(axis=1)
            fwd_vel[:, foot] = con_vel[:, idx, 0].mean(axis=1)
        shank_angle = kin["psi"][:, [L_SHANK, R_SHANK]]
        return {
            "base_height": self.qg[:, 1].copy(),
            "apex_height": self.apex.copy(),
            "foot_clearance": clearance,
            "foot_vertical_vel": vvel,
            "foot_forward_vel": fwd_vel,
            "foot_contact": self.foot_contact(),
            "foot_normal_force": self.foot_normal_force(),
            "knee_contact_force": self.knee_contact_force(),
            "base_contact_force": self.base_contact_force(),
            "shank_angle": shank_angle.copy(),
        }

    def mechanical_energy(self):
        """Kinetic + gravitational + stored spring energy per environment.

        Every elastic store of the model is counted: ground normal springs,
        tangential anchor springs, and the one-sided joint-limit springs.
        """
        kin = self.kinematics()
        mass, _ = self.mass_matrix(kin)
        kinetic = 0.5 * np.einsum("nq,nqr,nr->n", self.vg, mass, self.vg)
        potential = self.gravity * np.einsum("nb,nb->n", self.masses,
                                             kin["coms"][:, :, 1])
        pen = np.maximum(-kin["contacts"][:, :, 1], 0.0)
        spring = 0.5 * self.model.contact_stiffness * np.sum(pen ** 2, axis=1)
        stretch = (kin["contacts"][:, :, 0] - self.anchor_x) * self.contact_active
        spring += 0.5 * self.model.tangential_stiffness * np.sum(stretch ** 2, axis=1)
        q = self.qg[:, JOINT_SLICE]
        over = np.maximum(q - np.tile(self.model.joint_upper, 2), 0.0) \
            + np.maximum(np.tile(self.model.joint_lower, 2) - q, 0.0)
        spring += 0.5 * self.model.limit_stiffness * np.sum(over ** 2, axis=1)
        return kinetic + potential + spring
