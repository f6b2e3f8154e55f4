"""Discretized Cosserat rod: state, strains, loads, stepping, energies.

A rod is (n_elem + 1) nodes carrying positions/velocities and n_elem
elements carrying orthonormal director frames and angular velocities.
Linear momentum balance lives on nodes (lab frame), angular momentum on
elements (local frame).  Time stepping is an explicit position-Verlet
scheme with internal loads re-evaluated at the half step.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


class SimulationDiverged(RuntimeError):
    """Raised when a state field turns NaN/Inf during stepping."""

    def __init__(self, msg, step=0, rod=None):
        super().__init__(msg)
        self.step = step
        self.rod = rod


class SingularGeometry(RuntimeError):
    """Raised when an element collapses below 1e-12 m."""


@dataclass
class RodState:
    positions: np.ndarray            # (n+1, 3) lab frame, m
    velocities: np.ndarray           # (n+1, 3) lab frame, m/s
    directors: np.ndarray            # (n, 3, 3) rows are directors d1,d2,d3
    angular_velocities: np.ndarray   # (n, 3) local frame, rad/s
    ref_lengths: np.ndarray          # (n,) rest element lengths, m
    areas: np.ndarray                # (n,) cross-section areas, m^2
    second_moments: np.ndarray       # (n, 3) diagonal of I (I1, I2, I3), m^4
    density: float
    youngs_modulus: float
    shear_modulus: float
    shear_correction: float
    damping_coefficient: float = 0.0
    base_anchor: tuple | None = None  # (position (3,), director frame (3,3))
    _scratch: dict = field(default_factory=dict, repr=False)

    @property
    def n_elem(self):
        return self.ref_lengths.shape[0]

    @property
    def voronoi_lengths(self):
        return 0.5 * (self.ref_lengths[:-1] + self.ref_lengths[1:])

    @property
    def node_masses(self):
        """Lumped node masses: half of each adjacent element's mass."""
        em = self.density * self.areas * self.ref_lengths
        m = np.zeros(self.n_elem + 1)
        m[:-1] += 0.5 * em
        m[1:] += 0.5 * em
        return m

    @property
    def element_inertia(self):
        """Per-element angular mass diag(rho * I * ref_length), (n, 3)."""
        return self.density * self.second_moments * self.ref_lengths[:, None]

    @property
    def rest_length(self):
        return float(self.ref_lengths.sum())

    def scratch(self):
        """Preallocated work arrays shared by stepping calls on this rod."""
        if not self._scratch:
            n = self.n_elem
            self._scratch = {
                "f_int": np.zeros((n + 1, 3)),
                "t_int": np.zeros((n, 3)),
                "eps": np.zeros((n, 3)),
                "kappa": np.zeros((max(n - 1, 1), 3)),
                "dil": np.zeros(n),
                "mass": self.node_masses,
                "jdiag": self.element_inertia,
            }
        return self._scratch

    def anchor_arrays(self):
        if self.base_anchor is None:
            return False, np.zeros(3), np.eye(3)
        pos, frame = self.base_anchor
        return True, np.asarray(pos, dtype=float), np.asarray(frame, dtype=float)

    def copy(self):
        return RodState(
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            directors=self.directors.copy(),
            angular_velocities=self.angular_velocities.copy(),
            ref_lengths=self.ref_lengths.copy(),
            areas=self.areas.copy(),
            second_moments=self.second_moments.copy(),
            density=self.density,
            youngs_modulus=self.youngs_modulus,
            shear_modulus=self.shear_modulus,
            shear_correction=self.shear_correction,
            damping_coefficient=self.damping_coefficient,
            base_anchor=None if self.base_anchor is None else
            (self.base_anchor[0].copy(), self.base_anchor[1].copy()),
        )


@dataclass
class StrainField:
    shear_strain: np.ndarray   # (n, 3) local frame, dimensionless
    curvature: np.ndarray      # (n-1, 3) local frame, 1/m


@dataclass
class LoadField:
    internal_forces: np.ndarray    # (n, 3) local frame, N
    internal_torques: np.ndarray   # (n-1, 3) local frame, N m
    external_forces: np.ndarray    # (n+1, 3) lab frame, N (totals per node)
    external_couples: np.ndarray   # (n, 3) lab frame, N m (totals per element)

    @classmethod
    def zeros(cls, n_elem):
        return cls(np.zeros((n_elem, 3)), np.zeros((max(n_elem - 1, 0), 3)),
                   np.zeros((n_elem + 1, 3)), np.zeros((n_elem, 3)))


def _positive(name, value):
    if not np.all(np.asarray(value) > 0):
        raise ValueError(f"{name} must be strictly positive")
    return value


def build_rod(length, radius, n_elem, density, youngs_modulus,
              shear_modulus=None, shear_correction=0.9, damping=0.0,
              direction=(0.0, 0.0, 1.0), normal=(1.0, 0.0, 0.0),
              origin=(0.0, 0.0, 0.0)):
    """Construct a straight rod along `direction` starting at `origin`.

    `radius` may be a scalar or a per-element array (tapered rods).
    `shear_modulus` defaults to E/3 (incompressible limit).
    """
    if n_elem < 2:
        raise ValueError("n_elem too small (need at least 2 elements)")
    _positive("length", length)
    _positive("density", density)
    _positive("youngs_modulus", youngs_modulus)
    if shear_modulus is None:
        shear_modulus = youngs_modulus / 3.0
    _positive("shear_modulus", shear_modulus)
    _positive("shear_correction", shear_correction)
    if damping < 0:
        raise ValueError("damping must be non-negative")

    radius = np.broadcast_to(np.asarray(radius, dtype=float), (n_elem,)).copy()
    _positive("radius", radius)

    d3 = np.asarray(direction, dtype=float)
    d3 = d3 / np.linalg.norm(d3)
    d1 = np.asarray(normal, dtype=float)
    d1 = d1 - (d1 @ d3) * d3
    if np.linalg.norm(d1) < 1e-12:
        raise ValueError("normal must not be parallel to direction")
    d1 = d1 / np.linalg.norm(d1)
    d2 = np.cross(d3, d1)

    s = np.linspace(0.0, length, n_elem + 1)
    positions = np.asarray(origin, dtype=float)[None, :] + s[:, None] * d3[None, :]
    directors = np.empty((n_elem, 3, 3))
    directors[:, 0] = d1
    directors[:, 1] = d2
    directors[:, 2] = d3
    # rest lengths from the discrete geometry so the rest state is exactly
    # strain-free
    ref_lengths = np.linalg.norm(np.diff(positions, axis=0), axis=1)

    areas = np.pi * radius**2
    i_bend = np.pi * radius**4 / 4.0
    second_moments = np.stack([i_bend, i_bend, 2.0 * i_bend], axis=1)

    return RodState(
        positions=positions,
        velocities=np.zeros((n_elem + 1, 3)),
        directors=directors,
        angular_velocities=np.zeros((n_elem, 3)),
        ref_lengths=ref_lengths,
        areas=areas,
        second_moments=second_moments,
        density=float(density),
        youngs_modulus=float(youngs_modulus),
        shear_modulus=float(shear_modulus),
        shear_correction=float(shear_correction),
        damping_coefficient=float(damping),
    )


def compute_strains(rod):
    """Shear strain per element and curvature per interior Voronoi node."""
    n = rod.n_elem
    tangents = np.diff(rod.positions, axis=0)
    lengths = np.linalg.norm(tangents, axis=1)
    if np.any(lengths < 1e-12):
        raise SingularGeometry("element length below 1e-12 m")
    dil = lengths / rod.ref_lengths
    unit = tangents / lengths[:, None]
    local_t = np.einsum("eij,ej->ei", rod.directors, unit)
    eps = dil[:, None] * local_t
    eps[:, 2] -= 1.0
    rotvecs = np.zeros((max(n - 1, 1), 3))
    K.relative_rotvecs(rod.directors, rotvecs)
    kappa = -rotvecs[: n - 1] / rod.voronoi_lengths[:, None]
    return StrainField(shear_strain=eps, curvature=kappa)


def _stiffness_diagonals(rod):
    """(S diag per element, B diag per Voronoi node)."""
    E, G, ac = rod.youngs_modulus, rod.shear_modulus, rod.shear_correction
    A = rod.areas
    S = np.stack([ac * G * A, ac * G * A, E * A], axis=1)
    wI = rod.second_moments * rod.ref_lengths[:, None]
    Bv = (wI[:-1] + wI[1:]) / (2.0 * rod.voronoi_lengths[:, None])
    B = np.stack([E * Bv[:, 0], E * Bv[:, 1], G * Bv[:, 2]], axis=1)
    return S, B


def internal_loads(rod, strains):
    """Linear constitutive laws n = S eps, tau = B kappa; external zeroed."""
    S, B = _stiffness_diagonals(rod)
    out = LoadField.zeros(rod.n_elem)
    out.internal_forces[:] = S * strains.shear_strain
    out.internal_torques[:] = B * strains.curvature
    return out


def verlet_step(rod, loads, dt, step_index=0):
    """One position-Verlet step; mutates `rod` in place and returns it.

    Internal elastic loads are re-evaluated at the half-step configuration;
    the external entries of `loads` are held fixed over the step.  Rayleigh
    dissipation enters as -gamma*m*v per node and -gamma*J*omega per element.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    sc = rod.scratch()
    anchored, apos, aq = rod.anchor_arrays()
    K.rod_half_kinematics(rod.positions, rod.velocities, rod.directors,
                          rod.angular_velocities, 0.5 * dt, anchored, apos, aq)
    st = K.rod_internal_forces(
        rod.positions, rod.velocities, rod.directors, rod.angular_velocities,
        rod.ref_lengths, rod.voronoi_lengths, rod.areas, rod.second_moments,
        rod.youngs_modulus, rod.shear_modulus, rod.shear_correction, rod.density,
        False, K._DUMMY, K._DUMMY, K._DUMMY, K._DUMMY, K._DUMMY, K._DUMMY,
        K._DUMMY, K._DUMMY, anchored, aq,
        sc["f_int"], sc["t_int"], sc["eps"], sc["kappa"], sc["dil"])
    if st == K.SINGULAR:
        raise SingularGeometry("element length below 1e-12 m")
    K.rod_finish_substep(rod.positions, rod.velocities, rod.directors,
                         rod.angular_velocities, sc["mass"], sc["jdiag"],
                         rod.damping_coefficient, sc["f_int"], sc["t_int"],
                         loads.external_forces, loads.external_couples, dt,
                         anchored, apos, aq)
    if not (np.isfinite(rod.positions).all() and np.isfinite(rod.velocities).all()):
        raise SimulationDiverged("non-finite state", step=step_index)
    return rod


def simulate_rod(rod, loads, dt, n_steps):
    """Advance `rod` n_steps with fixed external loads (fast fused loop)."""
    sc = rod.scratch()
    anchored, apos, aq = rod.anchor_arrays()
    st, idx = K.simulate_rod(
        rod.positions, rod.velocities, rod.directors, rod.angular_velocities,
        rod.ref_lengths, rod.voronoi_lengths, rod.areas, rod.second_moments,
        rod.youngs_modulus, rod.shear_modulus, rod.shear_correction,
        rod.density, rod.damping_coefficient, sc["mass"], sc["jdiag"],
        loads.external_forces, loads.external_couples, dt, n_steps,
        anchored, apos, aq,
        sc["f_int"], sc["t_int"], sc["eps"], sc["kappa"], sc["dil"])
    if st == K.SINGULAR:
        raise SingularGeometry(f"element collapsed at step {idx}")
    if st == K.DIVERGED:
        raise SimulationDiverged("non-finite state", step=idx)
    return rod


def rod_energies(rod, strains):
    """Kinetic, bending, shear/stretch and rotational energy (all >= 0).

    'kinetic' is the translational center-line energy 0.5 * int rho A v.v ds;
    rotational energy is reported separately under 'rotational'.
    """
    v2 = np.einsum("ij,ij->i", rod.velocities, rod.velocities)
    kinetic = 0.5 * float(rod.node_masses @ v2)
    om = rod.angular_velocities
    rotational = 0.5 * float(np.einsum("ei,ei->", rod.element_inertia * om, om))
    S, B = _stiffness_diagonals(rod)
    eps = strains.shear_strain
    shear_stretch = 0.5 * float(
        np.einsum("ei,ei->", S * eps, eps * rod.ref_lengths[:, None]))
    kap = strains.curvature
    bending = 0.5 * float(
        np.einsum("vi,vi->", B * kap, kap * rod.voronoi_lengths[:, None]))
    return {"kinetic": kinetic, "bending": bending,
            "shear_stretch": shear_stretch, "rotational": rotational}


def stable_timestep(rod, factor=0.3, stiffness_hint=None):
    """Explicit-stepping bound, scaled by `factor`.

    Two limits matter: the axial-wave bound min(ref_length)*sqrt(rho/E) and,
    for slender rods (radius << element length), the shear-rotation mode of
    the director dynamics at frequency (2/r)*sqrt(alpha_c G / rho).
    """
    E = rod.youngs_modulus if stiffness_hint is None else stiffness_hint
    axial = float(rod.ref_lengths.min()) * np.sqrt(rod.density / E)
    r_min = np.sqrt(float(rod.areas.min()) / np.pi)
    shear_rot = r_min * np.sqrt(
        rod.density / (rod.shear_correction * rod.shear_modulus))
    return factor * min(axial, shear_rot)
