"""Bio-hybrid arm assembly: an elastic backbone wrapped by 16 muscle-tendon
rods in four overlapping layers of orthogonal agonist-antagonist pairs.

Muscle-tendon units are rods whose axial stress is an active Hill-type
contribution on the belly plus J-curve passive terms (muscle on the belly,
stiffer tendon on the tapered ends); shear and bending stay linear elastic.
Units pin to the backbone surface at both ends (enthesis) and are glued
lengthwise by soft fascia spring-dampers.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .rod import LoadField, RodState, SimulationDiverged, build_rod, stable_timestep

N_MUSCLES = 16
N_LAYERS = 4
UNITS_PER_LAYER = 4


class LayoutError(ValueError):
    """Arm geometry cannot be assembled (muscle does not fit the backbone)."""


@dataclass
class BackboneConfig:
    length: float = 0.2
    radius: float = 0.01
    n_elem: int = 16
    density: float = 1000.0
    youngs_modulus: float = 2.5e5
    poisson_ratio: float = 0.5          # G = E / (2 (1 + nu))
    shear_correction: float = 0.9
    damping: float = 5.0


@dataclass
class MuscleConfig:
    rest_length: float = 0.08
    radius: float = 0.003
    n_elem: int = 4
    tendon_elements: int = 1            # per end
    tendon_taper: float = 0.8           # tendon radius / muscle radius
    density: float = 1000.0
    youngs_modulus: float = 5.0e4       # shear/bending of the rod
    poisson_ratio: float = 0.5
    shear_correction: float = 0.9
    damping: float = 20.0
    sigma_max: float = 2.0e5            # peak isometric active stress, Pa
    activation_tau: float = 0.03        # tetanic rise/fall time constant, s
    fv_rate_tau: float = 0.005          # stretch-rate low-pass for f_v, s
    optimal_stretch: float = 1.0
    fl_width: float = 0.4
    max_shortening_rate: float = 2.0    # 1/s
    fv_curvature: float = 0.25
    fv_plateau: float = 1.2
    passive_muscle_scale: float = 6.0e4
    passive_muscle_exponent: float = 2.0
    passive_tendon_scale: float = 3.0e7
    passive_tendon_exponent: float = 2.0


@dataclass
class AttachmentConfig:
    pin_stiffness_factor: float = 100.0   # k_pin = factor * E A / rest_length
    pin_damping_ratio: float = 1.0        # of critical, against end node mass
    fascia_stiffness_fraction: float = 0.01
    fascia_damping_ratio: float = 1.0


@dataclass
class ArmConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    muscle: MuscleConfig = field(default_factory=MuscleConfig)
    attachment: AttachmentConfig = field(default_factory=AttachmentConfig)
    dt_factor: float = 0.3
    # tendon tangent stiffness is rated at this working stretch for the
    # timestep bound
    max_working_stretch: float = 0.25


@dataclass
class MuscleTendonUnit:
    rod: RodState
    belly_range: tuple
    tendon_ranges: tuple
    sigma_max: float
    optimal_stretch: float
    fl_width: float
    fv_params: dict
    passive_muscle: dict
    passive_tendon: dict
    activation: float = 0.0
    layer: int = 0
    azimuth_deg: float = 0.0

    def is_belly(self, element):
        lo, hi = self.belly_range
        return lo <= element < hi


def _blend(dt, tau):
    """Per-substep first-order filter coefficient; tau=0 disables."""
    return 1.0 if tau <= 0.0 else min(1.0, dt / tau)


def action_to_activation(a):
    """Squash raw policy outputs into muscle activations in (0, 1)."""
    return (np.tanh(np.asarray(a, dtype=float)) + 1.0) / 2.0


def muscle_stress(unit, element, stretch, stretch_rate=0.0):
    """Axial stress (Pa) of one element at the given stretch and rate.

    Belly elements: activation * sigma_max * f_l * f_v plus the muscle
    J-curve; tendon elements: tendon J-curve only.
    """
    if stretch <= 0:
        raise ValueError("stretch must be positive")
    if unit.is_belly(element):
        sig = K.passive_stress(stretch, unit.passive_muscle["stiffness_scale"],
                               unit.passive_muscle["exponent"])
        if unit.activation > 0:
            sig += (unit.activation * unit.sigma_max
                    * K.force_length(stretch, unit.optimal_stretch, unit.fl_width)
                    * K.force_velocity(stretch_rate,
                                       unit.fv_params["max_shortening_rate"],
                                       unit.fv_params["curvature"],
                                       unit.fv_params["plateau"]))
        return sig
    return K.passive_stress(stretch, unit.passive_tendon["stiffness_scale"],
                            unit.passive_tendon["exponent"])


class ArmAssembly:
    """One backbone rod plus 16 muscle-tendon rods and their attachments.

    Muscle rod arrays are views into batched (16, ...) arrays so the fused
    stepping kernel and the per-unit RodState objects share storage.
    """

    def __init__(self, config: ArmConfig):
        self.config = config
        bb = config.backbone
        mc = config.muscle

        span_needed = (N_LAYERS + 1) * mc.rest_length / 2.0
        if span_needed > bb.length * (1 + 1e-9):
            raise LayoutError(
                f"muscle-tendon units (span {span_needed:.3f} m) do not fit "
                f"backbone length {bb.length:.3f} m")

        G_bb = bb.youngs_modulus / (2.0 * (1.0 + bb.poisson_ratio))
        self.backbone = build_rod(
            bb.length, bb.radius, bb.n_elem, bb.density, bb.youngs_modulus,
            shear_modulus=G_bb, shear_correction=bb.shear_correction,
            damping=bb.damping)
        self.backbone.base_anchor = (self.backbone.positions[0].copy(),
                                     self.backbone.directors[0].copy())
        self.anchored = True
        self.youngs_modulus = bb.youngs_modulus

        nm = mc.n_elem
        nt = mc.tendon_elements
        if nm < 2 * nt + 1:
            raise LayoutError("muscle needs at least one belly element")
        radii = np.full(nm, mc.radius)
        radii[:nt] *= mc.tendon_taper
        radii[nm - nt:] *= mc.tendon_taper
        template = build_rod(mc.rest_length, radii, nm, mc.density,
                             mc.youngs_modulus,
                             shear_modulus=mc.youngs_modulus / (2 * (1 + mc.poisson_ratio)),
                             shear_correction=mc.shear_correction,
                             damping=mc.damping)

        # batched muscle state
        self._m_pos = np.zeros((N_MUSCLES, nm + 1, 3))
        self._m_vel = np.zeros((N_MUSCLES, nm + 1, 3))
        self._m_q = np.zeros((N_MUSCLES, nm, 3, 3))
        self._m_om = np.zeros((N_MUSCLES, nm, 3))
        self._m_area = np.tile(template.areas, (N_MUSCLES, 1))
        self._m_imom = np.tile(template.second_moments, (N_MUSCLES, 1, 1))
        self._m_refl = template.ref_lengths.copy()
        self._m_vorl = template.voronoi_lengths.copy()
        self._m_mass = template.node_masses
        self._m_jdiag = template.element_inertia

        # per-element muscle-law parameter tables
        belly = (nt, nm - nt)
        self._sig_max_el = np.zeros((N_MUSCLES, nm))
        self._sig_max_el[:, belly[0]:belly[1]] = mc.sigma_max
        self._act_eff = np.zeros(N_MUSCLES)
        self._rate_filt = np.zeros((N_MUSCLES, nm))
        self._lam_opt = np.full((N_MUSCLES, nm), mc.optimal_stretch)
        self._fl_w = np.full((N_MUSCLES, nm), mc.fl_width)
        self._fv_vmax = np.full((N_MUSCLES, nm), mc.max_shortening_rate)
        self._fv_curv = np.full((N_MUSCLES, nm), mc.fv_curvature)
        self._fv_plat = np.full((N_MUSCLES, nm), mc.fv_plateau)
        pas_scale = np.full(nm, mc.passive_tendon_scale)
        pas_exp = np.full(nm, mc.passive_tendon_exponent)
        pas_scale[belly[0]:belly[1]] = mc.passive_muscle_scale
        pas_exp[belly[0]:belly[1]] = mc.passive_muscle_exponent
        self._pas_scale = np.tile(pas_scale, (N_MUSCLES, 1))
        self._pas_exp = np.tile(pas_exp, (N_MUSCLES, 1))

        self.muscles = []
        self.activations = np.zeros(N_MUSCLES)
        fv = {"max_shortening_rate": mc.max_shortening_rate,
              "curvature": mc.fv_curvature, "plateau": mc.fv_plateau}
        pm = {"stiffness_scale": mc.passive_muscle_scale,
              "exponent": mc.passive_muscle_exponent}
        pt = {"stiffness_scale": mc.passive_tendon_scale,
              "exponent": mc.passive_tendon_exponent}

        # enthesis pins at both muscle ends; fascia at interior nodes
        n_fas = nm - 1
        self._pin_elem = np.zeros((N_MUSCLES, 2), dtype=np.int64)
        self._pin_node = np.zeros((N_MUSCLES, 2), dtype=np.int64)
        self._pin_off = np.zeros((N_MUSCLES, 2, 3))
        self._fas_elem = np.zeros((N_MUSCLES, n_fas), dtype=np.int64)
        self._fas_node = np.zeros((N_MUSCLES, n_fas), dtype=np.int64)
        self._fas_off = np.zeros((N_MUSCLES, n_fas, 3))

        ell_b = bb.length / bb.n_elem
        for i in range(N_MUSCLES):
            layer, unit = divmod(i, UNITS_PER_LAYER)
            azim = 45.0 * layer + 90.0 * unit
            theta = math.radians(azim)
            offset = bb.radius * np.array([math.cos(theta), math.sin(theta), 0.0])
            z0 = layer * mc.rest_length / 2.0
            self._m_pos[i] = template.positions + offset
            self._m_pos[i, :, 2] += z0
            self._m_q[i] = template.directors
            rod_view = RodState(
                positions=self._m_pos[i], velocities=self._m_vel[i],
                directors=self._m_q[i], angular_velocities=self._m_om[i],
                ref_lengths=self._m_refl, areas=self._m_area[i],
                second_moments=self._m_imom[i], density=mc.density,
                youngs_modulus=mc.youngs_modulus,
                shear_modulus=template.shear_modulus,
                shear_correction=mc.shear_correction, damping_coefficient=mc.damping)
            self.muscles.append(MuscleTendonUnit(
                rod=rod_view, belly_range=belly,
                tendon_ranges=((0, nt), (nm - nt, nm)),
                sigma_max=mc.sigma_max, optimal_stretch=mc.optimal_stretch,
                fl_width=mc.fl_width, fv_params=fv, passive_muscle=pm,
                passive_tendon=pt, layer=layer, azimuth_deg=azim))

            for p, node in enumerate((0, nm)):
                z = float(self._m_pos[i, node, 2])
                e = int(np.clip(math.floor(z / ell_b - 0.5), 0, bb.n_elem - 1))
                mid_z = (e + 0.5) * ell_b
                self._pin_elem[i, p] = e
                self._pin_node[i, p] = node
                self._pin_off[i, p] = (offset[0], offset[1], z - mid_z)
            for j in range(n_fas):
                node = j + 1
                z = float(self._m_pos[i, node, 2])
                e = int(np.clip(math.floor(z / ell_b - 0.5), 0, bb.n_elem - 1))
                mid_z = (e + 0.5) * ell_b
                self._fas_elem[i, j] = e
                self._fas_node[i, j] = node
                self._fas_off[i, j] = (offset[0], offset[1], z - mid_z)

        at = config.attachment
        belly_area = math.pi * mc.radius**2
        self.k_pin = (at.pin_stiffness_factor * mc.youngs_modulus * belly_area
                      / mc.rest_length)
        end_mass = float(self._m_mass[0])
        self.c_pin = 2.0 * at.pin_damping_ratio * math.sqrt(self.k_pin * end_mass)
        self.k_fascia = at.fascia_stiffness_fraction * self.k_pin
        node_mass = float(self._m_mass[1])
        self.c_fascia = (2.0 * at.fascia_damping_ratio
                         * math.sqrt(self.k_fascia * node_mass))

        self.gravity = np.zeros(3)
        self.dt_inner = self._compute_dt()
        self._scratch = self._make_scratch()
        self._rest = self.snapshot()
        self.last_tip_trace = None

    # -- setup helpers ----------------------------------------------------

    def _compute_dt(self):
        cfg = self.config
        mc = cfg.muscle
        bounds = [stable_timestep(self.backbone, cfg.dt_factor)]
        x = cfg.max_working_stretch
        tendon_tangent = (mc.passive_tendon_scale * mc.passive_tendon_exponent
                          * x ** (mc.passive_tendon_exponent - 1.0))
        hint = max(mc.youngs_modulus, 3.0 * mc.sigma_max, tendon_tangent,
                   mc.passive_muscle_scale * mc.passive_muscle_exponent * x)
        bounds.append(stable_timestep(self.muscles[0].rod, cfg.dt_factor,
                                      stiffness_hint=hint))
        omega_pin = math.sqrt(self.k_pin / float(self._m_mass[0]))
        bounds.append(cfg.dt_factor * 2.0 / omega_pin)
        return min(bounds)

    def _make_scratch(self):
        nb = self.backbone.n_elem
        nm = self._m_refl.shape[0]
        z = np.zeros
        return {
            "bb_fi": z((nb + 1, 3)), "bb_ti": z((nb, 3)), "bb_fe": z((nb + 1, 3)),
            "bb_ce": z((nb, 3)), "bb_eps": z((nb, 3)), "bb_kap": z((nb - 1, 3)),
            "bb_dil": z(nb),
            "m_fi": z((N_MUSCLES, nm + 1, 3)), "m_ti": z((N_MUSCLES, nm, 3)),
            "m_fe": z((N_MUSCLES, nm + 1, 3)), "m_ce": z((N_MUSCLES, nm, 3)),
            "m_eps": z((N_MUSCLES, nm, 3)), "m_kap": z((N_MUSCLES, max(nm - 1, 1), 3)),
            "m_dil": z((N_MUSCLES, nm)),
            "act_sig_eff": z((N_MUSCLES, nm)),
            "no_cyl": z((0, 8)),
        }

    def snapshot(self):
        """Copy of all dynamic state arrays."""
        return {
            "bb_pos": self.backbone.positions.copy(),
            "bb_vel": self.backbone.velocities.copy(),
            "bb_q": self.backbone.directors.copy(),
            "bb_om": self.backbone.angular_velocities.copy(),
            "m_pos": self._m_pos.copy(), "m_vel": self._m_vel.copy(),
            "m_q": self._m_q.copy(), "m_om": self._m_om.copy(),
            "activations": self.activations.copy(),
            "act_eff": self._act_eff.copy(),
            "rate_filt": self._rate_filt.copy(),
        }

    def restore(self, snap):
        self.backbone.positions[:] = snap["bb_pos"]
        self.backbone.velocities[:] = snap["bb_vel"]
        self.backbone.directors[:] = snap["bb_q"]
        self.backbone.angular_velocities[:] = snap["bb_om"]
        self._m_pos[:] = snap["m_pos"]
        self._m_vel[:] = snap["m_vel"]
        self._m_q[:] = snap["m_q"]
        self._m_om[:] = snap["m_om"]
        self._act_eff[:] = snap["act_eff"]
        self._rate_filt[:] = snap["rate_filt"]
        self.set_activations(snap["activations"])

    def reset_to_rest(self):
        self.restore(self._rest)

    # -- activation -------------------------------------------------------

    def set_activations(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (N_MUSCLES,):
            raise ValueError(f"activation vector must have shape ({N_MUSCLES},)")
        if np.any(alpha < 0.0) or np.any(alpha > 1.0) or not np.isfinite(alpha).all():
            raise ValueError("activation components must lie in [0, 1]")
        self.activations[:] = alpha
        for i, unit in enumerate(self.muscles):
            unit.activation = float(alpha[i])
        return self

    # -- stepping ---------------------------------------------------------

    def recommended_substeps(self, dt_control):
        return max(1, int(math.ceil(dt_control / self.dt_inner)))

    def step(self, dt_control, substeps=None, scene=None):
        """Advance the coupled 17-rod system by one control interval.

        Muscle stresses, attachment constraints and contact are re-evaluated
        every inner step.  Stores the backbone tip trace (substeps+1, 3) in
        `last_tip_trace`.  Mutates the assembly and returns it.
        """
        if substeps is None:
            substeps = self.recommended_substeps(dt_control)
        dt = dt_control / substeps
        sc = self._scratch
        bb = self.backbone
        anchored, apos, aq = bb.anchor_arrays()
        anchored = anchored and self.anchored
        tip = np.empty((substeps + 1, 3))
        if scene is None:
            cyl, has_floor, floor_z, k_c, mu, v_reg = (
                sc["no_cyl"], False, 0.0, 0.0, 0.0, 1e-3)
        else:
            cyl, has_floor, floor_z, k_c, mu, v_reg = scene.kernel_args()
        bbsc = bb.scratch()
        status, rod_idx, sub = K.advance_arm(
            bb.positions, bb.velocities, bb.directors, bb.angular_velocities,
            bb.ref_lengths, bb.voronoi_lengths, bb.areas, bb.second_moments,
            bb.youngs_modulus, bb.shear_modulus, bb.shear_correction,
            bb.density, bb.damping_coefficient, bbsc["mass"], bbsc["jdiag"],
            anchored, apos, aq,
            self._m_pos, self._m_vel, self._m_q, self._m_om,
            self._m_refl, self._m_vorl, self._m_area, self._m_imom,
            self.muscles[0].rod.youngs_modulus, self.muscles[0].rod.shear_modulus,
            self.config.muscle.shear_correction, self.config.muscle.density,
            self.config.muscle.damping, self._m_mass, self._m_jdiag,
            self._sig_max_el, self.activations, self._act_eff,
            _blend(dt, self.config.muscle.activation_tau),
            self._rate_filt, _blend(dt, self.config.muscle.fv_rate_tau),
            self._lam_opt, self._fl_w, self._fv_vmax,
            self._fv_curv, self._fv_plat, self._pas_scale, self._pas_exp,
            sc["act_sig_eff"],
            self._pin_elem, self._pin_node, self._pin_off, self.k_pin, self.c_pin,
            self._fas_elem, self._fas_node, self._fas_off, self.k_fascia,
            self.c_fascia,
            cyl, has_floor, floor_z, k_c, mu, v_reg,
            self.gravity, dt, substeps, tip,
            sc["bb_fi"], sc["bb_ti"], sc["bb_fe"], sc["bb_ce"], sc["bb_eps"],
            sc["bb_kap"], sc["bb_dil"],
            sc["m_fi"], sc["m_ti"], sc["m_fe"], sc["m_ce"], sc["m_eps"],
            sc["m_kap"], sc["m_dil"])
        if status != K.OK:
            name = "backbone" if rod_idx == 0 else f"muscle-{rod_idx - 1}"
            raise SimulationDiverged(
                f"simulation diverged in rod {name}", step=sub, rod=name)
        self.last_tip_trace = tip
        return self

    @property
    def tip_position(self):
        return self.backbone.positions[-1].copy()

    @property
    def rods(self):
        return [self.backbone] + [m.rod for m in self.muscles]


def assemble_arm(config=None, youngs_modulus=None):
    """Build the 17-rod assembly; optionally override backbone stiffness."""
    config = config or ArmConfig()
    if youngs_modulus is not None:
        if youngs_modulus <= 0:
            raise ValueError("youngs_modulus must be positive")
        config.backbone.youngs_modulus = float(youngs_modulus)
    return ArmAssembly(config)


def apply_activations(arm, alpha):
    """Replace every unit's activation; values are validated, not clamped."""
    return arm.set_activations(alpha)


def constraint_loads(arm):
    """Pin and fascia loads at the current configuration.

    Returns {'backbone': LoadField, 'muscles': [LoadField, ...]} holding the
    external force/couple additions each rod would receive this instant.
    """
    bb = arm.backbone
    nb = bb.n_elem
    nm = arm._m_refl.shape[0]
    bb_fe = np.zeros((nb + 1, 3))
    bb_ce = np.zeros((nb, 3))
    m_fe = np.zeros((N_MUSCLES, nm + 1, 3))
    K.attachment_loads(bb.positions, bb.velocities, bb.directors,
                       bb.angular_velocities, arm._m_pos, arm._m_vel,
                       arm._pin_elem, arm._pin_node, arm._pin_off,
                       arm.k_pin, arm.c_pin, m_fe, bb_fe, bb_ce)
    K.attachment_loads(bb.positions, bb.velocities, bb.directors,
                       bb.angular_velocities, arm._m_pos, arm._m_vel,
                       arm._fas_elem, arm._fas_node, arm._fas_off,
                       arm.k_fascia, arm.c_fascia, m_fe, bb_fe, bb_ce)
    out_bb = LoadField.zeros(nb)
    out_bb.external_forces[:] = bb_fe
    out_bb.external_couples[:] = bb_ce
    out_m = []
    for i in range(N_MUSCLES):
        lf = LoadField.zeros(nm)
        lf.external_forces[:] = m_fe[i]
        out_m.append(lf)
    return {"backbone": out_bb, "muscles": out_m}


def arm_step(arm, dt_control=0.25, substeps=None, scene=None):
    """Advance the assembly one control interval (see ArmAssembly.step)."""
    return arm.step(dt_control, substeps=substeps, scene=scene)
