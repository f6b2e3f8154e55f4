"""Numba-compiled inner loops for rod and arm time stepping.

Everything here operates on plain float64 arrays and is deterministic and
single-threaded.  Directors are stored row-wise: Q[e, j, :] is director j of
element e expressed in lab coordinates, so v_local = Q @ v_lab.
"""

import math

import numpy as np
from numba import njit

JIT_OPTS = dict(cache=True, fastmath=False)

# status codes returned by stepping kernels
OK = 0
DIVERGED = 1
SINGULAR = 2


# ---------------------------------------------------------------------------
# SO(3) helpers
# ---------------------------------------------------------------------------

@njit(**JIT_OPTS)
def rotate_frames(q, om, dt):
    """Premultiply each frame by exp(-dt*skew(om[e])), om in local frame."""
    n = q.shape[0]
    for e in range(n):
        wx = om[e, 0] * dt
        wy = om[e, 1] * dt
        wz = om[e, 2] * dt
        th = math.sqrt(wx * wx + wy * wy + wz * wz)
        if th < 1e-30:
            continue
        ux = wx / th
        uy = wy / th
        uz = wz / th
        s = math.sin(th)
        c1 = 1.0 - math.cos(th)
        # R = I - sin(th)*[u]x + (1-cos(th))*[u]x^2
        r00 = 1.0 + c1 * (ux * ux - 1.0)
        r01 = s * uz + c1 * ux * uy
        r02 = -s * uy + c1 * ux * uz
        r10 = -s * uz + c1 * ux * uy
        r11 = 1.0 + c1 * (uy * uy - 1.0)
        r12 = s * ux + c1 * uy * uz
        r20 = s * uy + c1 * ux * uz
        r21 = -s * ux + c1 * uy * uz
        r22 = 1.0 + c1 * (uz * uz - 1.0)
        for j in range(3):
            a = q[e, 0, j]
            b = q[e, 1, j]
            c = q[e, 2, j]
            q[e, 0, j] = r00 * a + r01 * b + r02 * c
            q[e, 1, j] = r10 * a + r11 * b + r12 * c
            q[e, 2, j] = r20 * a + r21 * b + r22 * c


@njit(**JIT_OPTS)
def orthonormalize_frames(q):
    """One Newton polar step per frame: Q <- (Q + cof(Q)/det(Q)) / 2."""
    n = q.shape[0]
    for e in range(n):
        m00, m01, m02 = q[e, 0, 0], q[e, 0, 1], q[e, 0, 2]
        m10, m11, m12 = q[e, 1, 0], q[e, 1, 1], q[e, 1, 2]
        m20, m21, m22 = q[e, 2, 0], q[e, 2, 1], q[e, 2, 2]
        # cofactor rows: c0 = m1 x m2, c1 = m2 x m0, c2 = m0 x m1
        c00 = m11 * m22 - m12 * m21
        c01 = m12 * m20 - m10 * m22
        c02 = m10 * m21 - m11 * m20
        c10 = m21 * m02 - m22 * m01
        c11 = m22 * m00 - m20 * m02
        c12 = m20 * m01 - m21 * m00
        c20 = m01 * m12 - m02 * m11
        c21 = m02 * m10 - m00 * m12
        c22 = m00 * m11 - m01 * m10
        det = m00 * c00 + m01 * c01 + m02 * c02
        inv = 1.0 / det
        # Newton polar step uses Q^-T = cof(Q)/det (no transpose)
        q[e, 0, 0] = 0.5 * (m00 + c00 * inv)
        q[e, 0, 1] = 0.5 * (m01 + c01 * inv)
        q[e, 0, 2] = 0.5 * (m02 + c02 * inv)
        q[e, 1, 0] = 0.5 * (m10 + c10 * inv)
        q[e, 1, 1] = 0.5 * (m11 + c11 * inv)
        q[e, 1, 2] = 0.5 * (m12 + c12 * inv)
        q[e, 2, 0] = 0.5 * (m20 + c20 * inv)
        q[e, 2, 1] = 0.5 * (m21 + c21 * inv)
        q[e, 2, 2] = 0.5 * (m22 + c22 * inv)


@njit(**JIT_OPTS)
def _rotvec_of(r00, r01, r02, r10, r11, r12, r20, r21, r22):
    """Rotation vector of a rotation matrix given entry-wise."""
    wx = r21 - r12
    wy = r02 - r20
    wz = r10 - r01
    s2 = math.sqrt(wx * wx + wy * wy + wz * wz)  # 2 sin(theta)
    c = 0.5 * (r00 + r11 + r22 - 1.0)            # cos(theta)
    th = math.atan2(0.5 * s2, c)
    if s2 > 1e-9:
        f = th / s2
        return wx * f, wy * f, wz * f
    if c > 0.0:
        # small angle: theta/(2 sin theta) ~ 1/2 + theta^2/12
        f = 0.5 + th * th / 12.0
        return wx * f, wy * f, wz * f
    # angle near pi: axis from diagonal of (R + I)/2
    ux = math.sqrt(max(0.0, 0.5 * (r00 + 1.0)))
    uy = math.sqrt(max(0.0, 0.5 * (r11 + 1.0)))
    uz = math.sqrt(max(0.0, 0.5 * (r22 + 1.0)))
    # fix signs using off-diagonal sums
    if ux >= uy and ux >= uz:
        if r01 + r10 < 0.0:
            uy = -uy
        if r02 + r20 < 0.0:
            uz = -uz
    elif uy >= uz:
        if r01 + r10 < 0.0:
            ux = -ux
        if r12 + r21 < 0.0:
            uz = -uz
    else:
        if r02 + r20 < 0.0:
            ux = -ux
        if r12 + r21 < 0.0:
            uy = -uy
    return ux * th, uy * th, uz * th


@njit(**JIT_OPTS)
def relative_rotvecs(q, out):
    """Rotation vector of Q[v+1] @ Q[v]^T for each interior (Voronoi) node."""
    nv = q.shape[0] - 1
    for v in range(nv):
        a = q[v]
        b = q[v + 1]
        # R = b @ a^T
        r00 = b[0, 0] * a[0, 0] + b[0, 1] * a[0, 1] + b[0, 2] * a[0, 2]
        r01 = b[0, 0] * a[1, 0] + b[0, 1] * a[1, 1] + b[0, 2] * a[1, 2]
        r02 = b[0, 0] * a[2, 0] + b[0, 1] * a[2, 1] + b[0, 2] * a[2, 2]
        r10 = b[1, 0] * a[0, 0] + b[1, 1] * a[0, 1] + b[1, 2] * a[0, 2]
        r11 = b[1, 0] * a[1, 0] + b[1, 1] * a[1, 1] + b[1, 2] * a[1, 2]
        r12 = b[1, 0] * a[2, 0] + b[1, 1] * a[2, 1] + b[1, 2] * a[2, 2]
        r20 = b[2, 0] * a[0, 0] + b[2, 1] * a[0, 1] + b[2, 2] * a[0, 2]
        r21 = b[2, 0] * a[1, 0] + b[2, 1] * a[1, 1] + b[2, 2] * a[1, 2]
        r22 = b[2, 0] * a[2, 0] + b[2, 1] * a[2, 1] + b[2, 2] * a[2, 2]
        vx, vy, vz = _rotvec_of(r00, r01, r02, r10, r11, r12, r20, r21, r22)
        out[v, 0] = vx
        out[v, 1] = vy
        out[v, 2] = vz


# ---------------------------------------------------------------------------
# Muscle constitutive scalar laws
# ---------------------------------------------------------------------------

@njit(**JIT_OPTS)
def force_length(lam, lam_opt, width):
    """Gaussian force-length factor, peak 1 at lam_opt."""
    x = (lam - lam_opt) / width
    return math.exp(-x * x)


@njit(**JIT_OPTS)
def force_velocity(rate, v_max, curvature, plateau):
    """Hill hyperbola in stretch rate, clamped to [0, plateau].

    rate < 0 is shortening; active force vanishes at rate = -v_max and
    saturates at `plateau` for fast lengthening.
    """
    denom = v_max - rate / curvature
    if rate >= 0.0:
        if denom <= 0.0:
            return plateau
        return min((v_max + rate) / denom, plateau)
    if rate <= -v_max:
        return 0.0
    return (v_max + rate) / denom


@njit(**JIT_OPTS)
def passive_stress(lam, scale, exponent):
    """J-curve passive stress: zero in compression, convex in tension."""
    if lam <= 1.0:
        return 0.0
    return scale * (lam - 1.0) ** exponent


# ---------------------------------------------------------------------------
# Single-rod stepping pieces
# ---------------------------------------------------------------------------

@njit(**JIT_OPTS)
def rod_internal_forces(pos, vel, q, om, ref_len, vor_len, area, imom,
                        E, G, alpha_c, rho,
                        use_muscle, act_sigma, lam_opt, fl_w, fv_vmax,
                        fv_curv, fv_plat, pas_scale, pas_exp,
                        rate_filt, rate_blend,
                        anchored, anchor_q,
                        f_nodes, t_elems, eps, kappa, dil):
    """Internal forces/torques at the current configuration.

    Fills f_nodes (lab, per node), t_elems (local, per element, includes the
    gyroscopic term), eps, kappa and dil.  A clamped base adds the elastic
    torque of a ghost frame fixed at the anchor, half an element away, which
    keeps the zero-rotation condition second-order accurate.  Returns a
    status code.
    """
    n = ref_len.shape[0]
    for i in range(n + 1):
        f_nodes[i, 0] = 0.0
        f_nodes[i, 1] = 0.0
        f_nodes[i, 2] = 0.0
    for e in range(n):
        dx0 = pos[e + 1, 0] - pos[e, 0]
        dx1 = pos[e + 1, 1] - pos[e, 1]
        dx2 = pos[e + 1, 2] - pos[e, 2]
        ell = math.sqrt(dx0 * dx0 + dx1 * dx1 + dx2 * dx2)
        if ell < 1e-12:
            return SINGULAR
        e_dil = ell / ref_len[e]
        dil[e] = e_dil
        tx = dx0 / ell
        ty = dx1 / ell
        tz = dx2 / ell
        # local tangent
        lt0 = q[e, 0, 0] * tx + q[e, 0, 1] * ty + q[e, 0, 2] * tz
        lt1 = q[e, 1, 0] * tx + q[e, 1, 1] * ty + q[e, 1, 2] * tz
        lt2 = q[e, 2, 0] * tx + q[e, 2, 1] * ty + q[e, 2, 2] * tz
        e0 = e_dil * lt0
        e1 = e_dil * lt1
        e2 = e_dil * lt2 - 1.0
        eps[e, 0] = e0
        eps[e, 1] = e1
        eps[e, 2] = e2
        a = area[e]
        n1 = alpha_c * G * a * e0
        n2 = alpha_c * G * a * e1
        if use_muscle:
            dv0 = vel[e + 1, 0] - vel[e, 0]
            dv1 = vel[e + 1, 1] - vel[e, 1]
            dv2 = vel[e + 1, 2] - vel[e, 2]
            rate = (dv0 * tx + dv1 * ty + dv2 * tz) / ref_len[e]
            # low-pass the stretch rate feeding force-velocity; the raw
            # feedback acts as an explicit dashpot far above the dt bound
            rate_filt[e] += rate_blend * (rate - rate_filt[e])
            sig = passive_stress(e_dil, pas_scale[e], pas_exp[e])
            if act_sigma[e] > 0.0:
                sig += (act_sigma[e] * force_length(e_dil, lam_opt[e], fl_w[e])
                        * force_velocity(rate_filt[e], fv_vmax[e], fv_curv[e],
                                         fv_plat[e]))
            n3 = a * sig
        else:
            n3 = E * a * e2
        # lab-frame internal force of this element
        fx = q[e, 0, 0] * n1 + q[e, 1, 0] * n2 + q[e, 2, 0] * n3
        fy = q[e, 0, 1] * n1 + q[e, 1, 1] * n2 + q[e, 2, 1] * n3
        fz = q[e, 0, 2] * n1 + q[e, 1, 2] * n2 + q[e, 2, 2] * n3
        f_nodes[e, 0] += fx
        f_nodes[e, 1] += fy
        f_nodes[e, 2] += fz
        f_nodes[e + 1, 0] -= fx
        f_nodes[e + 1, 1] -= fy
        f_nodes[e + 1, 2] -= fz
        # torque from shear/stretch: (Q dx) x n_local   (= Q x_s x n * ref_len)
        ld0 = lt0 * ell
        ld1 = lt1 * ell
        ld2 = lt2 * ell
        t_elems[e, 0] = ld1 * n3 - ld2 * n2
        t_elems[e, 1] = ld2 * n1 - ld0 * n3
        t_elems[e, 2] = ld0 * n2 - ld1 * n1
        # gyroscopic term (J om) x om, J = rho * I * ref_len
        j0 = rho * imom[e, 0] * ref_len[e]
        j1 = rho * imom[e, 1] * ref_len[e]
        j2 = rho * imom[e, 2] * ref_len[e]
        w0 = om[e, 0]
        w1 = om[e, 1]
        w2 = om[e, 2]
        t_elems[e, 0] += (j1 - j2) * w1 * w2
        t_elems[e, 1] += (j2 - j0) * w2 * w0
        t_elems[e, 2] += (j0 - j1) * w0 * w1
    # curvature, bending torques, kappa x tau spreading
    relative_rotvecs(q, kappa)
    for v in range(n - 1):
        dv = vor_len[v]
        k0 = -kappa[v, 0] / dv
        k1 = -kappa[v, 1] / dv
        k2 = -kappa[v, 2] / dv
        kappa[v, 0] = k0
        kappa[v, 1] = k1
        kappa[v, 2] = k2
        # length-weighted bend/twist stiffness at the Voronoi node
        w = 0.5 / dv
        b0 = E * (imom[v, 0] * ref_len[v] + imom[v + 1, 0] * ref_len[v + 1]) * w
        b1 = E * (imom[v, 1] * ref_len[v] + imom[v + 1, 1] * ref_len[v + 1]) * w
        b2 = G * (imom[v, 2] * ref_len[v] + imom[v + 1, 2] * ref_len[v + 1]) * w
        t0 = b0 * k0
        t1 = b1 * k1
        t2 = b2 * k2
        # d tau/ds: + to left element, - to right element
        t_elems[v, 0] += t0
        t_elems[v, 1] += t1
        t_elems[v, 2] += t2
        t_elems[v + 1, 0] -= t0
        t_elems[v + 1, 1] -= t1
        t_elems[v + 1, 2] -= t2
        # kappa x tau, spread half to each adjacent element
        c0 = k1 * t2 - k2 * t1
        c1 = k2 * t0 - k0 * t2
        c2 = k0 * t1 - k1 * t0
        hl = 0.5 * ref_len[v]
        hr = 0.5 * ref_len[v + 1]
        t_elems[v, 0] += hl * c0
        t_elems[v, 1] += hl * c1
        t_elems[v, 2] += hl * c2
        t_elems[v + 1, 0] += hr * c0
        t_elems[v + 1, 1] += hr * c1
        t_elems[v + 1, 2] += hr * c2
    if anchored:
        # zero-rotation base: mirror-ghost torque at lever ref_len/2
        a = anchor_q
        b = q[0]
        r00 = b[0, 0] * a[0, 0] + b[0, 1] * a[0, 1] + b[0, 2] * a[0, 2]
        r01 = b[0, 0] * a[1, 0] + b[0, 1] * a[1, 1] + b[0, 2] * a[1, 2]
        r02 = b[0, 0] * a[2, 0] + b[0, 1] * a[2, 1] + b[0, 2] * a[2, 2]
        r10 = b[1, 0] * a[0, 0] + b[1, 1] * a[0, 1] + b[1, 2] * a[0, 2]
        r11 = b[1, 0] * a[1, 0] + b[1, 1] * a[1, 1] + b[1, 2] * a[1, 2]
        r12 = b[1, 0] * a[2, 0] + b[1, 1] * a[2, 1] + b[1, 2] * a[2, 2]
        r20 = b[2, 0] * a[0, 0] + b[2, 1] * a[0, 1] + b[2, 2] * a[0, 2]
        r21 = b[2, 0] * a[1, 0] + b[2, 1] * a[1, 1] + b[2, 2] * a[1, 2]
        r22 = b[2, 0] * a[2, 0] + b[2, 1] * a[2, 1] + b[2, 2] * a[2, 2]
        vx, vy, vz = _rotvec_of(r00, r01, r02, r10, r11, r12, r20, r21, r22)
        dv = 0.5 * ref_len[0]
        t_elems[0, 0] -= E * imom[0, 0] * (-vx / dv)
        t_elems[0, 1] -= E * imom[0, 1] * (-vy / dv)
        t_elems[0, 2] -= G * imom[0, 2] * (-vz / dv)
    return OK


@njit(**JIT_OPTS)
def rod_half_kinematics(pos, vel, q, om, dt_half, anchored, anchor_pos, anchor_q):
    nn = pos.shape[0]
    for i in range(nn):
        pos[i, 0] += dt_half * vel[i, 0]
        pos[i, 1] += dt_half * vel[i, 1]
        pos[i, 2] += dt_half * vel[i, 2]
    rotate_frames(q, om, dt_half)
    if anchored:
        for k in range(3):
            pos[0, k] = anchor_pos[k]
            vel[0, k] = 0.0


@njit(**JIT_OPTS)
def rod_finish_substep(pos, vel, q, om, mass, jdiag, gamma,
                       f_int, t_int, f_ext, c_ext, dt,
                       anchored, anchor_pos, anchor_q):
    """Velocity update with damping + second position/rotation half step."""
    nn = pos.shape[0]
    n = nn - 1
    for i in range(nn):
        inv_m = 1.0 / mass[i]
        for k in range(3):
            a = (f_int[i, k] + f_ext[i, k]) * inv_m - gamma * vel[i, k]
            vel[i, k] += dt * a
    for e in range(n):
        # external couple lab -> local
        c0 = q[e, 0, 0] * c_ext[e, 0] + q[e, 0, 1] * c_ext[e, 1] + q[e, 0, 2] * c_ext[e, 2]
        c1 = q[e, 1, 0] * c_ext[e, 0] + q[e, 1, 1] * c_ext[e, 1] + q[e, 1, 2] * c_ext[e, 2]
        c2 = q[e, 2, 0] * c_ext[e, 0] + q[e, 2, 1] * c_ext[e, 1] + q[e, 2, 2] * c_ext[e, 2]
        om[e, 0] += dt * ((t_int[e, 0] + c0) / jdiag[e, 0] - gamma * om[e, 0])
        om[e, 1] += dt * ((t_int[e, 1] + c1) / jdiag[e, 1] - gamma * om[e, 1])
        om[e, 2] += dt * ((t_int[e, 2] + c2) / jdiag[e, 2] - gamma * om[e, 2])
    half = 0.5 * dt
    for i in range(nn):
        pos[i, 0] += half * vel[i, 0]
        pos[i, 1] += half * vel[i, 1]
        pos[i, 2] += half * vel[i, 2]
    rotate_frames(q, om, half)
    orthonormalize_frames(q)
    if anchored:
        for k in range(3):
            pos[0, k] = anchor_pos[k]
            vel[0, k] = 0.0


@njit(**JIT_OPTS)
def _has_nan(pos, vel):
    s = 0.0
    nn = pos.shape[0]
    for i in range(nn):
        s += pos[i, 0] + pos[i, 1] + pos[i, 2] + vel[i, 0] + vel[i, 1] + vel[i, 2]
    return not math.isfinite(s)


_DUMMY = np.zeros(0, dtype=np.float64)


@njit(**JIT_OPTS)
def simulate_rod(pos, vel, q, om, ref_len, vor_len, area, imom,
                 E, G, alpha_c, rho, gamma, mass, jdiag,
                 f_ext, c_ext, dt, n_steps,
                 anchored, anchor_pos, anchor_q,
                 f_int, t_int, eps, kappa, dil):
    """Advance a single rod n_steps with fixed external loads.

    Returns (status, step_index).
    """
    half = 0.5 * dt
    dummy = np.zeros(0)
    for s in range(n_steps):
        rod_half_kinematics(pos, vel, q, om, half, anchored, anchor_pos, anchor_q)
        st = rod_internal_forces(pos, vel, q, om, ref_len, vor_len, area, imom,
                                 E, G, alpha_c, rho,
                                 False, dummy, dummy, dummy, dummy,
                                 dummy, dummy, dummy, dummy,
                                 dummy, 0.0,
                                 anchored, anchor_q,
                                 f_int, t_int, eps, kappa, dil)
        if st != OK:
            return st, s
        rod_finish_substep(pos, vel, q, om, mass, jdiag, gamma,
                           f_int, t_int, f_ext, c_ext, dt,
                           anchored, anchor_pos, anchor_q)
        if (s & 255) == 0 or s == n_steps - 1:
            if _has_nan(pos, vel):
                return DIVERGED, s
    return OK, n_steps


# ---------------------------------------------------------------------------
# Contact
# ---------------------------------------------------------------------------

@njit(**JIT_OPTS)
def contact_forces(pos, vel, cyl, has_floor, floor_z, k_c, mu, v_reg, f_out):
    """Penalty contact of rod nodes against cylinders and a floor plane.

    cyl rows: [p0(3), unit axis(3), length, radius].  Adds forces to f_out
    and returns the summed normal force magnitude (for diagnostics).
    """
    nn = pos.shape[0]
    nc = cyl.shape[0]
    total_normal = 0.0
    for i in range(nn):
        px = pos[i, 0]
        py = pos[i, 1]
        pz = pos[i, 2]
        for c in range(nc):
            wx = px - cyl[c, 0]
            wy = py - cyl[c, 1]
            wz = pz - cyl[c, 2]
            t = wx * cyl[c, 3] + wy * cyl[c, 4] + wz * cyl[c, 5]
            if t < 0.0:
                t = 0.0
            elif t > cyl[c, 6]:
                t = cyl[c, 6]
            dx = wx - t * cyl[c, 3]
            dy = wy - t * cyl[c, 4]
            dz = wz - t * cyl[c, 5]
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
            pen = cyl[c, 7] - dist
            if pen <= 0.0 or dist < 1e-12:
                continue
            nx = dx / dist
            ny = dy / dist
            nz = dz / dist
            fn = k_c * pen
            total_normal += fn
            f_out[i, 0] += fn * nx
            f_out[i, 1] += fn * ny
            f_out[i, 2] += fn * nz
            vn = vel[i, 0] * nx + vel[i, 1] * ny + vel[i, 2] * nz
            tx = vel[i, 0] - vn * nx
            ty = vel[i, 1] - vn * ny
            tz = vel[i, 2] - vn * nz
            vt = math.sqrt(tx * tx + ty * ty + tz * tz)
            scale = mu * fn / max(vt, v_reg)
            f_out[i, 0] -= scale * tx
            f_out[i, 1] -= scale * ty
            f_out[i, 2] -= scale * tz
        if has_floor:
            pen = floor_z - pz
            if pen > 0.0:
                fn = k_c * pen
                total_normal += fn
                f_out[i, 2] += fn
                tx = vel[i, 0]
                ty = vel[i, 1]
                vt = math.sqrt(tx * tx + ty * ty)
                scale = mu * fn / max(vt, v_reg)
                f_out[i, 0] -= scale * tx
                f_out[i, 1] -= scale * ty
    return total_normal


# ---------------------------------------------------------------------------
# Arm constraints (enthesis pins + fascia) and fused assembly driver
# ---------------------------------------------------------------------------

@njit(**JIT_OPTS)
def attachment_loads(bb_pos, bb_vel, bb_q, bb_om,
                     m_pos, m_vel,
                     link_elem, link_node, link_off, k_link, c_link,
                     m_fe, bb_fe, bb_ce):
    """Spring-damper links between muscle nodes and backbone surface points.

    link_elem/link_node/link_off: (n_muscles, n_links) int arrays plus local
    offsets (n_muscles, n_links, 3) in the backbone element frame.  Reaction
    on the backbone is applied at the muscle node position so every
    (muscle, backbone) pair carries an exactly zero net force and torque.
    """
    nm = link_elem.shape[0]
    nl = link_elem.shape[1]
    for i in range(nm):
        for l in range(nl):
            e = link_elem[i, l]
            node = link_node[i, l]
            # element midpoint and its velocity
            mx = 0.5 * (bb_pos[e, 0] + bb_pos[e + 1, 0])
            my = 0.5 * (bb_pos[e, 1] + bb_pos[e + 1, 1])
            mz = 0.5 * (bb_pos[e, 2] + bb_pos[e + 1, 2])
            vx = 0.5 * (bb_vel[e, 0] + bb_vel[e + 1, 0])
            vy = 0.5 * (bb_vel[e, 1] + bb_vel[e + 1, 1])
            vz = 0.5 * (bb_vel[e, 2] + bb_vel[e + 1, 2])
            # lab offset = Q^T xi
            ox = (bb_q[e, 0, 0] * link_off[i, l, 0] + bb_q[e, 1, 0] * link_off[i, l, 1]
                  + bb_q[e, 2, 0] * link_off[i, l, 2])
            oy = (bb_q[e, 0, 1] * link_off[i, l, 0] + bb_q[e, 1, 1] * link_off[i, l, 1]
                  + bb_q[e, 2, 1] * link_off[i, l, 2])
            oz = (bb_q[e, 0, 2] * link_off[i, l, 0] + bb_q[e, 1, 2] * link_off[i, l, 1]
                  + bb_q[e, 2, 2] * link_off[i, l, 2])
            ax = mx + ox
            ay = my + oy
            az = mz + oz
            # anchor velocity: v_mid + (Q^T om) x offset
            wx = bb_q[e, 0, 0] * bb_om[e, 0] + bb_q[e, 1, 0] * bb_om[e, 1] + bb_q[e, 2, 0] * bb_om[e, 2]
            wy = bb_q[e, 0, 1] * bb_om[e, 0] + bb_q[e, 1, 1] * bb_om[e, 1] + bb_q[e, 2, 1] * bb_om[e, 2]
            wz = bb_q[e, 0, 2] * bb_om[e, 0] + bb_q[e, 1, 2] * bb_om[e, 1] + bb_q[e, 2, 2] * bb_om[e, 2]
            vax = vx + wy * oz - wz * oy
            vay = vy + wz * ox - wx * oz
            vaz = vz + wx * oy - wy * ox
            dx = m_pos[i, node, 0] - ax
            dy = m_pos[i, node, 1] - ay
            dz = m_pos[i, node, 2] - az
            dvx = m_vel[i, node, 0] - vax
            dvy = m_vel[i, node, 1] - vay
            dvz = m_vel[i, node, 2] - vaz
            fx = -k_link * dx - c_link * dvx
            fy = -k_link * dy - c_link * dvy
            fz = -k_link * dz - c_link * dvz
            m_fe[i, node, 0] += fx
            m_fe[i, node, 1] += fy
            m_fe[i, node, 2] += fz
            bb_fe[e, 0] -= 0.5 * fx
            bb_fe[e, 1] -= 0.5 * fy
            bb_fe[e, 2] -= 0.5 * fz
            bb_fe[e + 1, 0] -= 0.5 * fx
            bb_fe[e + 1, 1] -= 0.5 * fy
            bb_fe[e + 1, 2] -= 0.5 * fz
            # reaction couple about element center, lever at the muscle node
            lx = m_pos[i, node, 0] - mx
            ly = m_pos[i, node, 1] - my
            lz = m_pos[i, node, 2] - mz
            bb_ce[e, 0] += ly * (-fz) - lz * (-fy)
            bb_ce[e, 1] += lz * (-fx) - lx * (-fz)
            bb_ce[e, 2] += lx * (-fy) - ly * (-fx)


@njit(**JIT_OPTS)
def advance_arm(bb_pos, bb_vel, bb_q, bb_om, bb_refl, bb_vorl, bb_area, bb_imom,
                bb_E, bb_G, bb_alpha, bb_rho, bb_gamma, bb_mass, bb_jdiag,
                anchored, anchor_pos, anchor_q,
                m_pos, m_vel, m_q, m_om, m_refl, m_vorl, m_area, m_imom,
                m_E, m_G, m_alpha, m_rho, m_gamma, m_mass, m_jdiag,
                sig_max_el, act_cmd, act_eff, act_blend, rate_filt, rate_blend,
                lam_opt, fl_w, fv_vmax, fv_curv, fv_plat,
                pas_scale, pas_exp, act_sig_eff,
                pin_elem, pin_node, pin_off, k_pin, c_pin,
                fas_elem, fas_node, fas_off, k_fas, c_fas,
                cyl, has_floor, floor_z, k_c, mu, v_reg,
                gravity,
                dt, n_sub, tip_trace,
                bb_fi, bb_ti, bb_fe, bb_ce, bb_eps, bb_kap, bb_dil,
                m_fi, m_ti, m_fe, m_ce, m_eps, m_kap, m_dil):
    """Advance the full assembly n_sub inner steps.

    tip_trace (n_sub+1, 3) receives the backbone tip position per substep.
    Returns (status, rod_index, substep); rod_index 0 is the backbone,
    1..n_muscles the muscle rods.
    """
    n_musc = m_pos.shape[0]
    nb = bb_refl.shape[0]
    nmn = m_pos.shape[1]
    half = 0.5 * dt
    tip_trace[0, 0] = bb_pos[nb, 0]
    tip_trace[0, 1] = bb_pos[nb, 1]
    tip_trace[0, 2] = bb_pos[nb, 2]
    do_contact = (cyl.shape[0] > 0) or has_floor
    nme = sig_max_el.shape[1]
    dummy = np.zeros(0)
    for s in range(n_sub):
        # first-order tetanic activation dynamics toward the held command
        for i in range(n_musc):
            act_eff[i] += act_blend * (act_cmd[i] - act_eff[i])
            for e in range(nme):
                act_sig_eff[i, e] = act_eff[i] * sig_max_el[i, e]
        rod_half_kinematics(bb_pos, bb_vel, bb_q, bb_om, half,
                            anchored, anchor_pos, anchor_q)
        for i in range(n_musc):
            rod_half_kinematics(m_pos[i], m_vel[i], m_q[i], m_om[i], half,
                                False, anchor_pos, anchor_q)
        st = rod_internal_forces(bb_pos, bb_vel, bb_q, bb_om, bb_refl, bb_vorl,
                                 bb_area, bb_imom, bb_E, bb_G, bb_alpha, bb_rho,
                                 False, dummy, dummy, dummy, dummy,
                                 dummy, dummy, dummy, dummy,
                                 dummy, 0.0,
                                 anchored, anchor_q,
                                 bb_fi, bb_ti, bb_eps, bb_kap, bb_dil)
        if st != OK:
            return st, 0, s
        for i in range(n_musc):
            st = rod_internal_forces(m_pos[i], m_vel[i], m_q[i], m_om[i],
                                     m_refl, m_vorl, m_area[i], m_imom[i],
                                     m_E, m_G, m_alpha, m_rho,
                                     True, act_sig_eff[i], lam_opt[i], fl_w[i],
                                     fv_vmax[i], fv_curv[i], fv_plat[i],
                                     pas_scale[i], pas_exp[i],
                                     rate_filt[i], rate_blend,
                                     False, anchor_q,
                                     m_fi[i], m_ti[i], m_eps[i], m_kap[i], m_dil[i])
            if st != OK:
                return st, i + 1, s
        # external accumulators
        for i in range(nb + 1):
            bb_fe[i, 0] = gravity[0] * bb_mass[i]
            bb_fe[i, 1] = gravity[1] * bb_mass[i]
            bb_fe[i, 2] = gravity[2] * bb_mass[i]
        for e in range(nb):
            bb_ce[e, 0] = 0.0
            bb_ce[e, 1] = 0.0
            bb_ce[e, 2] = 0.0
        for i in range(n_musc):
            for j in range(nmn):
                m_fe[i, j, 0] = gravity[0] * m_mass[j]
                m_fe[i, j, 1] = gravity[1] * m_mass[j]
                m_fe[i, j, 2] = gravity[2] * m_mass[j]
            for e in range(nmn - 1):
                m_ce[i, e, 0] = 0.0
                m_ce[i, e, 1] = 0.0
                m_ce[i, e, 2] = 0.0
        attachment_loads(bb_pos, bb_vel, bb_q, bb_om, m_pos, m_vel,
                         pin_elem, pin_node, pin_off, k_pin, c_pin,
                         m_fe, bb_fe, bb_ce)
        attachment_loads(bb_pos, bb_vel, bb_q, bb_om, m_pos, m_vel,
                         fas_elem, fas_node, fas_off, k_fas, c_fas,
                         m_fe, bb_fe, bb_ce)
        if do_contact:
            contact_forces(bb_pos, bb_vel, cyl, has_floor, floor_z,
                           k_c, mu, v_reg, bb_fe)
            for i in range(n_musc):
                contact_forces(m_pos[i], m_vel[i], cyl, has_floor, floor_z,
                               k_c, mu, v_reg, m_fe[i])
        rod_finish_substep(bb_pos, bb_vel, bb_q, bb_om, bb_mass, bb_jdiag,
                           bb_gamma, bb_fi, bb_ti, bb_fe, bb_ce, dt,
                           anchored, anchor_pos, anchor_q)
        for i in range(n_musc):
            rod_finish_substep(m_pos[i], m_vel[i], m_q[i], m_om[i],
                               m_mass, m_jdiag, m_gamma,
                               m_fi[i], m_ti[i], m_fe[i], m_ce[i], dt,
                               False, anchor_pos, anchor_q)
        tip_trace[s + 1, 0] = bb_pos[nb, 0]
        tip_trace[s + 1, 1] = bb_pos[nb, 1]
        tip_trace[s + 1, 2] = bb_pos[nb, 2]
        if (s & 63) == 0 or s == n_sub - 1:
            if _has_nan(bb_pos, bb_vel):
                return DIVERGED, 0, s
            for i in range(n_musc):
                if _has_nan(m_pos[i], m_vel[i]):
                    return DIVERGED, i + 1, s
    return OK, 0, n_sub
