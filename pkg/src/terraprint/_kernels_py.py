"""Pure-Python fallback for the hot simulation kernels.

Scalar ``math`` code that mirrors ``_kernels.pyx`` statement for statement so
both backends produce the same floating-point results.
"""

import math

TWO_PI = 2.0 * math.pi

# state vector layout
SX, SY, SPSI, SV, SW, SAX, SAY, SAZ, SAVX, SAVY, SAVZ = range(11)
STATE_LEN = 11
# params layout
P_DT, P_ALPHA_C, P_ALPHA_A, P_HALF_L, P_HALF_W, P_LIM_X, P_LIM_Y, P_LIM_Z, P_Z_OFFSET = range(9)
PARAMS_LEN = 9
OUT_LEN = 23  # z, R(9), z_nom, R_nom(9), max residual, arm clamp count, steps


def terrain_eval(x, y, slope_tan, slope_start, kx, ky, amp, phase):
    """Height and gradient of the procedural field at (x, y)."""
    h = 0.0
    gx = 0.0
    gy = 0.0
    if slope_tan != 0.0 and x >= slope_start:
        h += (x - slope_start) * slope_tan
        gx += slope_tan
    for i in range(len(amp)):
        arg = TWO_PI * (kx[i] * x + ky[i] * y) + phase[i]
        h += amp[i] * math.sin(arg)
        c = amp[i] * math.cos(arg) * TWO_PI
        gx += c * kx[i]
        gy += c * ky[i]
    return h, gx, gy


def terrain_height(x, y, slope_tan, slope_start, kx, ky, amp, phase):
    h = 0.0
    if slope_tan != 0.0 and x >= slope_start:
        h += (x - slope_start) * slope_tan
    for i in range(len(amp)):
        h += amp[i] * math.sin(TWO_PI * (kx[i] * x + ky[i] * y) + phase[i])
    return h


def _plane_rotation(b, c, psi, out, off):
    # chassis x-axis along heading on the contact plane, z-axis = plane normal
    cp = math.cos(psi)
    sp = math.sin(psi)
    nx_ = 1.0 / math.sqrt(1.0 + b * b)
    ex0 = cp * nx_
    ex1 = sp * nx_
    ex2 = b * nx_
    nn = 1.0 / math.sqrt(1.0 + b * b + c * c)
    ez0 = (-b * cp + c * sp) * nn
    ez1 = (-b * sp - c * cp) * nn
    ez2 = nn
    ey0 = ez1 * ex2 - ez2 * ex1
    ey1 = ez2 * ex0 - ez0 * ex2
    ey2 = ez0 * ex1 - ez1 * ex0
    out[off + 0] = ex0
    out[off + 1] = ey0
    out[off + 2] = ez0
    out[off + 3] = ex1
    out[off + 4] = ey1
    out[off + 5] = ez1
    out[off + 6] = ex2
    out[off + 7] = ey2
    out[off + 8] = ez2


def contact_plane(x, y, psi, half_l, half_w, noise, k, slope_tan, slope_start, kx, ky, amp, phase):
    """Least-squares plane z = a + b*u + c*w through the four wheel contacts.

    ``noise`` is a flat buffer of per-step (4 wheels x 3) contact displacements
    in the heading frame (u forward, w left, z up); ``k`` selects the step, a
    negative ``k`` means noise-free. Returns (a, b, c, max residual).
    """
    cp = math.cos(psi)
    sp = math.sin(psi)
    su = 0.0
    sw = 0.0
    suu = 0.0
    sww = 0.0
    suw = 0.0
    sz = 0.0
    suz = 0.0
    swz = 0.0
    us = [0.0, 0.0, 0.0, 0.0]
    ws = [0.0, 0.0, 0.0, 0.0]
    zs = [0.0, 0.0, 0.0, 0.0]
    for j in range(4):
        u = half_l if j < 2 else -half_l
        w = half_w if (j % 2) == 0 else -half_w
        dz = 0.0
        if k >= 0:
            base = (k * 4 + j) * 3
            u += noise[base]
            w += noise[base + 1]
            dz = noise[base + 2]
        px = x + u * cp - w * sp
        py = y + u * sp + w * cp
        z = terrain_height(px, py, slope_tan, slope_start, kx, ky, amp, phase) + dz
        us[j] = u
        ws[j] = w
        zs[j] = z
        su += u
        sw += w
        suu += u * u
        sww += w * w
        suw += u * w
        sz += z
        suz += u * z
        swz += w * z
    # Cramer's rule on the 3x3 normal equations
    m00 = 4.0
    m01 = su
    m02 = sw
    m11 = suu
    m12 = suw
    m22 = sww
    c00 = m11 * m22 - m12 * m12
    c01 = m02 * m12 - m01 * m22
    c02 = m01 * m12 - m02 * m11
    det = m00 * c00 + m01 * c01 + m02 * c02
    a = (sz * c00 + suz * c01 + swz * c02) / det
    b = (sz * c01 + suz * (m00 * m22 - m02 * m02) + swz * (m01 * m02 - m00 * m12)) / det
    c = (sz * c02 + suz * (m01 * m02 - m00 * m12) + swz * (m00 * m11 - m01 * m01)) / det
    res = 0.0
    for j in range(4):
        r = abs(zs[j] - (a + b * us[j] + c * ws[j]))
        if r > res:
            res = r
    return a, b, c, res


def advance(state, cmd, params, n_steps, noise, slope_tan, slope_start, kx, ky, amp, phase, out):
    """Advance the kinematic plant ``n_steps`` fixed steps under a held command.

    ``state`` is updated in place. ``out`` receives the noisy and noise-free
    chassis poses after the last step plus per-batch diagnostics.
    """
    dt = params[P_DT]
    ac = params[P_ALPHA_C]
    aa = params[P_ALPHA_A]
    half_l = params[P_HALF_L]
    half_w = params[P_HALF_W]
    lim = (params[P_LIM_X], params[P_LIM_Y], params[P_LIM_Z])
    z_off = params[P_Z_OFFSET]
    x = state[SX]
    y = state[SY]
    psi = state[SPSI]
    v = state[SV]
    om = state[SW]
    max_res = 0.0
    clamps = 0
    a = 0.0
    b = 0.0
    c = 0.0
    for k in range(n_steps):
        v += ac * (cmd[0] - v)
        om += ac * (cmd[1] - om)
        if abs(om) < 1e-12:
            x += v * math.cos(psi) * dt
            y += v * math.sin(psi) * dt
        else:
            x += v / om * (math.sin(psi + om * dt) - math.sin(psi))
            y -= v / om * (math.cos(psi + om * dt) - math.cos(psi))
        psi += om * dt
        for i in range(3):
            av = state[SAVX + i]
            av += aa * (cmd[2 + i] - av)
            p = state[SAX + i] + av * dt
            if p > lim[i]:
                p = lim[i]
                av = 0.0
                clamps += 1
            elif p < -lim[i]:
                p = -lim[i]
                av = 0.0
                clamps += 1
            state[SAX + i] = p
            state[SAVX + i] = av
        a, b, c, r = contact_plane(x, y, psi, half_l, half_w, noise, k,
                                   slope_tan, slope_start, kx, ky, amp, phase)
        if r > max_res:
            max_res = r
    state[SX] = x
    state[SY] = y
    state[SPSI] = psi
    state[SV] = v
    state[SW] = om
    if n_steps == 0:
        a, b, c, r = contact_plane(x, y, psi, half_l, half_w, noise, -1,
                                   slope_tan, slope_start, kx, ky, amp, phase)
    out[0] = a + z_off
    _plane_rotation(b, c, psi, out, 1)
    a0, b0, c0, _ = contact_plane(x, y, psi, half_l, half_w, noise, -1,
                                  slope_tan, slope_start, kx, ky, amp, phase)
    out[10] = a0 + z_off
    _plane_rotation(b0, c0, psi, out, 11)
    out[20] = max_res
    out[21] = float(clamps)
    out[22] = float(n_steps)
