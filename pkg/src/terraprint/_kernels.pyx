# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernels; see ``_kernels_py`` for the reference version."""

from libc.math cimport sin, cos, sqrt, fabs, M_PI

cdef double TWO_PI = 2.0 * M_PI

STATE_LEN = 11
PARAMS_LEN = 9
OUT_LEN = 23


cdef inline double _height(double x, double y, double slope_tan, double slope_start,
                           const double[::1] kx, const double[::1] ky,
                           const double[::1] amp, const double[::1] phase) noexcept nogil:
    cdef double h = 0.0
    cdef Py_ssize_t i
    if slope_tan != 0.0 and x >= slope_start:
        h += (x - slope_start) * slope_tan
    for i in range(amp.shape[0]):
        h += amp[i] * sin(TWO_PI * (kx[i] * x + ky[i] * y) + phase[i])
    return h


def terrain_eval(double x, double y, double slope_tan, double slope_start,
                 const double[::1] kx, const double[::1] ky,
                 const double[::1] amp, const double[::1] phase):
    cdef double h = 0.0, gx = 0.0, gy = 0.0, arg, c
    cdef Py_ssize_t i
    if slope_tan != 0.0 and x >= slope_start:
        h += (x - slope_start) * slope_tan
        gx += slope_tan
    for i in range(amp.shape[0]):
        arg = TWO_PI * (kx[i] * x + ky[i] * y) + phase[i]
        h += amp[i] * sin(arg)
        c = amp[i] * cos(arg) * TWO_PI
        gx += c * kx[i]
        gy += c * ky[i]
    return h, gx, gy


def terrain_height(double x, double y, double slope_tan, double slope_start,
                   const double[::1] kx, const double[::1] ky,
                   const double[::1] amp, const double[::1] phase):
    return _height(x, y, slope_tan, slope_start, kx, ky, amp, phase)


cdef inline void _plane_rotation(double b, double c, double psi, double[::1] out,
                                 Py_ssize_t off) noexcept nogil:
    cdef double cp = cos(psi), sp = sin(psi)
    cdef double nx_ = 1.0 / sqrt(1.0 + b * b)
    cdef double ex0 = cp * nx_, ex1 = sp * nx_, ex2 = b * nx_
    cdef double nn = 1.0 / sqrt(1.0 + b * b + c * c)
    cdef double ez0 = (-b * cp + c * sp) * nn
    cdef double ez1 = (-b * sp - c * cp) * nn
    cdef double ez2 = nn
    cdef double ey0 = ez1 * ex2 - ez2 * ex1
    cdef double ey1 = ez2 * ex0 - ez0 * ex2
    cdef double ey2 = ez0 * ex1 - ez1 * ex0
    out[off + 0] = ex0
    out[off + 1] = ey0
    out[off + 2] = ez0
    out[off + 3] = ex1
    out[off + 4] = ey1
    out[off + 5] = ez1
    out[off + 6] = ex2
    out[off + 7] = ey2
    out[off + 8] = ez2


cdef inline double _contact_plane(double x, double y, double psi, double half_l, double half_w,
                                  const double[::1] noise, Py_ssize_t k,
                                  double slope_tan, double slope_start,
                                  const double[::1] kx, const double[::1] ky,
                                  const double[::1] amp, const double[::1] phase,
                                  double* abc) noexcept nogil:
    cdef double cp = cos(psi), sp = sin(psi)
    cdef double su = 0.0, sw = 0.0, suu = 0.0, sww = 0.0, suw = 0.0
    cdef double sz = 0.0, suz = 0.0, swz = 0.0
    cdef double us[4]
    cdef double ws[4]
    cdef double zs[4]
    cdef double u, w, dz, px, py, z
    cdef Py_ssize_t j, base
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
        z = _height(px, py, slope_tan, slope_start, kx, ky, amp, phase) + dz
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
    cdef double m00 = 4.0, m01 = su, m02 = sw, m11 = suu, m12 = suw, m22 = sww
    cdef double c00 = m11 * m22 - m12 * m12
    cdef double c01 = m02 * m12 - m01 * m22
    cdef double c02 = m01 * m12 - m02 * m11
    cdef double det = m00 * c00 + m01 * c01 + m02 * c02
    cdef double a = (sz * c00 + suz * c01 + swz * c02) / det
    cdef double b = (sz * c01 + suz * (m00 * m22 - m02 * m02) + swz * (m01 * m02 - m00 * m12)) / det
    cdef double c = (sz * c02 + suz * (m01 * m02 - m00 * m12) + swz * (m00 * m11 - m01 * m01)) / det
    cdef double res = 0.0, r
    for j in range(4):
        r = fabs(zs[j] - (a + b * us[j] + c * ws[j]))
        if r > res:
            res = r
    abc[0] = a
    abc[1] = b
    abc[2] = c
    return res


def contact_plane(double x, double y, double psi, double half_l, double half_w,
                  const double[::1] noise, Py_ssize_t k, double slope_tan, double slope_start,
                  const double[::1] kx, const double[::1] ky,
                  const double[::1] amp, const double[::1] phase):
    cdef double abc[3]
    cdef double res = _contact_plane(x, y, psi, half_l, half_w, noise, k, slope_tan,
                                     slope_start, kx, ky, amp, phase, abc)
    return abc[0], abc[1], abc[2], res


def advance(double[::1] state, const double[::1] cmd, const double[::1] params,
            Py_ssize_t n_steps, const double[::1] noise, double slope_tan, double slope_start,
            const double[::1] kx, const double[::1] ky, const double[::1] amp,
            const double[::1] phase, double[::1] out):
    cdef double dt = params[0], ac = params[1], aa = params[2]
    cdef double half_l = params[3], half_w = params[4]
    cdef double lim[3]
    lim[0] = params[5]
    lim[1] = params[6]
    lim[2] = params[7]
    cdef double z_off = params[8]
    cdef double x = state[0], y = state[1], psi = state[2], v = state[3], om = state[4]
    cdef double max_res = 0.0, r, av, p
    cdef long clamps = 0
    cdef double abc[3]
    cdef Py_ssize_t k, i
    abc[0] = 0.0
    abc[1] = 0.0
    abc[2] = 0.0
    with nogil:
        for k in range(n_steps):
            v += ac * (cmd[0] - v)
            om += ac * (cmd[1] - om)
            if fabs(om) < 1e-12:
                x += v * cos(psi) * dt
                y += v * sin(psi) * dt
            else:
                x += v / om * (sin(psi + om * dt) - sin(psi))
                y -= v / om * (cos(psi + om * dt) - cos(psi))
            psi += om * dt
            for i in range(3):
                av = state[8 + i]
                av += aa * (cmd[2 + i] - av)
                p = state[5 + i] + av * dt
                if p > lim[i]:
                    p = lim[i]
                    av = 0.0
                    clamps += 1
                elif p < -lim[i]:
                    p = -lim[i]
                    av = 0.0
                    clamps += 1
                state[5 + i] = p
                state[8 + i] = av
            r = _contact_plane(x, y, psi, half_l, half_w, noise, k, slope_tan, slope_start,
                               kx, ky, amp, phase, abc)
            if r > max_res:
                max_res = r
    state[0] = x
    state[1] = y
    state[2] = psi
    state[3] = v
    state[4] = om
    if n_steps == 0:
        _contact_plane(x, y, psi, half_l, half_w, noise, -1, slope_tan, slope_start,
                       kx, ky, amp, phase, abc)
    out[0] = abc[0] + z_off
    _plane_rotation(abc[1], abc[2], psi, out, 1)
    _contact_plane(x, y, psi, half_l, half_w, noise, -1, slope_tan, slope_start,
                   kx, ky, amp, phase, abc)
    out[10] = abc[0] + z_off
    _plane_rotation(abc[1], abc[2], psi, out, 11)
    out[20] = max_res
    out[21] = <double>clamps
    out[22] = <double>n_steps
