# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in `pure`.

Same signatures, same float64 contracts. The module is built with
-ffast-math so gcc can route sin/cos/exp through libmvec's vector
variants; that flag assumes no infs or nans, so every formulation here
is chosen to keep finite inputs finite (see the sigmoid split). Callers
are responsible for not feeding non-finite values; the trainer checks
loss finiteness before any parameter update.

Note for embedders: with toolchains older than gcc 13 a shared object
built with -ffast-math enables flush-to-zero for the whole process on
load. Nothing in the training loop carries signal in denormals, but it
is a global side effect.
"""
import numpy as np

from libc.math cimport cos, exp, fabs, ldexp, pow, sin, sqrt

NAME = "fast"

cdef double PI = 3.141592653589793


cdef inline object _c64(object a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sine_fwd(x, double omega=1.0):
    xa = _c64(x)
    out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    if omega == 1.0:
        for i in range(n):
            ov[i] = sin(xv[i])
    else:
        for i in range(n):
            ov[i] = sin(omega * xv[i])
    return out


def sine_bwd(x, double omega, grad_out):
    xa = _c64(x)
    ga = _c64(grad_out)
    out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    if gv.shape[0] != n:
        raise ValueError("sine_bwd: grad_out shape differs from x")
    if omega == 1.0:
        for i in range(n):
            ov[i] = cos(xv[i]) * gv[i]
    else:
        for i in range(n):
            ov[i] = (omega * cos(omega * xv[i])) * gv[i]
    return out


def sigmoid_fwd(x):
    # exp(-|x|) <= 1 keeps the fast-math no-inf assumption honest even
    # for inputs far outside the overflow threshold of exp.
    xa = _c64(x)
    out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double t
    for i in range(n):
        t = exp(-fabs(xv[i]))
        if xv[i] >= 0.0:
            ov[i] = 1.0 / (1.0 + t)
        else:
            ov[i] = t / (1.0 + t)
    return out


def sigmoid_bwd(y, grad_out):
    ya = _c64(y)
    ga = _c64(grad_out)
    out = np.empty_like(ya)
    cdef double[::1] yv = ya.ravel()
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = yv.shape[0]
    if gv.shape[0] != n:
        raise ValueError("sigmoid_bwd: grad_out shape differs from y")
    for i in range(n):
        ov[i] = yv[i] * (1.0 - yv[i]) * gv[i]
    return out


def fourier_fwd(p, int num_bands):
    pa = _c64(p)
    if pa.ndim != 2:
        raise ValueError("fourier_fwd: expected (n, d) points")
    cdef Py_ssize_t n = pa.shape[0], d = pa.shape[1]
    out = np.empty((n, 2 * num_bands * d))
    cdef double[:, ::1] pv = pa
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, k, base
    cdef double f, ph
    for i in range(n):
        for k in range(num_bands):
            f = ldexp(1.0, k) * PI
            base = 2 * k * d
            for j in range(d):
                ph = f * pv[i, j]
                ov[i, base + j] = sin(ph)
                ov[i, base + d + j] = cos(ph)
    return out


def fourier_bwd(p, int num_bands, grad_out):
    pa = _c64(p)
    ga = _c64(grad_out)
    if pa.ndim != 2:
        raise ValueError("fourier_bwd: expected (n, d) points")
    cdef Py_ssize_t n = pa.shape[0], d = pa.shape[1]
    if ga.shape[0] != n or ga.shape[1] != 2 * num_bands * d:
        raise ValueError("fourier_bwd: grad_out shape differs from encoding")
    dp = np.zeros((n, d))
    cdef double[:, ::1] pv = pa
    cdef double[:, ::1] gv = ga
    cdef double[:, ::1] dv = dp
    cdef Py_ssize_t i, j, k, base
    cdef double f, ph
    for i in range(n):
        for k in range(num_bands):
            f = ldexp(1.0, k) * PI
            base = 2 * k * d
            for j in range(d):
                ph = f * pv[i, j]
                dv[i, j] += f * (cos(ph) * gv[i, base + j]
                                 - sin(ph) * gv[i, base + d + j])
    return dp


def adam_update(param, grad, m, v, int step, double lr,
                double beta1, double beta2, double eps):
    """One bias-corrected Adam update, in place on param, m and v."""
    for name, a in (("param", param), ("m", m), ("v", v)):
        if not a.flags.c_contiguous:
            raise ValueError(f"adam_update: {name} must be C-contiguous")
    ga = _c64(grad)
    cdef double[::1] pv = param.ravel()
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] mv = m.ravel()
    cdef double[::1] vv = v.ravel()
    cdef Py_ssize_t i, n = pv.shape[0]
    if gv.shape[0] != n or mv.shape[0] != n or vv.shape[0] != n:
        raise ValueError("adam_update: array sizes disagree")
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    cdef double g
    for i in range(n):
        g = gv[i]
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * g
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * g * g
        pv[i] -= lr * (mv[i] / bc1) / (sqrt(vv[i] / bc2) + eps)
