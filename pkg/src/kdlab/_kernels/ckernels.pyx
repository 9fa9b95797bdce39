# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled compute kernels.

Twin of ``pykernels.py``: same signatures, same arithmetic order, so that
both backends produce bitwise-identical results (the extension is built
with -ffp-contract=off to keep C evaluation order IEEE-faithful).
"""

from libc.math cimport exp, log

NAME = "c"

cdef double _INF = float("inf")


def matmul(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef Py_ssize_t i, l, j, ia, io, ib
    cdef double av
    for i in range(m):
        ia = i * k
        io = i * n
        for l in range(k):
            av = a[ia + l]
            ib = l * n
            for j in range(n):
                out[io + j] += av * b[ib + j]


def matmul_grad_a(double[::1] g, double[::1] b, double[::1] da, Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef Py_ssize_t i, l, j, ig, ia, ib
    cdef double s
    for i in range(m):
        ig = i * n
        ia = i * k
        for l in range(k):
            ib = l * n
            s = 0.0
            for j in range(n):
                s += g[ig + j] * b[ib + j]
            da[ia + l] += s


def matmul_grad_b(double[::1] a, double[::1] g, double[::1] db, Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef Py_ssize_t i, l, j, ia, ig, ib
    cdef double av
    for i in range(m):
        ia = i * k
        ig = i * n
        for l in range(k):
            av = a[ia + l]
            ib = l * n
            for j in range(n):
                db[ib + j] += av * g[ig + j]


def add_bias(double[::1] x, double[::1] b, double[::1] out, Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t i, j, o
    for i in range(m):
        o = i * n
        for j in range(n):
            out[o + j] = x[o + j] + b[j]


def colsum_acc(double[::1] g, double[::1] db, Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t i, j, o
    for i in range(m):
        o = i * n
        for j in range(n):
            db[j] += g[o + j]


def relu(double[::1] x, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_grad_acc(double[::1] x, double[::1] g, double[::1] dx, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        if x[i] > 0.0:
            dx[i] += g[i]


def log_softmax(double[::1] x, double[::1] out, Py_ssize_t m, Py_ssize_t n):
    """Row-wise log-softmax with max subtraction. Returns 1 on non-finite input."""
    cdef Py_ssize_t i, j, o
    cdef double mx, s, lse, v
    cdef int bad = 0
    for i in range(m):
        o = i * n
        mx = -_INF
        for j in range(n):
            v = x[o + j]
            if v != v or v == _INF or v == -_INF:
                bad = 1
            if v > mx:
                mx = v
        s = 0.0
        for j in range(n):
            s += exp(x[o + j] - mx)
        lse = mx + log(s)
        for j in range(n):
            out[o + j] = x[o + j] - lse
    return bad


def log_softmax_grad_acc(double[::1] y, double[::1] g, double[::1] dx, Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t i, j, o
    cdef double gs
    for i in range(m):
        o = i * n
        gs = 0.0
        for j in range(n):
            gs += g[o + j]
        for j in range(n):
            dx[o + j] += g[o + j] - exp(y[o + j]) * gs
    return None


def exp_v(double[::1] x, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = exp(x[i])


def scale_v(double[::1] x, double s, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = x[i] * s


def axpy(double[::1] dst, double[::1] src, double s, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        dst[i] += s * src[i]


def acc(double[::1] dst, double[::1] src, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        dst[i] += src[i]


def acc_scalar(double[::1] dst, double c, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        dst[i] += c


def add_v(double[::1] x, double[::1] y, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = x[i] + y[i]


def add_scalar_v(double[::1] x, double c, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = x[i] + c


def mul_v(double[::1] x, double[::1] y, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = x[i] * y[i]


def mul_acc(double[::1] dst, double[::1] g, double[::1] y, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        dst[i] += g[i] * y[i]


def vsum(double[::1] x, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += x[i]
    return s


def vdot(double[::1] x, double[::1] w, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += x[i] * w[i]
    return s


def pick_neg_mean(double[::1] logp, long long[::1] labels, Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(m):
        s += logp[i * n + labels[i]]
    return -s / m


def pick_grad_acc(double[::1] dx, long long[::1] labels, double coeff, Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(m):
        dx[i * n + labels[i]] += coeff


def sgd_update(double[::1] p, double[::1] g, double[::1] v, double lr, double momentum, double wd, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double gi, vi
    for i in range(n):
        gi = g[i] + wd * p[i]
        vi = momentum * v[i] + gi
        v[i] = vi
        p[i] = p[i] - lr * vi


def argmax_rows(double[::1] x, long long[::1] out, Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t i, j, o, arg
    cdef double best
    for i in range(m):
        o = i * n
        best = x[o]
        arg = 0
        for j in range(1, n):
            if x[o + j] > best:
                best = x[o + j]
                arg = j
        out[i] = arg
