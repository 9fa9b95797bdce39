"""Pure-Python compute kernels.

Reference backend for the compiled core in ``ckernels.pyx``. Both backends
take flat row-major buffers (``array('d')`` for reals, ``array('q')`` for
indices) and must perform arithmetic in the same order so results agree
bitwise. Accumulating kernels add into their destination buffer; callers
pass freshly zeroed output buffers to the non-accumulating ones.
"""

from math import exp as _exp
from math import log as _log

NAME = "python"

_INF = float("inf")


def matmul(a, b, out, m, k, n):
    # out += a[m,k] . b[k,n]
    for i in range(m):
        ia = i * k
        io = i * n
        for l in range(k):
            av = a[ia + l]
            ib = l * n
            for j in range(n):
                out[io + j] += av * b[ib + j]


def matmul_grad_a(g, b, da, m, k, n):
    # da[m,k] += g[m,n] . b[k,n]^T
    for i in range(m):
        ig = i * n
        ia = i * k
        for l in range(k):
            ib = l * n
            s = 0.0
            for j in range(n):
                s += g[ig + j] * b[ib + j]
            da[ia + l] += s


def matmul_grad_b(a, g, db, m, k, n):
    # db[k,n] += a[m,k]^T . g[m,n]
    for i in range(m):
        ia = i * k
        ig = i * n
        for l in range(k):
            av = a[ia + l]
            ib = l * n
            for j in range(n):
                db[ib + j] += av * g[ig + j]


def add_bias(x, b, out, m, n):
    for i in range(m):
        o = i * n
        for j in range(n):
            out[o + j] = x[o + j] + b[j]


def colsum_acc(g, db, m, n):
    for i in range(m):
        o = i * n
        for j in range(n):
            db[j] += g[o + j]


def relu(x, out, n):
    for i in range(n):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_grad_acc(x, g, dx, n):
    for i in range(n):
        if x[i] > 0.0:
            dx[i] += g[i]


def log_softmax(x, out, m, n):
    """Row-wise log-softmax with max subtraction. Returns 1 on non-finite input."""
    bad = 0
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
            s += _exp(x[o + j] - mx)
        lse = mx + _log(s)
        for j in range(n):
            out[o + j] = x[o + j] - lse
    return bad


def log_softmax_grad_acc(y, g, dx, m, n):
    # dx += g - exp(y) * rowsum(g)
    for i in range(m):
        o = i * n
        gs = 0.0
        for j in range(n):
            gs += g[o + j]
        for j in range(n):
            dx[o + j] += g[o + j] - _exp(y[o + j]) * gs
    return None


def exp_v(x, out, n):
    for i in range(n):
        out[i] = _exp(x[i])


def scale_v(x, s, out, n):
    for i in range(n):
        out[i] = x[i] * s


def axpy(dst, src, s, n):
    # dst += s * src
    for i in range(n):
        dst[i] += s * src[i]


def acc(dst, src, n):
    for i in range(n):
        dst[i] += src[i]


def acc_scalar(dst, c, n):
    for i in range(n):
        dst[i] += c


def add_v(x, y, out, n):
    for i in range(n):
        out[i] = x[i] + y[i]


def add_scalar_v(x, c, out, n):
    for i in range(n):
        out[i] = x[i] + c


def mul_v(x, y, out, n):
    for i in range(n):
        out[i] = x[i] * y[i]


def mul_acc(dst, g, y, n):
    # dst += g * y
    for i in range(n):
        dst[i] += g[i] * y[i]


def vsum(x, n):
    s = 0.0
    for i in range(n):
        s += x[i]
    return s


def vdot(x, w, n):
    s = 0.0
    for i in range(n):
        s += x[i] * w[i]
    return s


def pick_neg_mean(logp, labels, m, n):
    s = 0.0
    for i in range(m):
        s += logp[i * n + labels[i]]
    return -s / m


def pick_grad_acc(dx, labels, coeff, m, n):
    for i in range(m):
        dx[i * n + labels[i]] += coeff


def sgd_update(p, g, v, lr, momentum, wd, n):
    # g' = g + wd*p; v = momentum*v + g'; p -= lr*v
    for i in range(n):
        gi = g[i] + wd * p[i]
        vi = momentum * v[i] + gi
        v[i] = vi
        p[i] = p[i] - lr * vi


def argmax_rows(x, out, m, n):
    # first maximum wins, so ties resolve to the lowest index
    for i in range(m):
        o = i * n
        best = x[o]
        arg = 0
        for j in range(1, n):
            if x[o + j] > best:
                best = x[o + j]
                arg = j
        out[i] = arg
