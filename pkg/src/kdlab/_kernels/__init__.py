"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the pure-Python
twin is the fallback. Set ``KDLAB_PURE_PYTHON=1`` to force the fallback (used
by the benchmark and the backend-parity tests).
"""

import os

if os.environ.get("KDLAB_PURE_PYTHON") == "1":
    from kdlab._kernels import pykernels as _impl
else:
    try:
        from kdlab._kernels import ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from kdlab._kernels import pykernels as _impl

BACKEND = _impl.NAME

matmul = _impl.matmul
matmul_grad_a = _impl.matmul_grad_a
matmul_grad_b = _impl.matmul_grad_b
add_bias = _impl.add_bias
colsum_acc = _impl.colsum_acc
relu = _impl.relu
relu_grad_acc = _impl.relu_grad_acc
log_softmax = _impl.log_softmax
log_softmax_grad_acc = _impl.log_softmax_grad_acc
exp_v = _impl.exp_v
scale_v = _impl.scale_v
axpy = _impl.axpy
acc = _impl.acc
acc_scalar = _impl.acc_scalar
add_v = _impl.add_v
add_scalar_v = _impl.add_scalar_v
mul_v = _impl.mul_v
mul_acc = _impl.mul_acc
vsum = _impl.vsum
vdot = _impl.vdot
pick_neg_mean = _impl.pick_neg_mean
pick_grad_acc = _impl.pick_grad_acc
sgd_update = _impl.sgd_update
argmax_rows = _impl.argmax_rows
