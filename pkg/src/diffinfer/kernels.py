"""Backend selection for the hot loops.

The compiled module is used when it imports; ``DIFFINFER_BACKEND=python``
forces the numpy reference implementation.
"""
import os

from . import _pykernels

if os.environ.get("DIFFINFER_BACKEND", "").lower() == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND
forward = _impl.forward
loss_and_grad = _impl.loss_and_grad
adam_update = _impl.adam_update
train_epoch = _impl.train_epoch
em_integrate = _impl.em_integrate
