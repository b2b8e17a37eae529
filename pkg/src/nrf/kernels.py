"""Backend selection for the hot loops.

The compiled extension ``nrf._kernels`` is used when it imports; otherwise,
or when the environment variable ``NRF_PURE_PYTHON`` is set to a non-empty
value, the numpy implementations in ``nrf._kernels_py`` are used. Both give
bitwise-identical results, except the masked products, which agree up to
summation order.
"""
import os

from . import _kernels_py

if os.environ.get("NRF_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

split_gains = _impl.split_gains
route = _impl.route
adam_update = _impl.adam_update
adam_update_indexed = _impl.adam_update_indexed
masked_matmul = _impl.masked_matmul
masked_matmul_t = _impl.masked_matmul_t
masked_outer = _impl.masked_outer
