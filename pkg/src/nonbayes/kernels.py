"""Backend selection for the trial kernel.

The compiled extension is preferred when it imported cleanly; the pure-numpy
twin is the fallback. Set NONBAYES_PURE_PYTHON=1 to force the fallback (used
by the benchmark and for debugging). Both backends share draw sequences
bit-for-bit; their belief trajectories agree to within accumulated rounding
(see tests/test_kernels.py and benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import os

from . import _kernel_py

_force_py = os.environ.get("NONBAYES_PURE_PYTHON", "").strip() not in ("", "0")

if _force_py:
    _impl = _kernel_py
    BACKEND = "python"
else:
    try:
        from . import _kernel as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernel_py
        BACKEND = "python"

evolve_trial = _impl.evolve_trial
KernelError = _kernel_py.KernelError


def backend() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return BACKEND
