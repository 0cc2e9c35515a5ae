"""Backend selection for the simulation kernel.

Prefers the compiled extension; falls back to the numpy implementation
when the extension is absent or when NEUROFLOW_PURE_PYTHON=1 is set.
`BACKEND` names the active implementation ("cython" or "python").
"""

from __future__ import annotations

import os

if os.environ.get("NEUROFLOW_PURE_PYTHON", "") == "1":
    from . import _simcore_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _simcore as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _simcore_py as _impl

        BACKEND = "python"

simulate_steps = _impl.simulate_steps
