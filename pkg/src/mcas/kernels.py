"""Backend selection for the hot numeric kernels.

The compiled extension is preferred when present; MCAS_PURE_PYTHON=1
forces the NumPy fallback. Both backends expose the same functions with
the same tie-break rules, so everything downstream is backend-agnostic.
"""

import os

if os.environ.get("MCAS_PURE_PYTHON") == "1":
    from . import _core_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _core_c as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _core_py as _impl

        BACKEND = "python"

belief_update = _impl.belief_update
predicted_belief = _impl.predicted_belief
obs_likelihoods = _impl.obs_likelihoods
best_alpha = _impl.best_alpha
l1_nearest = _impl.l1_nearest
l1_closest_pair = _impl.l1_closest_pair
conflate_rows = _impl.conflate_rows
